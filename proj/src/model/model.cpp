#include "ditsinger/model.hpp"

#include "ditsinger/binary_io.hpp"
#include "ditsinger/errors.hpp"

#include <cmath>
#include <numeric>

namespace ditsinger {

void ModelConfig::validate() const {
  DS_REQUIRE(depth >= 1 && width >= 2 && heads >= 1, "model config: depth, width and heads must be positive");
  DS_REQUIRE(width % heads == 0, "model config: width must be divisible by heads");
  DS_REQUIRE(head_dim() % 2 == 0, "model config: head dimension must be even for RoPE");
  DS_REQUIRE(downsample_factor == 1 || downsample_factor == 2 || downsample_factor == 4,
             "model config: downsample_factor must be 1, 2 or 4");
  DS_REQUIRE(ffn_multiplier > 0.0 && encoder_layers >= 0, "model config: bad ffn multiplier or encoder depth");
  DS_REQUIRE(phoneme_vocab >= 4 && speaker_count >= 1, "model config: vocabulary too small");
  DS_REQUIRE(pitch_vocab == kPitchVocab && duration_buckets == kDurationBuckets, "model config: fixed vocabularies changed");
  DS_REQUIRE(mel_bins >= 4 && mel_bins % 2 == 0 && hop > 0 && sample_rate > 0, "model config: bad mel geometry");
  DS_REQUIRE(align_delta >= 0.0, "model config: align_delta must be non-negative");
}

ModelConfig model_preset(std::string_view name) {
  std::string base(name);
  int factor = 1;
  if (const auto us = base.rfind('_'); us != std::string::npos && us + 1 < base.size() &&
                                       std::isdigit(static_cast<unsigned char>(base[us + 1]))) {
    factor = std::stoi(base.substr(us + 1));
    base = base.substr(0, us);
  }
  ModelConfig c;
  if (base == "tiny") {
    c.depth = 2, c.width = 32, c.heads = 4;
  } else if (base == "small_toy" || base == "small-toy") {
    c.depth = 4, c.width = 64, c.heads = 4;
    base = "small_toy";
  } else if (base == "small" || base == "base" || base == "large") {
    c.mel_bins = 80, c.hop = 128, c.sample_rate = 24000;
    c.phoneme_vocab = 64;
    if (base == "small") c.depth = 4, c.width = 384, c.heads = 6;
    if (base == "base") c.depth = 8, c.width = 576, c.heads = 9;
    if (base == "large") c.depth = 16, c.width = 768, c.heads = 12;
  } else {
    throw ContractViolation("unknown model preset '" + std::string(name) + "'");
  }
  c.downsample_factor = factor;
  c.name = factor == 1 ? base : base + "_" + std::to_string(factor);
  c.validate();
  return c;
}

std::vector<std::string> model_preset_names() {
  return {"tiny", "tiny_2", "small_toy", "small", "small_2", "small_4", "base", "base_2", "base_4", "large", "large_2", "large_4"};
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"name", c.name},
          {"depth", c.depth},
          {"width", c.width},
          {"heads", c.heads},
          {"ffn_multiplier", c.ffn_multiplier},
          {"downsample_factor", c.downsample_factor},
          {"encoder_layers", c.encoder_layers},
          {"phoneme_vocab", c.phoneme_vocab},
          {"pitch_vocab", c.pitch_vocab},
          {"duration_buckets", c.duration_buckets},
          {"speaker_count", c.speaker_count},
          {"mel_bins", c.mel_bins},
          {"hop", c.hop},
          {"sample_rate", c.sample_rate},
          {"align_delta", c.align_delta},
          {"use_alignment_mask", c.use_alignment_mask},
          {"cross_attention_rope", c.cross_attention_rope},
          {"attention_temperature", c.attention_temperature}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c = j.contains("preset") ? model_preset(j.at("preset").get<std::string>()) : ModelConfig{};
  c.name = j.value("name", c.name);
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.downsample_factor = j.value("downsample_factor", c.downsample_factor);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.phoneme_vocab = j.value("phoneme_vocab", c.phoneme_vocab);
  c.pitch_vocab = j.value("pitch_vocab", c.pitch_vocab);
  c.duration_buckets = j.value("duration_buckets", c.duration_buckets);
  c.speaker_count = j.value("speaker_count", c.speaker_count);
  c.mel_bins = j.value("mel_bins", c.mel_bins);
  c.hop = j.value("hop", c.hop);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.align_delta = j.value("align_delta", c.align_delta);
  c.use_alignment_mask = j.value("use_alignment_mask", c.use_alignment_mask);
  c.cross_attention_rope = j.value("cross_attention_rope", c.cross_attention_rope);
  c.attention_temperature = j.value("attention_temperature", c.attention_temperature);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ParameterSet

Var& ParameterSet::add(const std::string& name, Tensor2 init) {
  DS_REQUIRE(!contains(name), "duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, Var(std::move(init), true));
  return entries_.back().second;
}

Var& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return entries_[it->second].second;
}

const Var& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return entries_[it->second].second;
}

std::vector<Var> ParameterSet::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.push_back(v);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

void round_parameters_to_float(ParameterSet& params) {
  for (auto& [name, v] : params.entries()) {
    Tensor2& t = v.mutable_value();
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
  }
}

// ---------------------------------------------------------------------------
// Model

namespace {

Tensor2 normal_init(Rng& rng, Index rows, Index cols, double stddev) { return seeded_gaussian(rng, rows, cols) * stddev; }

Tensor2 fan_in_init(Rng& rng, Index rows, Index cols) {
  return normal_init(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
}

std::string block_prefix(int b) { return "blocks." + std::to_string(b) + "."; }

std::vector<double> iota_positions(Index n) {
  std::vector<double> pos(static_cast<std::size_t>(n));
  std::iota(pos.begin(), pos.end(), 0.0);
  return pos;
}

}  // namespace

Tensor2 timestep_features(double t, int width) {
  const int half = width / 2;
  Tensor2 out = Tensor2::Zero(1, width);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    out(0, k) = std::cos(t * freq);
    out(0, half + k) = std::sin(t * freq);
  }
  return out;
}

DiTSinger::DiTSinger(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const Index d = config_.width;
  const Index f = config_.ffn_width();
  auto add_attention = [&](const std::string& p, bool self) {
    params_.add(p + "wq", fan_in_init(rng, d, d));
    params_.add(p + "wk", fan_in_init(rng, d, d));
    params_.add(p + "wv", fan_in_init(rng, d, d));
    params_.add(p + "wo", fan_in_init(rng, d, d));
    params_.add(p + "temp", Tensor2::Constant(1, config_.heads, config_.attention_temperature));
    (void)self;
  };
  auto add_ffn = [&](const std::string& p) {
    params_.add(p + "w1", fan_in_init(rng, d, f));
    params_.add(p + "b1", Tensor2::Zero(1, f));
    params_.add(p + "w2", fan_in_init(rng, f, d));
    params_.add(p + "b2", Tensor2::Zero(1, d));
  };

  params_.add("tok.w", fan_in_init(rng, config_.patch_size(), d));
  params_.add("tok.b", Tensor2::Zero(1, d));
  params_.add("time.w1", fan_in_init(rng, d, d));
  params_.add("time.b1", Tensor2::Zero(1, d));
  params_.add("time.w2", fan_in_init(rng, d, d));
  params_.add("time.b2", Tensor2::Zero(1, d));
  params_.add("speaker.table", normal_init(rng, config_.speaker_count, d, 0.1));
  params_.add("emb.pitch", normal_init(rng, config_.pitch_vocab, d, 0.1));
  params_.add("emb.phoneme", normal_init(rng, config_.phoneme_vocab, d, 0.1));
  params_.add("emb.duration", normal_init(rng, config_.duration_buckets, d, 0.1));
  params_.add("emb.slur", normal_init(rng, 2, d, 0.1));
  params_.add("emb.silence", normal_init(rng, 1, d, 0.1));
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    add_attention(p + "attn.", true);
    add_ffn(p + "ffn.");
  }
  params_.add("null_cond", normal_init(rng, 1, d, 0.1));
  for (int b = 0; b < config_.depth; ++b) {
    const std::string p = block_prefix(b);
    params_.add(p + "ada.w", Tensor2::Zero(d, 9 * d));
    params_.add(p + "ada.b", Tensor2::Zero(1, 9 * d));
    add_attention(p + "sa.", true);
    add_attention(p + "ca.", false);
    add_ffn(p + "ffn.");
  }
  params_.add("final.ada.w", Tensor2::Zero(d, 2 * d));
  params_.add("final.ada.b", Tensor2::Zero(1, 2 * d));
  params_.add("head.w", Tensor2::Zero(d, config_.patch_size()));
  params_.add("head.b", Tensor2::Zero(1, config_.patch_size()));
  round_parameters_to_float(params_);
}

void DiTSinger::check_score(const ScoreSequence& score) const {
  validate_score(score, config_.phoneme_vocab);
  DS_REQUIRE(score.speaker_id < config_.speaker_count, "score speaker id " + std::to_string(score.speaker_id) +
                                                           " exceeds model speaker table of " +
                                                           std::to_string(config_.speaker_count));
}

Var DiTSinger::embed_tokens(const ScoreSequence& score) const {
  std::vector<int> pitch, phone, dur, slur;
  for (const auto& t : score.tokens) {
    if (t.phoneme_id < 0 || t.phoneme_id >= config_.phoneme_vocab) {
      throw ContractViolation("phoneme id " + std::to_string(t.phoneme_id) + " outside vocabulary");
    }
    pitch.push_back(t.pitch);
    phone.push_back(t.phoneme_id);
    dur.push_back(t.word_duration_bucket);
    slur.push_back(t.slur ? 1 : 0);
  }
  const Var& silence = params_.at("emb.silence");
  if (score.tokens.empty()) return ag::concat_rows({silence});
  Var sum = ag::add(ag::add(ag::gather_rows(params_.at("emb.pitch"), pitch), ag::gather_rows(params_.at("emb.phoneme"), phone)),
                    ag::add(ag::gather_rows(params_.at("emb.duration"), dur), ag::gather_rows(params_.at("emb.slur"), slur)));
  return ag::concat_rows({sum, silence});
}

Var DiTSinger::self_attention(const std::string& p, const Var& h, std::span<const double> positions) const {
  const int heads = config_.heads;
  Var q = ag::matmul(h, params_.at(p + "wq"));
  Var k = ag::matmul(h, params_.at(p + "wk"));
  Var v = ag::matmul(h, params_.at(p + "wv"));
  q = ag::scale_heads(ag::l2_normalize_heads(q, heads), params_.at(p + "temp"), heads);
  k = ag::l2_normalize_heads(k, heads);
  q = ag::rope(q, positions, heads);
  k = ag::rope(k, positions, heads);
  const Tensor2 no_bias = Tensor2::Zero(h.rows(), h.rows());
  return ag::matmul(ag::attention(q, k, v, no_bias, heads, 1.0), params_.at(p + "wo"));
}

Var DiTSinger::feed_forward(const std::string& p, const Var& h) const {
  Var hidden = ag::gelu(ag::add_row(ag::matmul(h, params_.at(p + "w1")), params_.at(p + "b1")));
  return ag::add_row(ag::matmul(hidden, params_.at(p + "w2")), params_.at(p + "b2"));
}

Var DiTSinger::encode_conditions(const ScoreSequence& score) const {
  for (const auto& t : score.tokens) {
    DS_REQUIRE(t.pitch >= 0 && t.pitch < config_.pitch_vocab, "pitch outside vocabulary");
    DS_REQUIRE(t.word_duration_bucket >= 0 && t.word_duration_bucket < config_.duration_buckets, "duration bucket outside vocabulary");
  }
  Var x = embed_tokens(score);
  const auto positions = iota_positions(x.rows());
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    x = ag::add(x, self_attention(p + "attn.", ag::layer_norm(x), positions));
    x = ag::add(x, feed_forward(p + "ffn.", ag::layer_norm(x)));
  }
  return ag::layer_norm(x);
}

Var DiTSinger::tokenize(const Var& mel) const {
  const int f = config_.downsample_factor;
  DS_REQUIRE(mel.cols() == config_.mel_bins, "tokenize: mel has " + std::to_string(mel.cols()) + " bins, model expects " +
                                                 std::to_string(config_.mel_bins));
  DS_REQUIRE(mel.rows() >= f, "tokenize: fewer frames than the downsample factor");
  const Index lat = config_.latent_frames(mel.rows());
  Var padded = mel;
  if (lat * f != mel.rows()) {
    padded = ag::concat_rows({mel, ag::constant(Tensor2::Zero(lat * f - mel.rows(), mel.cols()))});
  }
  Var patches = ag::reshape(padded, lat, config_.patch_size());
  return ag::add_row(ag::matmul(patches, params_.at("tok.w")), params_.at("tok.b"));
}

Var DiTSinger::detokenize(const Var& tokens, Index frames) const {
  const int f = config_.downsample_factor;
  Var patches = ag::add_row(ag::matmul(tokens, params_.at("head.w")), params_.at("head.b"));
  Var mel = ag::reshape(patches, tokens.rows() * f, config_.mel_bins);
  DS_REQUIRE(frames <= mel.rows(), "detokenize: requested more frames than tokens cover");
  return frames == mel.rows() ? mel : ag::slice_rows(mel, 0, frames);
}

Var DiTSinger::coarse_embedding(double t, int speaker_id) const {
  Var feats = ag::constant(timestep_features(t, config_.width));
  Var h = ag::silu(ag::add_row(ag::matmul(feats, params_.at("time.w1")), params_.at("time.b1")));
  Var temb = ag::add_row(ag::matmul(h, params_.at("time.w2")), params_.at("time.b2"));
  const int id = speaker_id;
  return ag::add(temb, ag::gather_rows(params_.at("speaker.table"), std::span<const int>(&id, 1)));
}

AdaLnParams DiTSinger::adaln(int block, const Var& coarse) const {
  const std::string p = block_prefix(block);
  Var mod = ag::add_row(ag::matmul(ag::silu(coarse), params_.at(p + "ada.w")), params_.at(p + "ada.b"));
  const Index d = config_.width;
  AdaLnParams out;
  for (int i = 0; i < 3; ++i) {
    out.gamma[i] = ag::slice_cols(mod, (3 * i) * d, d);
    out.beta[i] = ag::slice_cols(mod, (3 * i + 1) * d, d);
    out.alpha[i] = ag::slice_cols(mod, (3 * i + 2) * d, d);
  }
  return out;
}

Var DiTSinger::dit_block(int block, const Var& x, const ConditionBundle& cond, const AdaLnParams& mod) const {
  const std::string p = block_prefix(block);
  const int heads = config_.heads;
  const auto positions = iota_positions(x.rows());

  // Self-attention with RoPE and QK-Norm.
  Var h = ag::modulate(ag::layer_norm(x), mod.gamma[0], mod.beta[0]);
  Var x1 = ag::add(x, ag::mul_row(self_attention(p + "sa.", h, positions), mod.alpha[0]));

  // Masked cross-attention to the encoded score.
  Var h2 = ag::modulate(ag::layer_norm(x1), mod.gamma[1], mod.beta[1]);
  Var q = ag::matmul(h2, params_.at(p + "ca.wq"));
  Var k = ag::matmul(cond.h_local, params_.at(p + "ca.wk"));
  Var v = ag::matmul(cond.h_local, params_.at(p + "ca.wv"));
  q = ag::scale_heads(ag::l2_normalize_heads(q, heads), params_.at(p + "ca.temp"), heads);
  k = ag::l2_normalize_heads(k, heads);
  if (config_.cross_attention_rope && !cond.is_unconditional) {
    q = ag::rope(q, positions, heads);
    k = ag::rope(k, cond.key_positions, heads);
  }
  std::vector<Tensor2> weights;
  Var ca = ag::attention(q, k, v, cond.mask.bias, heads, 1.0, record_ ? &weights : nullptr);
  if (record_) recorded_.push_back(std::move(weights));
  Var x2 = ag::add(x1, ag::mul_row(ag::matmul(ca, params_.at(p + "ca.wo")), mod.alpha[1]));

  // Pointwise feed-forward.
  Var h3 = ag::modulate(ag::layer_norm(x2), mod.gamma[2], mod.beta[2]);
  return ag::add(x2, ag::mul_row(feed_forward(p + "ffn.", h3), mod.alpha[2]));
}

Var DiTSinger::predict_noise(const Var& x_t, double t, const ConditionBundle& cond) const {
  const Index frames = x_t.rows();
  const Index lat = config_.latent_frames(frames);
  DS_REQUIRE(cond.mask.latent_frames == lat, "predict_noise: condition built for " + std::to_string(cond.mask.latent_frames) +
                                                 " latent frames, input has " + std::to_string(lat));
  DS_REQUIRE(cond.mask.phonemes == cond.h_local.rows(), "predict_noise: mask and condition lengths differ");
  if (record_) recorded_.clear();
  Var x = tokenize(x_t);
  const Var coarse = coarse_embedding(t, cond.speaker_id);
  for (int b = 0; b < config_.depth; ++b) x = dit_block(b, x, cond, adaln(b, coarse));

  Var mod = ag::add_row(ag::matmul(ag::silu(coarse), params_.at("final.ada.w")), params_.at("final.ada.b"));
  const Index d = config_.width;
  Var h = ag::modulate(ag::layer_norm(x), ag::slice_cols(mod, 0, d), ag::slice_cols(mod, d, d));
  return detokenize(h, frames);
}

namespace {

// Centre of each phoneme's share of its character span, in latent frames.
// The silence token sits at position 0.
std::vector<double> cross_key_positions(const ScoreSequence& score, double frame_clock) {
  std::vector<double> pos;
  pos.reserve(score.tokens.size() + 1);
  for (const auto& span : score.spans) {
    const int n = span.phoneme_count();
    for (int k = 0; k < n; ++k) {
      const double centre = span.start_time + span.duration * (k + 0.5) / n;
      pos.push_back(centre / frame_clock - 0.5);
    }
  }
  pos.push_back(0.0);
  return pos;
}

}  // namespace

ConditionBundle DiTSinger::condition(const ScoreSequence& score, Index mel_frames) const {
  check_score(score);
  ConditionBundle c;
  c.h_local = encode_conditions(score);
  c.speaker_id = score.speaker_id;
  const Index lat = config_.latent_frames(mel_frames);
  const double clock = config_.latent_frame_seconds();
  c.mask = config_.use_alignment_mask ? build_score_mask(score, config_.align_delta, lat, clock)
                                      : unconstrained_mask(lat, c.h_local.rows(), clock);
  c.key_positions = cross_key_positions(score, clock);
  return c;
}

ConditionBundle DiTSinger::unconditional(int speaker_id, Index mel_frames) const {
  DS_REQUIRE(speaker_id >= 0 && speaker_id < config_.speaker_count, "unconditional: speaker id out of range");
  ConditionBundle c;
  c.h_local = params_.at("null_cond");
  c.speaker_id = speaker_id;
  c.is_unconditional = true;
  c.mask = unconstrained_mask(config_.latent_frames(mel_frames), 1, config_.latent_frame_seconds());
  c.key_positions = {0.0};
  return c;
}

// ---------------------------------------------------------------------------
// Accounting

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.width);
  const std::size_t f = static_cast<std::size_t>(c.ffn_width());
  const std::size_t h = static_cast<std::size_t>(c.heads);
  const std::size_t patch = static_cast<std::size_t>(c.patch_size());
  const std::size_t attention = 4 * d * d + h;
  const std::size_t ffn = d * f + f + f * d + d;
  std::size_t n = 0;
  n += patch * d + d;                          // tokenizer
  n += 2 * (d * d + d);                        // timestep MLP
  n += static_cast<std::size_t>(c.speaker_count) * d;
  n += static_cast<std::size_t>(c.pitch_vocab + c.phoneme_vocab + c.duration_buckets + 2 + 1) * d;
  n += static_cast<std::size_t>(c.encoder_layers) * (attention + ffn);
  n += d;                                      // null condition row
  n += static_cast<std::size_t>(c.depth) * (d * 9 * d + 9 * d + 2 * attention + ffn);
  n += d * 2 * d + 2 * d;                      // final AdaLN
  n += d * patch + patch;                      // head
  return n;
}

FlopBreakdown count_flops(const ModelConfig& c, double duration) {
  DS_REQUIRE(duration > 0.0, "count_flops: duration must be positive");
  const double mel_frames = c.geometry().frames_for(duration);
  const double L = std::ceil(mel_frames / c.downsample_factor);
  const double P = std::ceil(duration * kPhonemesPerSecond) + 1;  // + silence token
  const double d = c.width;
  const double f = c.ffn_width();
  const double patch = c.patch_size();
  const double depth = c.depth;

  FlopBreakdown out;
  out.tokenizer = 2 * L * patch * d;
  out.head = 2 * L * d * patch + 2 * d * 2 * d;
  const double enc_layer = 2 * P * d * d * 4 + 2 * 2 * P * P * d + 2 * 2 * P * d * f;
  out.condition_encoder = c.encoder_layers * enc_layer;
  out.self_attention_scores = depth * (2 * 2 * L * L * d);
  out.self_attention_proj = depth * (2 * L * d * d * 4);
  out.cross_attention = depth * (2 * L * d * d * 2 + 2 * P * d * d * 2 + 2 * 2 * L * P * d);
  out.ffn = depth * (2 * 2 * L * d * f);
  out.adaln = depth * (2 * d * 9 * d);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kModelMagic[] = "DSMODEL1";
}

void save_model(const DiTSinger& model, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kCheckpointVersion);
  w.str(to_json(model.config()).dump());
  const auto& entries = model.parameters().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, v] : entries) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(v.rows()));
    w.u32(static_cast<std::uint32_t>(v.cols()));
    for (Index i = 0; i < v.value().size(); ++i) w.f32(static_cast<float>(v.value().data()[i]));
  }
  w.seal();
  io::write_file(path, w.bytes());
}

DiTSinger load_model(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kModelMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  r.unseal();
  const ModelConfig config = model_config_from_json(nlohmann::json::parse(r.str()));
  DiTSinger model(config, 0);
  const std::uint32_t count = r.u32();
  if (count != model.parameters().entries().size()) throw GeometryMismatch(path.string() + ": parameter count differs from config");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const Index rows = r.u32();
    const Index cols = r.u32();
    Var& v = model.parameters().at(name);
    if (v.rows() != rows || v.cols() != cols) throw GeometryMismatch(path.string() + ": shape mismatch for " + name);
    Tensor2& t = v.mutable_value();
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = r.f32();
  }
  return model;
}

}  // namespace ditsinger
