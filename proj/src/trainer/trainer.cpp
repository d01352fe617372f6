#include "ditsinger/trainer.hpp"

#include "ditsinger/binary_io.hpp"
#include "ditsinger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ditsinger {
namespace {

constexpr std::string_view kTrainMagic = "DSTRAIN1";
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBatchStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

Rng noise_rng(const Rng& root, int step, int slot) {
  return root.derive(kNoiseStream).derive(static_cast<std::uint64_t>(step)).derive(static_cast<std::uint64_t>(slot));
}

void round_to_float(Tensor2& t) {
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
}

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07d.ckpt", step);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::full_scale_profile() {
  TrainConfig c;
  c.iterations = 100000;
  c.batch_size = 8;
  c.grad_accum_steps = 6;
  return c;
}

void TrainConfig::validate() const {
  DS_REQUIRE(iterations >= 0, "train: iterations must be non-negative");
  DS_REQUIRE(batch_size >= 1, "train: batch_size must be positive");
  DS_REQUIRE(grad_accum_steps >= 1, "train: grad_accum_steps must be positive");
  DS_REQUIRE(learning_rate > 0.0, "train: learning_rate must be positive");
  DS_REQUIRE(weight_decay >= 0.0, "train: weight_decay must be non-negative");
  DS_REQUIRE(cond_dropout_p >= 0.0 && cond_dropout_p <= 1.0, "train: cond_dropout_p must be in [0, 1]");
  DS_REQUIRE(checkpoint_every >= 0, "train: checkpoint_every must be non-negative");
  DS_REQUIRE(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: betas must be in [0, 1)");
  DS_REQUIRE(adam_epsilon > 0.0, "train: adam_epsilon must be positive");
  DS_REQUIRE(diffusion_steps >= 1, "train: diffusion_steps must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"grad_accum_steps", c.grad_accum_steps},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"cond_dropout_p", c.cond_dropout_p},
          {"checkpoint_every", c.checkpoint_every},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"schedule", to_string(c.schedule)},
          {"diffusion_steps", c.diffusion_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  static const std::vector<std::string> known = {"iterations", "batch_size", "grad_accum_steps", "learning_rate",
                                                 "weight_decay", "seed", "cond_dropout_p", "checkpoint_every",
                                                 "beta1", "beta2", "adam_epsilon", "schedule", "diffusion_steps"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ContractViolation("train config: unknown key '" + key + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("iterations", c.iterations);
  get("batch_size", c.batch_size);
  get("grad_accum_steps", c.grad_accum_steps);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("seed", c.seed);
  get("cond_dropout_p", c.cond_dropout_p);
  get("checkpoint_every", c.checkpoint_every);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_epsilon", c.adam_epsilon);
  if (j.contains("schedule")) c.schedule = schedule_kind_from_string(j.at("schedule").get<std::string>());
  get("diffusion_steps", c.diffusion_steps);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer

void adamw_update(ParameterSet& params, std::vector<Tensor2>& m, std::vector<Tensor2>& v, int step_number,
                  const TrainConfig& config) {
  auto& entries = params.entries();
  DS_REQUIRE(m.size() == entries.size() && v.size() == entries.size(), "adamw: moment count differs from parameters");
  DS_REQUIRE(step_number >= 1, "adamw: step numbers start at 1");
  const double lr = config.learning_rate;
  const double bc1 = 1.0 - std::pow(config.beta1, step_number);
  const double bc2 = 1.0 - std::pow(config.beta2, step_number);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Var& p = entries[k].second;
    const Tensor2& g = p.grad();
    m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
    v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g.cwiseProduct(g);
    Tensor2& w = p.mutable_value();
    w *= 1.0 - lr * config.weight_decay;
    w.array() -= lr * (m[k].array() / bc1) / ((v[k].array() / bc2).sqrt() + config.adam_epsilon);
    round_to_float(w);
    round_to_float(m[k]);
    round_to_float(v[k]);
  }
}

std::vector<std::size_t> batch_indices(const Rng& root, int step, int slots, std::size_t corpus_size) {
  DS_REQUIRE(corpus_size > 0, "batch_indices: empty corpus");
  Rng r = root.derive(kBatchStream).derive(static_cast<std::uint64_t>(step));
  std::vector<std::size_t> out(static_cast<std::size_t>(slots));
  for (auto& idx : out) idx = static_cast<std::size_t>(r.uniform_int(corpus_size));
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(DiTSinger& model, const SyntheticCorpus& corpus, TrainConfig config)
    : model_(model), corpus_(corpus), config_(std::move(config)), schedule_(NoiseSchedule::make(config_.schedule, config_.diffusion_steps)) {
  config_.validate();
  DS_REQUIRE(!corpus_.samples.empty(), "train: corpus is empty");
  const MelGeometry g = model_.config().geometry();
  if (!(corpus_.params.geometry == g)) throw GeometryMismatch("train: corpus mel geometry does not match the model");
  for (const auto& [name, v] : model_.parameters().entries()) {
    state_.first_moment.push_back(Tensor2::Zero(v.rows(), v.cols()));
    state_.second_moment.push_back(Tensor2::Zero(v.rows(), v.cols()));
  }
  state_.rng = Rng(config_.seed);
}

Trainer::Trainer(DiTSinger& model, const SyntheticCorpus& corpus, TrainConfig config, TrainState resumed)
    : Trainer(model, corpus, std::move(config)) {
  DS_REQUIRE(resumed.first_moment.size() == state_.first_moment.size() &&
                 resumed.second_moment.size() == state_.second_moment.size(),
             "train: resumed optimizer state does not match the model");
  state_ = std::move(resumed);
}

double Trainer::accumulate_gradients(int step, int micro_batches, int micro_batch_size) {
  const int slots = micro_batches * micro_batch_size;
  const auto indices = batch_indices(state_.rng, step, slots, corpus_.samples.size());
  GuidanceConfig guidance;
  guidance.cond_dropout_p = config_.cond_dropout_p;
  model_.parameters().zero_grad();
  double total = 0.0;
  for (int mb = 0; mb < micro_batches; ++mb) {
    for (int j = 0; j < micro_batch_size; ++j) {
      const int slot = mb * micro_batch_size + j;
      const CorpusSample& s = corpus_.samples[indices[static_cast<std::size_t>(slot)]];
      Rng r = noise_rng(state_.rng, step, slot);
      const Var loss = training_loss(model_, s.mel.values, s.score, r, schedule_, guidance);
      total += loss.scalar();
      // Micro-batch mean divided by the accumulation count.
      backward(ag::scale(loss, 1.0 / (static_cast<double>(micro_batch_size) * micro_batches)));
    }
  }
  return total / slots;
}

double Trainer::step() {
  const int s = state_.step;
  const double loss = accumulate_gradients(s, config_.grad_accum_steps, config_.batch_size);
  bool grads_finite = true;
  for (const auto& [name, v] : model_.parameters().entries()) grads_finite = grads_finite && all_finite(v.grad());
  if (!std::isfinite(loss) || !grads_finite) {
    std::ostringstream os;
    os << "non-finite loss at step " << (s + 1) << " (loss " << loss << ", lr " << config_.learning_rate << ")\n";
    os << "gradient norms:\n";
    for (const auto& [name, v] : model_.parameters().entries()) os << "  " << name << " " << v.grad().norm() << "\n";
    throw TrainingDiverged(os.str());
  }
  adamw_update(model_.parameters(), state_.first_moment, state_.second_moment, s + 1, config_);
  state_.step = s + 1;
  state_.loss_history.push_back({state_.step, loss});
  return loss;
}

void Trainer::run(const std::function<void(const Trainer&)>& after_step) {
  while (state_.step < config_.iterations) {
    step();
    if (after_step) after_step(*this);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_training_checkpoint(const DiTSinger& model, const TrainConfig& config, const TrainState& state,
                              const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw(kTrainMagic);
  w.u32(kTrainCheckpointVersion);
  w.str(to_json(model.config()).dump());
  w.str(to_json(config).dump());
  w.u32(static_cast<std::uint32_t>(state.step));
  w.u64(state.rng.key());
  w.u64(state.rng.counter());
  const auto& entries = model.parameters().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  auto put = [&](const Tensor2& t) {
    for (Index i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.data()[i]));
  };
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, v] = entries[k];
    w.str(name);
    w.u32(static_cast<std::uint32_t>(v.rows()));
    w.u32(static_cast<std::uint32_t>(v.cols()));
    put(v.value());
    put(state.first_moment[k]);
    put(state.second_moment[k]);
  }
  w.u32(static_cast<std::uint32_t>(state.loss_history.size()));
  for (const auto& rec : state.loss_history) {
    w.u32(static_cast<std::uint32_t>(rec.step));
    w.f64(rec.loss);
  }
  w.seal();
  io::write_file(path, w.bytes());
}

TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kTrainMagic);
  const std::uint32_t version = r.u32();
  if (version != kTrainCheckpointVersion) {
    throw VersionMismatch(path.string() + ": training checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kTrainCheckpointVersion));
  }
  r.unseal();
  TrainingCheckpoint ck;
  ck.model_config = model_config_from_json(nlohmann::json::parse(r.str()));
  ck.train_config = train_config_from_json(nlohmann::json::parse(r.str()));
  ck.state.step = static_cast<int>(r.u32());
  const std::uint64_t key = r.u64();
  const std::uint64_t counter = r.u64();
  ck.state.rng = Rng::from_state(key, counter);
  const std::uint32_t count = r.u32();
  auto get = [&](Index rows, Index cols) {
    Tensor2 t(rows, cols);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = r.f32();
    return t;
  };
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str();
    const Index rows = r.u32();
    const Index cols = r.u32();
    ck.weights.emplace_back(std::move(name), get(rows, cols));
    ck.state.first_moment.push_back(get(rows, cols));
    ck.state.second_moment.push_back(get(rows, cols));
  }
  const std::uint32_t history = r.u32();
  for (std::uint32_t k = 0; k < history; ++k) {
    LossRecord rec;
    rec.step = static_cast<int>(r.u32());
    rec.loss = r.f64();
    ck.state.loss_history.push_back(rec);
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes in training checkpoint");
  return ck;
}

std::unique_ptr<DiTSinger> restore_model(const TrainingCheckpoint& ck) {
  auto model = std::make_unique<DiTSinger>(ck.model_config, 0);
  auto& entries = model->parameters().entries();
  if (entries.size() != ck.weights.size()) throw GeometryMismatch("checkpoint parameter count differs from config");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, t] = ck.weights[k];
    Var& v = model->parameters().at(name);
    if (v.rows() != t.rows() || v.cols() != t.cols()) throw GeometryMismatch("checkpoint shape mismatch for " + name);
    v.mutable_value() = t;
  }
  return model;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::string out = "step,loss\n";
  char buf[64];
  for (const auto& rec : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", rec.step, rec.loss);
    out += buf;
  }
  io::write_text(path, out);
}

std::uint64_t model_init_seed(std::uint64_t train_seed) { return Rng(train_seed).derive(kInitStream).next_u64(); }

double tail_mean_loss(const std::vector<LossRecord>& history, std::size_t window) {
  if (history.empty()) return 0.0;
  const std::size_t n = std::min(window, history.size());
  double s = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) s += history[i].loss;
  return s / static_cast<double>(n);
}

double head_mean_loss(const std::vector<LossRecord>& history, std::size_t window) {
  if (history.empty()) return 0.0;
  const std::size_t n = std::min(window, history.size());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += history[i].loss;
  return s / static_cast<double>(n);
}

TrainResult train(const ModelConfig& model_config, const SyntheticCorpus& corpus, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  model_config.validate();
  DS_REQUIRE(!corpus.samples.empty(), "train: corpus is empty");
  if (!(corpus.params.geometry == model_config.geometry())) {
    throw GeometryMismatch("train: corpus mel geometry does not match the model config");
  }
  if (corpus.params.phoneme_vocab > model_config.phoneme_vocab) {
    throw GeometryMismatch("train: corpus phoneme vocabulary exceeds the model's");
  }

  TrainResult result;
  std::optional<TrainState> resumed;
  if (options.resume) {
    if (!(options.resume->model_config == model_config)) {
      throw GeometryMismatch("train: resume checkpoint was written for a different model config");
    }
    result.model = restore_model(*options.resume);
    resumed = options.resume->state;
  } else {
    result.model = std::make_unique<DiTSinger>(model_config, model_init_seed(config.seed));
  }

  Trainer trainer = resumed ? Trainer(*result.model, corpus, config, *resumed) : Trainer(*result.model, corpus, config);
  const bool write = !options.out_dir.empty();
  const auto ckpt_dir = options.out_dir / "checkpoints";
  if (write) std::filesystem::create_directories(ckpt_dir);

  try {
    trainer.run([&](const Trainer& t) {
      if (options.on_step) options.on_step(t);
      if (write && config.checkpoint_every > 0 && t.state().step % config.checkpoint_every == 0) {
        save_training_checkpoint(*result.model, config, t.state(), ckpt_dir / checkpoint_name(t.state().step));
      }
    });
  } catch (const TrainingDiverged&) {
    if (write) write_loss_csv(trainer.state().loss_history, options.out_dir / "loss.csv");
    throw;
  }

  result.state = trainer.state();
  const auto& h = result.state.loss_history;
  result.report = {{"steps", result.state.step},
                   {"train_samples", corpus.samples.size()},
                   {"parameters", result.model->parameters().scalar_count()},
                   {"first_100_mean_loss", head_mean_loss(h, 100)},
                   {"last_100_mean_loss", tail_mean_loss(h, 100)},
                   {"final_loss", h.empty() ? 0.0 : h.back().loss}};
  if (write) {
    save_training_checkpoint(*result.model, config, result.state, ckpt_dir / checkpoint_name(result.state.step));
    save_model(*result.model, options.out_dir / "model.bin");
    write_loss_csv(h, options.out_dir / "loss.csv");
    io::write_text(options.out_dir / "train_report.json", result.report.dump(2) + "\n");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string to_string(SamplerKind kind) { return kind == SamplerKind::Ode ? "ode" : "ancestral"; }

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "ode") return SamplerKind::Ode;
  if (s == "ancestral") return SamplerKind::Ancestral;
  throw ContractViolation("unknown sampler '" + s + "' (expected ode or ancestral)");
}

nlohmann::json to_json(const SamplerConfig& c) {
  return {{"kind", to_string(c.kind)}, {"steps", c.steps}, {"w", c.w}, {"seed", c.seed}};
}

SamplerConfig sampler_config_from_json(const nlohmann::json& j, SamplerConfig c) {
  for (const auto& [key, value] : j.items()) {
    if (key != "kind" && key != "steps" && key != "w" && key != "seed") {
      throw ContractViolation("sampler config: unknown key '" + key + "'");
    }
  }
  if (j.contains("kind")) c.kind = sampler_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("steps")) c.steps = j.at("steps").get<int>();
  if (j.contains("w")) c.w = j.at("w").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  DS_REQUIRE(c.steps >= 1, "sampler: steps must be positive");
  return c;
}

MelTensor sample_mel(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                     const SamplerConfig& sampler, Rng& rng) {
  GuidanceConfig guidance;
  guidance.w = sampler.w;
  return sampler.kind == SamplerKind::Ode ? sample_ode(model, score, schedule, guidance, rng, sampler.steps)
                                          : sample_ancestral(model, score, schedule, guidance, rng, sampler.steps);
}

EvalSummary summarize(std::vector<EvalRow> rows) {
  EvalSummary s;
  s.rows = std::move(rows);
  if (s.rows.empty()) return s;
  double f0_sum = 0.0;
  std::size_t f0_n = 0;
  for (const auto& r : s.rows) {
    s.mcd += r.metrics.mcd;
    s.ffe += r.metrics.ffe;
    s.band_accuracy += r.band_accuracy;
    if (r.metrics.f0rmse) {
      f0_sum += *r.metrics.f0rmse;
      ++f0_n;
    }
  }
  const double n = static_cast<double>(s.rows.size());
  s.mcd /= n;
  s.ffe /= n;
  s.band_accuracy /= n;
  if (f0_n > 0) s.f0rmse = f0_sum / static_cast<double>(f0_n);
  return s;
}

EvalSummary evaluate_model(const DiTSinger& model, const SyntheticCorpus& corpus, const NoiseSchedule& schedule,
                           const SamplerConfig& sampler, int max_samples) {
  const MelGeometry g = model.config().geometry();
  if (!(corpus.params.geometry == g)) throw GeometryMismatch("evaluate: corpus geometry does not match the model");
  std::size_t n = corpus.samples.size();
  if (max_samples > 0) n = std::min(n, static_cast<std::size_t>(max_samples));
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const CorpusSample& s = corpus.samples[i];
    Rng rng = Rng(sampler.seed).derive(i);
    const MelTensor hyp = sample_mel(model, s.score, schedule, sampler, rng);
    F0Track ref_f0{oracle_f0(s.score, g)};
    EvalRow row;
    row.sample = i;
    row.metrics = evaluate_pair(s.mel, ref_f0, hyp, decode_f0(hyp));
    row.band_accuracy = band_accuracy(hyp, s.score);
    rows.push_back(row);
  }
  return summarize(std::move(rows));
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<GroupRow> grouped_pseudosinger_experiment(const std::vector<int>& n_groups_list, const GroupBudget& budget,
                                                      std::uint64_t seed) {
  std::vector<GroupRow> rows;
  for (int g : n_groups_list) {
    DS_REQUIRE(g >= 1, "group experiment: group counts must be positive");
    ModelConfig mc = model_preset(budget.preset);
    mc.speaker_count = std::max(mc.speaker_count, g);
    CorpusParams p;
    p.n_groups = g;
    p.melodies_per_group = std::max(1, budget.total_melodies / g);
    p.variants_per_melody = budget.variants_per_melody;
    p.holdout_fraction = budget.holdout_fraction;
    p.phoneme_vocab = mc.phoneme_vocab;
    p.geometry = mc.geometry();
    p.seed = seed;
    const CorpusSplit split = build_corpus(p);
    const TrainResult tr = train(mc, split.train, budget.train);
    const NoiseSchedule schedule = NoiseSchedule::make(budget.train.schedule, budget.train.diffusion_steps);
    GroupRow row;
    row.n_groups = g;
    row.melodies_per_group = p.melodies_per_group;
    row.train_samples = split.train.samples.size();
    row.final_loss = tail_mean_loss(tr.state.loss_history, 100);
    row.eval = evaluate_model(*tr.model, split.test, schedule, budget.sampler, budget.eval_samples);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ScalingRow> scaling_experiment(const ScalingBudget& budget, std::uint64_t seed) {
  std::vector<ScalingRow> rows;
  for (const auto& preset : budget.presets) {
    const ModelConfig mc = model_preset(preset);
    for (int melodies : budget.melody_counts) {
      CorpusParams p;
      p.n_groups = 1;
      p.melodies_per_group = melodies;
      p.variants_per_melody = budget.variants_per_melody;
      p.phoneme_vocab = mc.phoneme_vocab;
      p.geometry = mc.geometry();
      p.seed = seed;
      const CorpusSplit split = build_corpus(p);
      const TrainResult tr = train(mc, split.train, budget.train);
      const NoiseSchedule schedule = NoiseSchedule::make(budget.train.schedule, budget.train.diffusion_steps);
      ScalingRow row;
      row.preset = preset;
      row.gflops = count_flops(mc, budget.flop_clip_seconds).gflops();
      row.melodies = melodies;
      row.train_samples = split.train.samples.size();
      for (const auto& s : split.train.samples) {
        row.data_seconds += static_cast<double>(s.mel.frames()) * mc.hop / mc.sample_rate;
      }
      row.final_loss = tail_mean_loss(tr.state.loss_history, 100);
      row.proxy_mcd = evaluate_model(*tr.model, split.test, schedule, budget.sampler, budget.eval_samples).mcd;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace ditsinger
