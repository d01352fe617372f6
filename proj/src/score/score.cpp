#include "ditsinger/score.hpp"

#include "ditsinger/binary_io.hpp"
#include "ditsinger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace ditsinger {

namespace {

constexpr double kTimeTolerance = 1e-9;
constexpr char kMelMagic[] = "DSMEL";
constexpr std::uint32_t kMelFormatVersion = 1;

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

bool voiced(const PhonemeToken& t) { return t.pitch != kRestPitch && t.phoneme_id != kSilencePhoneme; }

}  // namespace

int duration_bucket(double seconds) {
  constexpr double lo = 0.05, hi = 4.0;
  if (seconds <= lo) return 0;
  const double pos = std::log(seconds / lo) / std::log(hi / lo) * kDurationBuckets;
  return std::clamp(static_cast<int>(std::floor(pos)), 0, kDurationBuckets - 1);
}

void validate_score(const ScoreSequence& score, int phoneme_vocab) {
  const int n = static_cast<int>(score.tokens.size());
  for (int i = 0; i < n; ++i) {
    const auto& t = score.tokens[i];
    if (t.phoneme_id < 0 || t.phoneme_id >= phoneme_vocab) {
      throw ContractViolation("token " + std::to_string(i) + ": phoneme_id " + std::to_string(t.phoneme_id) +
                              " outside vocabulary of " + std::to_string(phoneme_vocab));
    }
    if (t.pitch < 0 || t.pitch >= kPitchVocab) throw ContractViolation("token " + std::to_string(i) + ": pitch out of range");
    if (t.word_duration_bucket < 0 || t.word_duration_bucket >= kDurationBuckets) {
      throw ContractViolation("token " + std::to_string(i) + ": duration bucket out of range");
    }
  }
  DS_REQUIRE(score.speaker_id >= 0, "score: negative speaker id");
  DS_REQUIRE(score.total_duration >= 0.0, "score: negative total duration");
  int expected_begin = 0;
  double previous_end = 0.0;
  for (std::size_t c = 0; c < score.spans.size(); ++c) {
    const auto& s = score.spans[c];
    const std::string where = "span " + std::to_string(c);
    DS_REQUIRE(s.start_time >= 0.0, where + ": negative start time");
    DS_REQUIRE(s.duration > 0.0, where + ": duration must be positive");
    DS_REQUIRE(s.start_time + kTimeTolerance >= previous_end, where + ": spans overlap or are unsorted");
    DS_REQUIRE(s.phoneme_begin == expected_begin && s.phoneme_end > s.phoneme_begin,
               where + ": phoneme ranges must tile the token list contiguously");
    expected_begin = s.phoneme_end;
    previous_end = s.end_time();
  }
  DS_REQUIRE(expected_begin == n, "score: phoneme ranges do not cover every token");
  DS_REQUIRE(previous_end <= score.total_duration + kTimeTolerance, "score: last span ends after total duration");
}

nlohmann::json score_to_json(const ScoreSequence& score) {
  nlohmann::json j;
  j["speaker_id"] = score.speaker_id;
  j["total_duration"] = score.total_duration;
  auto& toks = j["tokens"] = nlohmann::json::array();
  for (const auto& t : score.tokens) {
    toks.push_back({{"phoneme_id", t.phoneme_id}, {"pitch", t.pitch}, {"duration_bucket", t.word_duration_bucket}, {"slur", t.slur}});
  }
  auto& spans = j["spans"] = nlohmann::json::array();
  for (const auto& s : score.spans) {
    spans.push_back({{"start", s.start_time}, {"duration", s.duration}, {"phoneme_begin", s.phoneme_begin}, {"phoneme_end", s.phoneme_end}});
  }
  return j;
}

ScoreSequence score_from_json(const nlohmann::json& j) {
  ScoreSequence s;
  try {
    s.speaker_id = j.value("speaker_id", 0);
    s.total_duration = j.at("total_duration").get<double>();
    for (const auto& t : j.at("tokens")) {
      s.tokens.push_back({t.at("phoneme_id").get<int>(), t.at("pitch").get<int>(), t.at("duration_bucket").get<int>(),
                          t.value("slur", false)});
    }
    for (const auto& c : j.at("spans")) {
      s.spans.push_back({c.at("start").get<double>(), c.at("duration").get<double>(), c.at("phoneme_begin").get<int>(),
                         c.at("phoneme_end").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("score json: ") + e.what());
  }
  return s;
}

int MelGeometry::frames_for(double seconds) const {
  return static_cast<int>(std::ceil(seconds * sample_rate / hop - kTimeTolerance));
}

bool bitwise_equal(const MelTensor& a, const MelTensor& b) {
  return a.hop == b.hop && a.sample_rate == b.sample_rate && a.values.rows() == b.values.rows() &&
         a.values.cols() == b.values.cols() &&
         std::memcmp(a.values.data(), b.values.data(), sizeof(double) * static_cast<std::size_t>(a.values.size())) == 0;
}

std::vector<std::uint8_t> encode_mel(const MelTensor& mel) {
  io::ByteWriter w;
  w.raw(kMelMagic);
  w.u32(kMelFormatVersion);
  w.u32(static_cast<std::uint32_t>(mel.frames()));
  w.u32(static_cast<std::uint32_t>(mel.bins()));
  w.u32(static_cast<std::uint32_t>(mel.hop));
  w.u32(static_cast<std::uint32_t>(mel.sample_rate));
  for (Index i = 0; i < mel.values.size(); ++i) w.f32(static_cast<float>(mel.values.data()[i]));
  w.seal();
  return w.bytes();
}

void save_mel(const MelTensor& mel, const std::filesystem::path& path) { io::write_file(path, encode_mel(mel)); }

MelTensor load_mel(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kMelMagic);
  const std::uint32_t version = r.u32();
  if (version != kMelFormatVersion) {
    throw VersionMismatch(path.string() + ": mel format version " + std::to_string(version) + ", expected " +
                          std::to_string(kMelFormatVersion));
  }
  r.unseal();
  MelTensor mel;
  const auto frames = r.u32();
  const auto bins = r.u32();
  mel.hop = static_cast<int>(r.u32());
  mel.sample_rate = static_cast<int>(r.u32());
  mel.values.resize(frames, bins);
  for (Index i = 0; i < mel.values.size(); ++i) mel.values.data()[i] = r.f32();
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after mel data");
  return mel;
}

// ---------------------------------------------------------------------------
// Melodies and lyrics

double MelodyTemplate::total_duration() const {
  double total = lead_in + tail;
  for (const auto& c : chars) total += c.duration;
  return total;
}

std::vector<MelodyTemplate> generate_melody_bank(Rng& rng, int n_melodies, int max_chars, const MelodyBankOptions& options) {
  DS_REQUIRE(n_melodies >= 1, "generate_melody_bank: need at least one melody");
  DS_REQUIRE(max_chars >= 2, "generate_melody_bank: max_chars must be >= 2");
  std::vector<MelodyTemplate> bank;
  bank.reserve(static_cast<std::size_t>(n_melodies));
  for (int m = 0; m < n_melodies; ++m) {
    MelodyTemplate melody;
    const int n_chars = 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_chars - 1)));
    int pitch = 55 + static_cast<int>(rng.uniform_int(18));
    double used = melody.lead_in + melody.tail;
    for (int c = 0; c < n_chars; ++c) {
      TemplateChar ch;
      ch.duration = 0.1 + 0.01 * static_cast<double>(rng.uniform_int(91));  // [0.1, 1.0] in 10 ms steps
      if (c >= 2 && used + ch.duration > options.max_total_seconds) break;
      used += ch.duration;
      // First character is always sung so the melody never opens on a rest.
      if (c > 0 && rng.bernoulli(options.rest_probability)) {
        ch.pitches = {kRestPitch};
      } else {
        pitch = std::clamp(pitch + static_cast<int>(rng.uniform_int(9)) - 4, kMinSingablePitch, kMaxSingablePitch);
        ch.pitches = {pitch};
        if (rng.bernoulli(options.melisma_probability)) {
          const int step = 1 + static_cast<int>(rng.uniform_int(3));
          const int second = std::clamp(rng.bernoulli(0.5) ? pitch + step : pitch - step, kMinSingablePitch, kMaxSingablePitch);
          if (second != pitch) ch.pitches.push_back(second);
        }
      }
      melody.chars.push_back(std::move(ch));
    }
    bank.push_back(std::move(melody));
  }
  return bank;
}

ScoreSequence generate_lyric_variant(Rng& rng, const MelodyTemplate& melody, int vocab, int speaker_id) {
  DS_REQUIRE(vocab >= 4, "generate_lyric_variant: vocab must be >= 4");
  ScoreSequence score;
  score.speaker_id = speaker_id;
  score.total_duration = melody.total_duration();
  double t = melody.lead_in;
  for (const auto& ch : melody.chars) {
    CharSpan span;
    span.start_time = t;
    span.duration = ch.duration;
    span.phoneme_begin = static_cast<int>(score.tokens.size());
    const int bucket = duration_bucket(ch.duration);
    if (ch.is_rest()) {
      score.tokens.push_back({kSilencePhoneme, kRestPitch, bucket, false});
    } else {
      const int n_ph = 1 + static_cast<int>(rng.uniform_int(3));
      const int events = static_cast<int>(ch.pitches.size());
      const bool slur = events > 1;
      for (int k = 0; k < n_ph; ++k) {
        const int id = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(vocab - 1)));
        const int event = std::min(events - 1, k * events / n_ph);
        score.tokens.push_back({id, ch.pitches[static_cast<std::size_t>(event)], bucket, slur});
      }
    }
    span.phoneme_end = static_cast<int>(score.tokens.size());
    score.spans.push_back(span);
    t += ch.duration;
  }
  return score;
}

// ---------------------------------------------------------------------------
// Oracle renderer

int phoneme_band(int phoneme_id, int bins) { return phoneme_id % (bins / 2); }

int pitch_band(int pitch, int bins) {
  const int half = bins / 2;
  const int span = kMaxSingablePitch - kMinSingablePitch + 1;
  const int band = static_cast<int>(std::floor(static_cast<double>(pitch - kMinSingablePitch) * half / span));
  return half + std::clamp(band, 0, half - 1);
}

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

double pitch_band_center_hz(int band_bin, int bins) {
  const int half = bins / 2;
  const double span = kMaxSingablePitch - kMinSingablePitch + 1;
  const double center = kMinSingablePitch + (static_cast<double>(band_bin - half) + 0.5) * span / half;
  return midi_to_hz(center);
}

std::vector<PhonemeInterval> phoneme_truth_intervals(const ScoreSequence& score) {
  std::vector<PhonemeInterval> out;
  out.reserve(score.tokens.size());
  for (const auto& span : score.spans) {
    const int n = span.phoneme_count();
    for (int k = 0; k < n; ++k) {
      out.push_back({span.start_time + span.duration * k / n, span.start_time + span.duration * (k + 1) / n, span.phoneme_begin + k});
    }
  }
  return out;
}

std::vector<int> oracle_frame_tokens(const ScoreSequence& score, const MelGeometry& geometry) {
  const int frames = geometry.frames_for(score.total_duration);
  std::vector<int> labels(static_cast<std::size_t>(frames), -1);
  const auto intervals = phoneme_truth_intervals(score);
  for (int i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) * geometry.frame_seconds();
    for (const auto& iv : intervals) {
      if (voiced(score.tokens[static_cast<std::size_t>(iv.token)]) && t >= iv.start && t < iv.end) {
        labels[static_cast<std::size_t>(i)] = iv.token;
        break;
      }
    }
  }
  return labels;
}

std::vector<double> oracle_f0(const ScoreSequence& score, const MelGeometry& geometry) {
  const auto labels = oracle_frame_tokens(score, geometry);
  std::vector<double> f0(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const int pitch = score.tokens[static_cast<std::size_t>(labels[i])].pitch;
    f0[i] = pitch_band_center_hz(pitch_band(pitch, geometry.bins), geometry.bins);
  }
  return f0;
}

MelTensor oracle_synthesize(const ScoreSequence& score, const MelGeometry& geometry, int phoneme_vocab) {
  validate_score(score, phoneme_vocab);
  DS_REQUIRE(geometry.bins >= 4 && geometry.bins % 2 == 0, "oracle_synthesize: bins must be even and >= 4");
  const int frames = geometry.frames_for(score.total_duration);
  MelTensor mel;
  mel.hop = geometry.hop;
  mel.sample_rate = geometry.sample_rate;
  mel.values = Tensor2::Constant(frames, geometry.bins, kMelFloor);

  const auto intervals = phoneme_truth_intervals(score);
  const double half_fade = 0.5 * kCrossfadeSeconds;
  const double pitch_level = kMelPeak - 0.1 * (score.speaker_id % 4);

  for (std::size_t j = 0; j < intervals.size(); ++j) {
    const auto& iv = intervals[j];
    const auto& tok = score.tokens[static_cast<std::size_t>(iv.token)];
    if (!voiced(tok)) continue;
    auto sounding_neighbour = [&](std::size_t other, double edge_a, double edge_b) {
      return voiced(score.tokens[static_cast<std::size_t>(intervals[other].token)]) &&
             std::abs(edge_a - edge_b) < kTimeTolerance;
    };
    const bool fade_in = j > 0 && sounding_neighbour(j - 1, intervals[j - 1].end, iv.start);
    const bool fade_out = j + 1 < intervals.size() && sounding_neighbour(j + 1, intervals[j + 1].start, iv.end);
    const double lo = fade_in ? iv.start - half_fade : iv.start;
    const double hi = fade_out ? iv.end + half_fade : iv.end;
    const int pb = phoneme_band(tok.phoneme_id, geometry.bins);
    const int qb = pitch_band(tok.pitch, geometry.bins);
    for (int i = 0; i < frames; ++i) {
      const double t = mel.frame_time(i);
      if (t < lo || t >= hi) continue;
      double w = 1.0;
      if (fade_in && t < iv.start + half_fade) w = std::min(w, (t - lo) / kCrossfadeSeconds);
      if (fade_out && t > iv.end - half_fade) w = std::min(w, (hi - t) / kCrossfadeSeconds);
      mel.values(i, pb) += w * (kMelPeak - kMelFloor);
      mel.values(i, qb) += w * (pitch_level - kMelFloor);
    }
  }
  for (Index k = 0; k < mel.values.size(); ++k) {
    mel.values.data()[k] = round_to_float(std::min(mel.values.data()[k], kMelPeak));
  }
  return mel;
}

// ---------------------------------------------------------------------------
// Corpus

CorpusSplit build_corpus(const CorpusParams& p) {
  DS_REQUIRE(p.n_groups >= 1 && p.melodies_per_group >= 1 && p.variants_per_melody >= 1, "build_corpus: counts must be positive");
  DS_REQUIRE(p.holdout_fraction > 0.0 && p.holdout_fraction <= 0.5, "build_corpus: holdout_fraction must be in (0, 0.5]");
  DS_REQUIRE(p.unseen_melodies >= 0, "build_corpus: unseen_melodies must be >= 0");

  const int seen = p.n_groups * p.melodies_per_group;
  const Rng master(p.seed);
  Rng bank_rng = master.derive(0);
  auto bank = generate_melody_bank(bank_rng, seen + p.unseen_melodies, p.max_chars, p.melody_options);
  const int n_test = static_cast<int>(std::lround(p.variants_per_melody * p.holdout_fraction));

  CorpusSplit split;
  for (auto* c : {&split.train, &split.test, &split.test_unseen}) {
    c->params = p;
    c->melody_bank = bank;
  }
  split.train.split = "train";
  split.test.split = "test_seen_melody";
  split.test_unseen.split = "test_unseen_melody";

  for (int m = 0; m < seen + p.unseen_melodies; ++m) {
    const Rng melody_rng = master.derive(1 + static_cast<std::uint64_t>(m));
    for (int v = 0; v < p.variants_per_melody; ++v) {
      CorpusSample s;
      s.melody_index = m;
      s.variant_index = v;
      s.lyric_seed = melody_rng.derive(static_cast<std::uint64_t>(v)).next_u64();
      Rng lyric_rng(s.lyric_seed);
      const int speaker = m < seen ? m / p.melodies_per_group : 0;
      s.score = generate_lyric_variant(lyric_rng, bank[static_cast<std::size_t>(m)], p.phoneme_vocab, speaker);
      s.mel = oracle_synthesize(s.score, p.geometry, p.phoneme_vocab);
      if (m >= seen) {
        split.test_unseen.samples.push_back(std::move(s));
      } else if (v >= p.variants_per_melody - n_test) {
        split.test.samples.push_back(std::move(s));
      } else {
        split.train.samples.push_back(std::move(s));
      }
    }
  }
  return split;
}

namespace {

constexpr char kCorpusMagic[] = "DSCORPUS";

void write_params(io::ByteWriter& w, const CorpusParams& p) {
  w.i32(p.n_groups);
  w.i32(p.melodies_per_group);
  w.i32(p.variants_per_melody);
  w.f64(p.holdout_fraction);
  w.i32(p.unseen_melodies);
  w.i32(p.phoneme_vocab);
  w.i32(p.max_chars);
  w.i32(p.geometry.bins);
  w.i32(p.geometry.hop);
  w.i32(p.geometry.sample_rate);
  w.f64(p.melody_options.max_total_seconds);
  w.f64(p.melody_options.rest_probability);
  w.f64(p.melody_options.melisma_probability);
  w.u64(p.seed);
}

CorpusParams read_params(io::ByteReader& r) {
  CorpusParams p;
  p.n_groups = r.i32();
  p.melodies_per_group = r.i32();
  p.variants_per_melody = r.i32();
  p.holdout_fraction = r.f64();
  p.unseen_melodies = r.i32();
  p.phoneme_vocab = r.i32();
  p.max_chars = r.i32();
  p.geometry.bins = r.i32();
  p.geometry.hop = r.i32();
  p.geometry.sample_rate = r.i32();
  p.melody_options.max_total_seconds = r.f64();
  p.melody_options.rest_probability = r.f64();
  p.melody_options.melisma_probability = r.f64();
  p.seed = r.u64();
  return p;
}

void write_score(io::ByteWriter& w, const ScoreSequence& s) {
  w.i32(s.speaker_id);
  w.f64(s.total_duration);
  w.u32(static_cast<std::uint32_t>(s.tokens.size()));
  for (const auto& t : s.tokens) {
    w.i32(t.phoneme_id);
    w.i32(t.pitch);
    w.i32(t.word_duration_bucket);
    w.u8(t.slur ? 1 : 0);
  }
  w.u32(static_cast<std::uint32_t>(s.spans.size()));
  for (const auto& c : s.spans) {
    w.f64(c.start_time);
    w.f64(c.duration);
    w.i32(c.phoneme_begin);
    w.i32(c.phoneme_end);
  }
}

ScoreSequence read_score(io::ByteReader& r) {
  ScoreSequence s;
  s.speaker_id = r.i32();
  s.total_duration = r.f64();
  s.tokens.resize(r.u32());
  for (auto& t : s.tokens) {
    t.phoneme_id = r.i32();
    t.pitch = r.i32();
    t.word_duration_bucket = r.i32();
    t.slur = r.u8() != 0;
  }
  s.spans.resize(r.u32());
  for (auto& c : s.spans) {
    c.start_time = r.f64();
    c.duration = r.f64();
    c.phoneme_begin = r.i32();
    c.phoneme_end = r.i32();
  }
  return s;
}

}  // namespace

void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "mel", ec);
  if (ec) throw IoError("cannot create " + (dir / "mel").string() + ": " + ec.message());

  io::ByteWriter w;
  w.raw(kCorpusMagic);
  w.u32(kCorpusFormatVersion);
  w.str(corpus.split);
  write_params(w, corpus.params);
  w.u32(corpus.oracle_version);
  w.u32(static_cast<std::uint32_t>(corpus.melody_bank.size()));
  for (const auto& m : corpus.melody_bank) {
    w.f64(m.lead_in);
    w.f64(m.tail);
    w.u32(static_cast<std::uint32_t>(m.chars.size()));
    for (const auto& c : m.chars) {
      w.f64(c.duration);
      w.u32(static_cast<std::uint32_t>(c.pitches.size()));
      for (int p : c.pitches) w.i32(p);
    }
  }
  w.u32(static_cast<std::uint32_t>(corpus.samples.size()));
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "mel/%06zu.mel", i);
    const auto bytes = encode_mel(s.mel);
    io::write_file(dir / name, bytes);
    w.i32(s.melody_index);
    w.i32(s.variant_index);
    w.u64(s.lyric_seed);
    write_score(w, s.score);
    w.str(name);
    w.u32(io::crc32(bytes.data(), bytes.size()));
  }
  w.seal();
  io::write_file(dir / "manifest.bin", w.bytes());
}

SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.bin";
  io::ByteReader r(io::read_file(manifest_path), manifest_path.string());
  r.expect_magic(kCorpusMagic);
  const std::uint32_t version = r.u32();
  if (version != kCorpusFormatVersion) {
    throw VersionMismatch(manifest_path.string() + ": corpus format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCorpusFormatVersion));
  }
  r.unseal();
  SyntheticCorpus corpus;
  corpus.split = r.str();
  corpus.params = read_params(r);
  corpus.oracle_version = r.u32();
  if (corpus.oracle_version != kOracleVersion) {
    throw VersionMismatch(manifest_path.string() + ": rendered by oracle version " + std::to_string(corpus.oracle_version));
  }
  corpus.melody_bank.resize(r.u32());
  for (auto& m : corpus.melody_bank) {
    m.lead_in = r.f64();
    m.tail = r.f64();
    m.chars.resize(r.u32());
    for (auto& c : m.chars) {
      c.duration = r.f64();
      c.pitches.resize(r.u32());
      for (auto& p : c.pitches) p = r.i32();
    }
  }
  corpus.samples.resize(r.u32());
  for (auto& s : corpus.samples) {
    s.melody_index = r.i32();
    s.variant_index = r.i32();
    s.lyric_seed = r.u64();
    s.score = read_score(r);
    const std::string name = r.str();
    const std::uint32_t crc = r.u32();
    const auto bytes = io::read_file(dir / name);
    if (io::crc32(bytes.data(), bytes.size()) != crc) throw ChecksumMismatch((dir / name).string() + ": checksum mismatch");
    s.mel = load_mel(dir / name);
  }
  if (!r.at_end()) throw IoError(manifest_path.string() + ": trailing bytes");
  return corpus;
}

}  // namespace ditsinger
