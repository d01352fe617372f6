#pragma once

// Score and mel domain types, plus the synthetic two-stage data pipeline:
// a fixed melody bank, sampled lyric variants over each melody, and a
// deterministic oracle renderer that stands in for a trained singer model.

#include "ditsinger/numerics.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ditsinger {

inline constexpr int kPitchVocab = 128;
inline constexpr int kDurationBuckets = 32;
inline constexpr int kSilencePhoneme = 0;
inline constexpr int kRestPitch = 0;
inline constexpr int kMinSingablePitch = 48;
inline constexpr int kMaxSingablePitch = 84;

/// Log-spaced bucket over [0.05 s, 4 s]; values outside clamp to the ends.
int duration_bucket(double seconds);

struct PhonemeToken {
  int phoneme_id = kSilencePhoneme;
  int pitch = kRestPitch;
  int word_duration_bucket = 0;
  bool slur = false;

  friend bool operator==(const PhonemeToken&, const PhonemeToken&) = default;
};

struct CharSpan {
  double start_time = 0.0;
  double duration = 0.0;
  int phoneme_begin = 0;  // [begin, end) into ScoreSequence::tokens
  int phoneme_end = 0;

  double end_time() const { return start_time + duration; }
  int phoneme_count() const { return phoneme_end - phoneme_begin; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct ScoreSequence {
  std::vector<PhonemeToken> tokens;
  std::vector<CharSpan> spans;
  int speaker_id = 0;
  double total_duration = 0.0;

  friend bool operator==(const ScoreSequence&, const ScoreSequence&) = default;
};

/// Throws ContractViolation when spans are unsorted, overlap, do not tile the
/// token list, or a token field is outside its vocabulary.
void validate_score(const ScoreSequence& score, int phoneme_vocab);

nlohmann::json score_to_json(const ScoreSequence& score);
ScoreSequence score_from_json(const nlohmann::json& j);

struct MelGeometry {
  int bins = 16;
  int hop = 256;
  int sample_rate = 8000;

  double frame_seconds() const { return static_cast<double>(hop) / sample_rate; }
  int frames_for(double seconds) const;
  friend bool operator==(const MelGeometry&, const MelGeometry&) = default;
};

inline MelGeometry toy_geometry() { return {}; }
inline MelGeometry full_geometry() { return {80, 128, 24000}; }

struct MelTensor {
  int hop = 64;
  int sample_rate = 8000;
  Tensor2 values;  // frames x bins, log-mel scale

  Index frames() const { return values.rows(); }
  Index bins() const { return values.cols(); }
  double frame_time(Index i) const { return static_cast<double>(i) * hop / sample_rate; }
  MelGeometry geometry() const { return {static_cast<int>(bins()), hop, sample_rate}; }
};

bool bitwise_equal(const MelTensor& a, const MelTensor& b);

// Mel tensor file: magic, version, shape header, little-endian float32 data,
// CRC-32 trailer. Values are rounded to float32 when written.
void save_mel(const MelTensor& mel, const std::filesystem::path& path);
MelTensor load_mel(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_mel(const MelTensor& mel);

// ---------------------------------------------------------------------------
// Synthetic pipeline

struct TemplateChar {
  std::vector<int> pitches;  // one entry per note event; {0} marks a rest
  double duration = 0.0;

  bool is_rest() const { return pitches.size() == 1 && pitches[0] == kRestPitch; }
  friend bool operator==(const TemplateChar&, const TemplateChar&) = default;
};

struct MelodyTemplate {
  double lead_in = 0.1;   // silence before the first character
  double tail = 0.1;      // silence after the last character
  std::vector<TemplateChar> chars;

  double total_duration() const;
  friend bool operator==(const MelodyTemplate&, const MelodyTemplate&) = default;
};

struct MelodyBankOptions {
  double max_total_seconds = 4.0;
  double rest_probability = 0.1;
  double melisma_probability = 0.2;
  friend bool operator==(const MelodyBankOptions&, const MelodyBankOptions&) = default;
};

std::vector<MelodyTemplate> generate_melody_bank(Rng& rng, int n_melodies, int max_chars,
                                                 const MelodyBankOptions& options = {});

ScoreSequence generate_lyric_variant(Rng& rng, const MelodyTemplate& melody, int vocab, int speaker_id = 0);

// Oracle renderer levels.
inline constexpr double kMelFloor = -1.0;
inline constexpr double kMelPeak = 1.0;
inline constexpr double kCrossfadeSeconds = 0.010;
inline constexpr std::uint32_t kOracleVersion = 1;

int phoneme_band(int phoneme_id, int bins);  // bin in [0, bins/2)
int pitch_band(int pitch, int bins);         // bin in [bins/2, bins)
double pitch_band_center_hz(int band_bin, int bins);
double midi_to_hz(double midi);

/// Per-phoneme ground-truth interval: characters are split evenly among
/// their phonemes. Used only by the oracle and by evaluation.
struct PhonemeInterval {
  double start = 0.0;
  double end = 0.0;
  int token = 0;
};
std::vector<PhonemeInterval> phoneme_truth_intervals(const ScoreSequence& score);

/// Frame-level truth at mel resolution: token index sounding at each frame
/// clock time, or -1 for silence and rests.
std::vector<int> oracle_frame_tokens(const ScoreSequence& score, const MelGeometry& geometry);

/// Oracle F0 per frame (band-center frequency of the sounding pitch, 0 when
/// unvoiced). Same clock as oracle_synthesize.
std::vector<double> oracle_f0(const ScoreSequence& score, const MelGeometry& geometry);

MelTensor oracle_synthesize(const ScoreSequence& score, const MelGeometry& geometry, int phoneme_vocab);

struct CorpusParams {
  int n_groups = 1;
  int melodies_per_group = 2;
  int variants_per_melody = 4;
  double holdout_fraction = 0.25;
  int unseen_melodies = 0;  // extra melodies rendered only into the unseen split
  int phoneme_vocab = 16;
  int max_chars = 6;
  MelGeometry geometry;
  MelodyBankOptions melody_options;
  std::uint64_t seed = 0;

  friend bool operator==(const CorpusParams&, const CorpusParams&) = default;
};

struct CorpusSample {
  int melody_index = 0;
  int variant_index = 0;
  std::uint64_t lyric_seed = 0;
  ScoreSequence score;
  MelTensor mel;
};

struct SyntheticCorpus {
  std::string split;  // "train", "test_seen_melody", "test_unseen_melody"
  CorpusParams params;
  std::uint32_t oracle_version = kOracleVersion;
  std::vector<MelodyTemplate> melody_bank;
  std::vector<CorpusSample> samples;

  int group_count() const { return params.n_groups; }
};

struct CorpusSplit {
  SyntheticCorpus train;
  SyntheticCorpus test;         // unseen lyric variants of training melodies
  SyntheticCorpus test_unseen;  // melodies never seen in training
};

/// Deterministic in params.seed; each sample's generator is derived from
/// (seed, melody, variant) so generation order does not matter.
CorpusSplit build_corpus(const CorpusParams& params);

inline constexpr std::uint32_t kCorpusFormatVersion = 1;

void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
SyntheticCorpus load_corpus(const std::filesystem::path& dir);

}  // namespace ditsinger
