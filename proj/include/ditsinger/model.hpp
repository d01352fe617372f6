#pragma once

// Diffusion-transformer noise predictor over mel tokens. Fine-grained score
// conditions enter through masked cross-attention; speaker and timestep
// enter through adaptive layer norm with zero-initialized residual gains.

#include "ditsinger/alignment.hpp"
#include "ditsinger/numerics.hpp"
#include "ditsinger/score.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ditsinger {

struct ModelConfig {
  std::string name = "tiny";
  int depth = 2;
  int width = 32;
  int heads = 4;
  double ffn_multiplier = 4.0;
  int downsample_factor = 1;
  int encoder_layers = 2;
  int phoneme_vocab = 16;
  int pitch_vocab = kPitchVocab;
  int duration_buckets = kDurationBuckets;
  int speaker_count = 64;
  int mel_bins = 16;
  int hop = 256;
  int sample_rate = 8000;
  double align_delta = 1.0;       // seconds
  bool use_alignment_mask = true;  // false: unmasked cross-attention ablation
  bool cross_attention_rope = true;
  double attention_temperature = 5.0;  // initial QK-Norm temperature

  int head_dim() const { return width / heads; }
  int ffn_width() const { return static_cast<int>(ffn_multiplier * width); }
  int patch_size() const { return downsample_factor * mel_bins; }
  MelGeometry geometry() const { return {mel_bins, hop, sample_rate}; }
  double latent_frame_seconds() const { return static_cast<double>(hop) * downsample_factor / sample_rate; }
  Index latent_frames(Index mel_frames) const { return (mel_frames + downsample_factor - 1) / downsample_factor; }

  /// Throws ContractViolation on inconsistent fields.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// tiny, tiny_2, small_toy, small, small_2, small_4, base, base_2, base_4,
/// large, large_2, large_4. A "_N" suffix sets the tokenizer downsample
/// factor to N. tiny and small_toy use the toy mel geometry; the rest use
/// 80 bins at 24 kHz with hop 128.
ModelConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named, ordered trainable tensors.
class ParameterSet {
 public:
  Var& add(const std::string& name, Tensor2 init);
  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct ConditionBundle {
  Var h_local;                       // (tokens + 1) x width, or 1 x width when unconditional
  std::vector<double> key_positions; // cross-attention RoPE positions, in latent frames
  AlignmentMask mask;
  int speaker_id = 0;
  bool is_unconditional = false;
};

/// gamma/beta/alpha for the three branches: self-attention, cross-attention, FFN.
struct AdaLnParams {
  Var gamma[3];
  Var beta[3];
  Var alpha[3];
};

class DiTSinger {
 public:
  DiTSinger(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// E_p(p) + E_ph(ph) + E_w(w) + E_sl(sl) per token, with the learned
  /// silence row appended: (tokens + 1) x width.
  Var embed_tokens(const ScoreSequence& score) const;
  /// Transformer condition encoder over embed_tokens.
  Var encode_conditions(const ScoreSequence& score) const;

  /// Strided convolution (kernel = stride = downsample factor) over time
  /// with mel bins as channels; zero-pads to a multiple of the factor.
  Var tokenize(const Var& mel) const;
  /// Transposed convolution back to mel bins, cropped to `frames`.
  Var detokenize(const Var& tokens, Index frames) const;

  Var coarse_embedding(double t, int speaker_id) const;
  AdaLnParams adaln(int block, const Var& coarse) const;
  Var dit_block(int block, const Var& x, const ConditionBundle& cond, const AdaLnParams& mod) const;

  /// Noise estimate for a noisy mel x_t (frames x bins); same shape out.
  Var predict_noise(const Var& x_t, double t, const ConditionBundle& cond) const;

  ConditionBundle condition(const ScoreSequence& score, Index mel_frames) const;
  ConditionBundle unconditional(int speaker_id, Index mel_frames) const;

  /// Per-head cross-attention weights of every block for the last forward
  /// pass made with recording enabled.
  void record_cross_attention(bool enabled) const { record_ = enabled; }
  const std::vector<std::vector<Tensor2>>& recorded_cross_attention() const { return recorded_; }

 private:
  Var self_attention(const std::string& prefix, const Var& h, std::span<const double> positions) const;
  Var feed_forward(const std::string& prefix, const Var& h) const;
  void check_score(const ScoreSequence& score) const;

  ModelConfig config_;
  ParameterSet params_;
  mutable bool record_ = false;
  mutable std::vector<std::vector<Tensor2>> recorded_;
};

/// Sinusoidal features of a (possibly fractional) timestep: [cos | sin].
Tensor2 timestep_features(double t, int width);

std::size_t parameter_count(const ModelConfig& config);

struct FlopBreakdown {
  double tokenizer = 0;
  double condition_encoder = 0;
  double self_attention_scores = 0;  // QK^T and PV, all blocks
  double self_attention_proj = 0;
  double cross_attention = 0;
  double ffn = 0;
  double adaln = 0;
  double head = 0;

  double blocks() const { return self_attention_scores + self_attention_proj + cross_attention + ffn + adaln; }
  double total() const { return tokenizer + condition_encoder + blocks() + head; }
  double gflops() const { return total() / 1e9; }
};

/// Phoneme-rate assumption used to size the condition sequence.
inline constexpr double kPhonemesPerSecond = 6.0;

/// Analytic forward-pass FLOPs (2 per multiply-add) for one clip.
FlopBreakdown count_flops(const ModelConfig& config, double duration_seconds);

// Checkpoint: magic, version, config JSON, then per parameter its name,
// shape and little-endian float32 values; CRC-32 trailer.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_model(const DiTSinger& model, const std::filesystem::path& path);
DiTSinger load_model(const std::filesystem::path& path);

/// Rounds every parameter to float32 precision so checkpoints are lossless.
void round_parameters_to_float(ParameterSet& params);

}  // namespace ditsinger
