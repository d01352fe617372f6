#pragma once

#include "ditsinger/diffusion.hpp"
#include "ditsinger/metrics.hpp"
#include "ditsinger/model.hpp"
#include "ditsinger/score.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ditsinger {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 8;
  int grad_accum_steps = 1;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double cond_dropout_p = 0.1;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  ScheduleKind schedule = ScheduleKind::Linear;
  int diffusion_steps = 1000;

  /// Batch 8 with 6-step accumulation, 100k iterations.
  static TrainConfig full_scale_profile();
  void validate() const;
  int effective_batch() const { return batch_size * grad_accum_steps; }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct LossRecord {
  int step = 0;  // 1-based optimizer step
  double loss = 0.0;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainState {
  int step = 0;
  std::vector<Tensor2> first_moment;   // aligned with ParameterSet order
  std::vector<Tensor2> second_moment;
  Rng rng;                             // root of every per-step draw
  std::vector<LossRecord> loss_history;
};

/// One decoupled-weight-decay adaptive-moment update using the gradients
/// currently held by `params`. `step_number` is 1-based. Weights and
/// moments are rounded to float32 afterwards.
void adamw_update(ParameterSet& params, std::vector<Tensor2>& m, std::vector<Tensor2>& v, int step_number,
                  const TrainConfig& config);

/// Corpus indices drawn for optimizer step `step` (0-based), one per slot
/// of the effective batch.
std::vector<std::size_t> batch_indices(const Rng& root, int step, int slots, std::size_t corpus_size);

class Trainer {
 public:
  Trainer(DiTSinger& model, const SyntheticCorpus& corpus, TrainConfig config);
  Trainer(DiTSinger& model, const SyntheticCorpus& corpus, TrainConfig config, TrainState resumed);

  /// Accumulates gradients over every slot of the effective batch, then
  /// applies one update. Returns the mean loss of the step.
  double step();
  /// Steps until state().step == config().iterations.
  void run(const std::function<void(const Trainer&)>& after_step = {});

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  DiTSinger& model() { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// Gradient of the mean loss over `slots` for the current weights
  /// (no update). Used to compare accumulation layouts.
  double accumulate_gradients(int step, int micro_batches, int micro_batch_size);

 private:
  DiTSinger& model_;
  const SyntheticCorpus& corpus_;
  TrainConfig config_;
  NoiseSchedule schedule_;
  TrainState state_;
};

// Training checkpoint: magic, version, model config JSON, train config
// JSON, step, rng state, then per parameter (name, shape, float32 weights,
// float32 first moment, float32 second moment), then the loss history;
// CRC-32 trailer.
inline constexpr std::uint32_t kTrainCheckpointVersion = 1;

struct TrainingCheckpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  TrainState state;
  std::vector<std::pair<std::string, Tensor2>> weights;
};

void save_training_checkpoint(const DiTSinger& model, const TrainConfig& config, const TrainState& state,
                              const std::filesystem::path& path);
TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& path);
/// Rebuilds the model from a training checkpoint.
std::unique_ptr<DiTSinger> restore_model(const TrainingCheckpoint& ckpt);

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

/// Seed used to initialize model weights for a training seed.
std::uint64_t model_init_seed(std::uint64_t train_seed);

struct TrainOptions {
  std::filesystem::path out_dir;                 // empty: no files written
  std::optional<TrainingCheckpoint> resume;
  std::function<void(const Trainer&)> on_step;
};

struct TrainResult {
  std::unique_ptr<DiTSinger> model;
  TrainState state;
  nlohmann::json report;
};

/// Layout of out_dir: checkpoints/step_NNNNNNN.ckpt, model.bin (final
/// weights only), loss.csv, train_report.json.
TrainResult train(const ModelConfig& model_config, const SyntheticCorpus& corpus, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Mean loss over the last `window` logged steps (all if fewer).
double tail_mean_loss(const std::vector<LossRecord>& history, std::size_t window);
double head_mean_loss(const std::vector<LossRecord>& history, std::size_t window);

// ---------------------------------------------------------------------------
// Evaluation against the oracle

enum class SamplerKind { Ode, Ancestral };
std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& s);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Ode;
  int steps = 50;
  double w = 4.0;
  std::uint64_t seed = 0;
  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

nlohmann::json to_json(const SamplerConfig& c);
SamplerConfig sampler_config_from_json(const nlohmann::json& j, SamplerConfig base = {});

MelTensor sample_mel(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                     const SamplerConfig& sampler, Rng& rng);

struct EvalRow {
  std::size_t sample = 0;
  MetricReport metrics;
  double band_accuracy = 0.0;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  double mcd = 0.0;
  double ffe = 0.0;
  std::optional<double> f0rmse;  // mean over rows that have one
  double band_accuracy = 0.0;
};

/// Samples every score of `corpus` (first `max_samples` when > 0) and
/// scores it against the oracle rendering. Sample i draws its initial noise
/// from Rng(sampler.seed).derive(i).
EvalSummary evaluate_model(const DiTSinger& model, const SyntheticCorpus& corpus, const NoiseSchedule& schedule,
                           const SamplerConfig& sampler, int max_samples = 0);

EvalSummary summarize(std::vector<EvalRow> rows);

// ---------------------------------------------------------------------------
// Experiment drivers

struct GroupBudget {
  int total_melodies = 40;
  int variants_per_melody = 8;
  double holdout_fraction = 0.25;
  std::string preset = "tiny";
  TrainConfig train;
  SamplerConfig sampler;
  int eval_samples = 16;
};

struct GroupRow {
  int n_groups = 0;
  int melodies_per_group = 0;
  std::size_t train_samples = 0;
  double final_loss = 0.0;
  EvalSummary eval;
};

/// Melodies are split into n_groups groups of total_melodies / n_groups,
/// speaker id = group index. Each setting trains from scratch.
std::vector<GroupRow> grouped_pseudosinger_experiment(const std::vector<int>& n_groups_list, const GroupBudget& budget,
                                                      std::uint64_t seed);

struct ScalingBudget {
  std::vector<std::string> presets{"tiny", "small_toy"};
  std::vector<int> melody_counts{8};
  int variants_per_melody = 8;
  TrainConfig train;
  SamplerConfig sampler;
  int eval_samples = 8;
  double flop_clip_seconds = 5.0;
};

struct ScalingRow {
  std::string preset;
  double gflops = 0.0;
  int melodies = 0;
  std::size_t train_samples = 0;
  double data_seconds = 0.0;
  double final_loss = 0.0;
  double proxy_mcd = 0.0;
};

std::vector<ScalingRow> scaling_experiment(const ScalingBudget& budget, std::uint64_t seed);

}  // namespace ditsinger
