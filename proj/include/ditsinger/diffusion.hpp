#pragma once

#include "ditsinger/model.hpp"
#include "ditsinger/numerics.hpp"
#include "ditsinger/score.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ditsinger {

enum class ScheduleKind { Linear, Cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::Linear;
  std::vector<double> beta;       // beta[t] for t in 1..T; beta[0] = 0
  std::vector<double> alpha_bar;  // alpha_bar[t] for t in 0..T; alpha_bar[0] = 1

  static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule cosine(int T = 1000, double offset = 0.008);
  static NoiseSchedule make(ScheduleKind kind, int T);

  /// log(alpha_bar) interpolated linearly between integer steps.
  double alpha_bar_at(double t) const;
  /// Half log signal-to-noise ratio: log(alpha / sigma).
  double log_snr(double t) const;
  /// Inverse of log_snr on [0, T] by bisection.
  double time_for_log_snr(double lambda) const;
};

struct GuidanceConfig {
  double w = 4.0;
  double cond_dropout_p = 0.1;
};

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps; t = 0 returns x0.
Tensor2 q_sample(const Tensor2& x0, int t, const Tensor2& eps, const NoiseSchedule& schedule);

/// One transition of the forward chain: sqrt(1 - beta_t) x + sqrt(beta_t) eps.
Tensor2 q_step(const Tensor2& x_prev, int t, const Tensor2& eps, const NoiseSchedule& schedule);

/// Noise predictor with a conditional and an unconditional branch.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor2 epsilon(const Tensor2& x_t, double t, bool conditional) const = 0;
};

/// Runs a DiTSinger without recording gradients.
class ModelDenoiser final : public Denoiser {
 public:
  ModelDenoiser(const DiTSinger& model, const ScoreSequence& score, Index frames);
  Tensor2 epsilon(const Tensor2& x_t, double t, bool conditional) const override;

 private:
  const DiTSinger& model_;
  ConditionBundle cond_;
  ConditionBundle uncond_;
};

/// eps_u + w (eps_c - eps_u). w = 0 and w = 1 return the respective branch.
Tensor2 cfg_combine(const Tensor2& eps_uncond, const Tensor2& eps_cond, double w);
Tensor2 cfg_epsilon(const Denoiser& denoiser, const Tensor2& x_t, double t, double w);
Tensor2 cfg_epsilon(const DiTSinger& model, const Tensor2& x_t, double t, const ConditionBundle& cond,
                    const ConditionBundle& uncond, double w);

/// Per-sample predictor used by the loss: (x_t, t, drop_conditions) -> eps_hat.
using LossPredictor = std::function<Var(const Var& x_t, int t, bool drop_conditions)>;

struct LossDraw {
  int t = 0;
  bool dropped = false;
};

/// Draws t ~ U{1..T}, the dropout decision and eps (in that order) from rng
/// and returns mean((eps - eps_hat)^2).
Var diffusion_loss(const LossPredictor& predict, const Tensor2& x0, Rng& rng, const NoiseSchedule& schedule,
                   double cond_dropout_p, LossDraw* draw = nullptr);

Var training_loss(const DiTSinger& model, const Tensor2& x0, const ScoreSequence& score, Rng& rng,
                  const NoiseSchedule& schedule, const GuidanceConfig& guidance, LossDraw* draw = nullptr);

/// Bounds applied to the clean-data estimate at every sampler step.
struct X0Clip {
  double lo = 0.0;
  double hi = 0.0;
};

/// Clip range matching the oracle renderer's output levels.
X0Clip mel_range_clip();

/// DDPM ancestral chain on `steps` evenly spaced timesteps (respaced betas).
/// No noise is added on the final step.
Tensor2 ancestral_chain(const Denoiser& denoiser, Tensor2 x_T, const NoiseSchedule& schedule, double w, Rng& rng, int steps,
                        std::optional<X0Clip> clip = std::nullopt);

/// First-order exponential-integrator solver for the probability-flow ODE.
/// Grid points are evenly spaced in log-SNR from t = T to t = 1; the last
/// step jumps to t = 0. Returns every state, x_T first, x_0 last. With a
/// clip the step is taken in its data-prediction form, which coincides with
/// the noise-prediction form when the bounds are inactive.
std::vector<Tensor2> ode_trajectory(const Denoiser& denoiser, Tensor2 x_T, const NoiseSchedule& schedule, double w, int steps,
                                    std::optional<X0Clip> clip = std::nullopt);
std::vector<double> ode_time_grid(const NoiseSchedule& schedule, int steps);

MelTensor sample_ancestral(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, Rng& rng, int steps);
MelTensor sample_ode(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                     const GuidanceConfig& guidance, Rng& rng, int steps);

}  // namespace ditsinger
