#include "ditsinger/diffusion.hpp"

#include "ditsinger/errors.hpp"

#include <cmath>
#include <numbers>

namespace ditsinger {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw ContractViolation("unknown schedule kind '" + s + "'");
}

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  DS_REQUIRE(T >= 1, "schedule: T must be >= 1");
  DS_REQUIRE(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "schedule: bad beta range");
  NoiseSchedule s;
  s.T = T;
  s.kind = ScheduleKind::Linear;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

NoiseSchedule NoiseSchedule::cosine(int T, double offset) {
  DS_REQUIRE(T >= 1, "schedule: T must be >= 1");
  auto f = [&](double t) {
    const double x = (t / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0;
    return std::cos(x) * std::cos(x);
  };
  NoiseSchedule s;
  s.T = T;
  s.kind = ScheduleKind::Cosine;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int T) { return kind == ScheduleKind::Linear ? linear(T) : cosine(T); }

double NoiseSchedule::alpha_bar_at(double t) const {
  DS_REQUIRE(t >= 0.0 && t <= T, "alpha_bar_at: t outside [0, T]");
  const int lo = static_cast<int>(std::floor(t));
  if (lo >= T) return alpha_bar[T];
  const double frac = t - lo;
  if (frac == 0.0) return alpha_bar[lo];
  return std::exp((1.0 - frac) * std::log(alpha_bar[lo]) + frac * std::log(alpha_bar[lo + 1]));
}

double NoiseSchedule::log_snr(double t) const {
  const double ab = alpha_bar_at(t);
  return 0.5 * (std::log(ab) - std::log1p(-ab));
}

double NoiseSchedule::time_for_log_snr(double lambda) const {
  double lo = 0.0, hi = T;  // log_snr decreases in t
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == 0.0 || log_snr(mid) > lambda) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Tensor2 q_sample(const Tensor2& x0, int t, const Tensor2& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.T) throw ContractViolation("q_sample: t=" + std::to_string(t) + " outside [0, T]");
  DS_REQUIRE(x0.rows() == eps.rows() && x0.cols() == eps.cols(), "q_sample: eps shape differs from x0");
  if (t == 0) return x0;
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Tensor2 q_step(const Tensor2& x_prev, int t, const Tensor2& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T) throw ContractViolation("q_step: t=" + std::to_string(t) + " outside [1, T]");
  const double b = schedule.beta[static_cast<std::size_t>(t)];
  return std::sqrt(1.0 - b) * x_prev + std::sqrt(b) * eps;
}

// ---------------------------------------------------------------------------
// Guidance

ModelDenoiser::ModelDenoiser(const DiTSinger& model, const ScoreSequence& score, Index frames) : model_(model) {
  NoGradGuard no_grad;
  cond_ = model.condition(score, frames);
  uncond_ = model.unconditional(score.speaker_id, frames);
}

Tensor2 ModelDenoiser::epsilon(const Tensor2& x_t, double t, bool conditional) const {
  NoGradGuard no_grad;
  return model_.predict_noise(Var(x_t), t, conditional ? cond_ : uncond_).value();
}

Tensor2 cfg_combine(const Tensor2& eps_uncond, const Tensor2& eps_cond, double w) {
  DS_REQUIRE(w >= 0.0, "cfg: guidance strength must be non-negative");
  if (w == 0.0) return eps_uncond;
  if (w == 1.0) return eps_cond;
  return eps_uncond + w * (eps_cond - eps_uncond);
}

Tensor2 cfg_epsilon(const Denoiser& denoiser, const Tensor2& x_t, double t, double w) {
  DS_REQUIRE(w >= 0.0, "cfg: guidance strength must be non-negative");
  if (w == 0.0) return denoiser.epsilon(x_t, t, false);
  if (w == 1.0) return denoiser.epsilon(x_t, t, true);
  return cfg_combine(denoiser.epsilon(x_t, t, false), denoiser.epsilon(x_t, t, true), w);
}

Tensor2 cfg_epsilon(const DiTSinger& model, const Tensor2& x_t, double t, const ConditionBundle& cond,
                    const ConditionBundle& uncond, double w) {
  NoGradGuard no_grad;
  DS_REQUIRE(w >= 0.0, "cfg: guidance strength must be non-negative");
  if (w == 0.0) return model.predict_noise(Var(x_t), t, uncond).value();
  if (w == 1.0) return model.predict_noise(Var(x_t), t, cond).value();
  return cfg_combine(model.predict_noise(Var(x_t), t, uncond).value(), model.predict_noise(Var(x_t), t, cond).value(), w);
}

// ---------------------------------------------------------------------------
// Loss

Var diffusion_loss(const LossPredictor& predict, const Tensor2& x0, Rng& rng, const NoiseSchedule& schedule,
                   double cond_dropout_p, LossDraw* draw) {
  const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(schedule.T)));
  const bool dropped = rng.bernoulli(cond_dropout_p);
  const Tensor2 eps = seeded_gaussian(rng, x0.rows(), x0.cols());
  if (draw) *draw = {t, dropped};
  const Var x_t(q_sample(x0, t, eps, schedule));
  return ag::mse(predict(x_t, t, dropped), ag::constant(eps));
}

Var training_loss(const DiTSinger& model, const Tensor2& x0, const ScoreSequence& score, Rng& rng,
                  const NoiseSchedule& schedule, const GuidanceConfig& guidance, LossDraw* draw) {
  const auto& cfg = model.config();
  if (x0.cols() != cfg.mel_bins) {
    throw GeometryMismatch("training_loss: mel has " + std::to_string(x0.cols()) + " bins, model expects " +
                           std::to_string(cfg.mel_bins));
  }
  auto predict = [&](const Var& x_t, int t, bool drop) {
    const ConditionBundle c = drop ? model.unconditional(score.speaker_id, x0.rows()) : model.condition(score, x0.rows());
    return model.predict_noise(x_t, static_cast<double>(t), c);
  };
  return diffusion_loss(predict, x0, rng, schedule, guidance.cond_dropout_p, draw);
}

// ---------------------------------------------------------------------------
// Samplers

X0Clip mel_range_clip() { return {kMelFloor, kMelPeak}; }

namespace {

Tensor2 clip_x0(const Tensor2& x0, const X0Clip& c) { return x0.cwiseMax(c.lo).cwiseMin(c.hi); }

}  // namespace

Tensor2 ancestral_chain(const Denoiser& denoiser, Tensor2 x, const NoiseSchedule& schedule, double w, Rng& rng, int steps,
                        std::optional<X0Clip> clip) {
  DS_REQUIRE(steps >= 1 && steps <= schedule.T, "ancestral: steps must be in [1, T]");
  std::vector<int> grid(static_cast<std::size_t>(steps) + 1, 0);
  for (int i = 1; i <= steps; ++i) {
    grid[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(static_cast<double>(i) * schedule.T / steps));
  }
  for (int i = steps; i >= 1; --i) {
    const int t = grid[static_cast<std::size_t>(i)];
    const int t_prev = grid[static_cast<std::size_t>(i - 1)];
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_prev = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];
    const double beta = 1.0 - ab / ab_prev;
    const Tensor2 eps = cfg_epsilon(denoiser, x, t, w);
    Tensor2 mean;
    if (clip) {
      // Posterior mean written through the clean-data estimate.
      const Tensor2 x0 = clip_x0((x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab), *clip);
      mean = (std::sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)) * x;
    } else {
      mean = (x - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(1.0 - beta);
    }
    if (i > 1) {
      const double var = (1.0 - ab_prev) / (1.0 - ab) * beta;
      mean += std::sqrt(var) * seeded_gaussian(rng, x.rows(), x.cols());
    }
    x = std::move(mean);
  }
  return x;
}

std::vector<double> ode_time_grid(const NoiseSchedule& schedule, int steps) {
  DS_REQUIRE(steps >= 1, "ode: steps must be >= 1");
  std::vector<double> grid;
  grid.push_back(schedule.T);
  if (steps >= 2) {
    const double lam_start = schedule.log_snr(schedule.T);
    const double lam_end = schedule.log_snr(1.0);
    for (int i = 1; i < steps; ++i) {
      const double lam = lam_start + (lam_end - lam_start) * i / (steps - 1);
      grid.push_back(i == steps - 1 ? 1.0 : schedule.time_for_log_snr(lam));
    }
  }
  grid.push_back(0.0);
  return grid;
}

std::vector<Tensor2> ode_trajectory(const Denoiser& denoiser, Tensor2 x, const NoiseSchedule& schedule, double w, int steps,
                                    std::optional<X0Clip> clip) {
  const auto grid = ode_time_grid(schedule, steps);
  std::vector<Tensor2> states;
  states.reserve(grid.size());
  states.push_back(x);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double s = grid[i - 1];
    const double t = grid[i];
    const double ab_s = schedule.alpha_bar_at(s);
    const double alpha_s = std::sqrt(ab_s);
    const double sigma_s = std::sqrt(1.0 - ab_s);
    const Tensor2 eps = cfg_epsilon(denoiser, x, s, w);
    if (clip) {
      const Tensor2 x0 = clip_x0((x - sigma_s * eps) / alpha_s, *clip);
      if (t == 0.0) {
        x = x0;
      } else {
        const double ab_t = schedule.alpha_bar_at(t);
        x = std::sqrt(ab_t) * x0 + (std::sqrt(1.0 - ab_t) / sigma_s) * (x - alpha_s * x0);
      }
    } else if (t == 0.0) {
      x = (x - sigma_s * eps) / alpha_s;
    } else {
      const double ab_t = schedule.alpha_bar_at(t);
      const double alpha_t = std::sqrt(ab_t);
      const double sigma_t = std::sqrt(1.0 - ab_t);
      const double h = schedule.log_snr(t) - schedule.log_snr(s);
      x = (alpha_t / alpha_s) * x - sigma_t * std::expm1(h) * eps;
    }
    states.push_back(x);
  }
  return states;
}

namespace {

MelTensor wrap_mel(const DiTSinger& model, Tensor2 values) {
  MelTensor mel;
  mel.hop = model.config().hop;
  mel.sample_rate = model.config().sample_rate;
  mel.values = std::move(values);
  return mel;
}

}  // namespace

MelTensor sample_ancestral(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                           const GuidanceConfig& guidance, Rng& rng, int steps) {
  const Index frames = model.config().geometry().frames_for(score.total_duration);
  DS_REQUIRE(frames >= model.config().downsample_factor, "sample: score shorter than one latent frame");
  const ModelDenoiser denoiser(model, score, frames);
  Tensor2 x = seeded_gaussian(rng, frames, model.config().mel_bins);
  return wrap_mel(model, ancestral_chain(denoiser, std::move(x), schedule, guidance.w, rng, steps, mel_range_clip()));
}

MelTensor sample_ode(const DiTSinger& model, const ScoreSequence& score, const NoiseSchedule& schedule,
                     const GuidanceConfig& guidance, Rng& rng, int steps) {
  const Index frames = model.config().geometry().frames_for(score.total_duration);
  DS_REQUIRE(frames >= model.config().downsample_factor, "sample: score shorter than one latent frame");
  const ModelDenoiser denoiser(model, score, frames);
  Tensor2 x = seeded_gaussian(rng, frames, model.config().mel_bins);
  auto states = ode_trajectory(denoiser, std::move(x), schedule, guidance.w, steps, mel_range_clip());
  return wrap_mel(model, std::move(states.back()));
}

}  // namespace ditsinger
