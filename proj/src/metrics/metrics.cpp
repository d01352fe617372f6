#include "ditsinger/metrics.hpp"

#include "ditsinger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ditsinger {

LoudnessResult loudness_normalize(const MelTensor& mel) {
  DS_REQUIRE(all_finite(mel.values), "loudness_normalize: non-finite input");
  LoudnessResult out{mel, false};
  if (mel.values.size() == 0 || mel.values.maxCoeff() - mel.values.minCoeff() < 1e-12) {
    out.silent = true;
    return out;
  }
  const double level = mel.values.rowwise().mean().mean();
  out.mel.values.array() += kLoudnessReference - level;
  return out;
}

Tensor2 mel_cepstrum(const Tensor2& log_mel, int order) {
  const Index n = log_mel.cols();
  DS_REQUIRE(order >= 1 && order <= n, "mel_cepstrum: order must be in [1, bins]");
  Tensor2 basis(n, order);
  for (Index k = 1; k <= order; ++k) {
    const double s = std::sqrt(2.0 / static_cast<double>(n));
    for (Index i = 0; i < n; ++i) {
      basis(i, k - 1) = s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  return log_mel * basis;
}

WarpPath dtw_align(const Tensor2& a, const Tensor2& b) {
  DS_REQUIRE(a.rows() > 0 && b.rows() > 0, "dtw_align: empty sequence");
  DS_REQUIRE(a.cols() == b.cols(), "dtw_align: feature dimensions differ");
  const Index n = a.rows(), m = b.rows();
  const double inf = std::numeric_limits<double>::infinity();
  Tensor2 cost = Tensor2::Constant(n, m, inf);
  Eigen::MatrixXi length = Eigen::MatrixXi::Zero(n, m);
  Eigen::MatrixXi from = Eigen::MatrixXi::Constant(n, m, -1);  // 0 diag, 1 up (i-1), 2 left (j-1)
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      const double d = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        cost(0, 0) = d;
        length(0, 0) = 1;
        continue;
      }
      double best = inf;
      int best_len = std::numeric_limits<int>::max();
      int choice = -1;
      auto consider = [&](Index pi, Index pj, int tag) {
        if (pi < 0 || pj < 0) return;
        const double c = cost(pi, pj);
        const int len = length(pi, pj);
        if (c < best || (c == best && len < best_len)) {
          best = c;
          best_len = len;
          choice = tag;
        }
      };
      consider(i - 1, j - 1, 0);
      consider(i - 1, j, 1);
      consider(i, j - 1, 2);
      cost(i, j) = best + d;
      length(i, j) = best_len + 1;
      from(i, j) = choice;
    }
  }
  WarpPath path;
  Index i = n - 1, j = m - 1;
  while (true) {
    path.emplace_back(i, j);
    if (i == 0 && j == 0) break;
    switch (from(i, j)) {
      case 0: --i, --j; break;
      case 1: --i; break;
      default: --j; break;
    }
  }
  std::reverse(path.begin(), path.end());
  return path;
}

double path_cost(const Tensor2& a, const Tensor2& b, const WarpPath& path) {
  double total = 0.0;
  for (const auto& [i, j] : path) total += (a.row(i) - b.row(j)).norm();
  return total;
}

double mcd_along(const Tensor2& ceps_a, const Tensor2& ceps_b, const WarpPath& path) {
  DS_REQUIRE(!path.empty(), "mcd: empty path");
  const double k = 10.0 / std::numbers::ln10 * std::numbers::sqrt2;
  return k * path_cost(ceps_a, ceps_b, path) / static_cast<double>(path.size());
}

double mcd(const MelTensor& a, const MelTensor& b, int order) {
  DS_REQUIRE(a.bins() == b.bins(), "mcd: bin counts differ");
  const Tensor2 ca = mel_cepstrum(a.values, order);
  const Tensor2 cb = mel_cepstrum(b.values, order);
  return mcd_along(ca, cb, dtw_align(ca, cb));
}

double cents(double f_ref, double f_hyp) { return 1200.0 * std::log2(f_hyp / f_ref); }

double ffe(const F0Track& ref, const F0Track& hyp) {
  DS_REQUIRE(ref.frames() == hyp.frames(), "ffe: tracks must have equal frame counts");
  if (ref.frames() == 0) return 0.0;
  Index errors = 0;
  for (Index i = 0; i < ref.frames(); ++i) {
    const bool vr = ref.voiced(i), vh = hyp.voiced(i);
    if (vr != vh) {
      ++errors;
    } else if (vr && std::abs(cents(ref.f0[static_cast<std::size_t>(i)], hyp.f0[static_cast<std::size_t>(i)])) > kFfeCentsThreshold) {
      ++errors;
    }
  }
  return static_cast<double>(errors) / static_cast<double>(ref.frames());
}

std::optional<double> f0_rmse(const F0Track& ref, const F0Track& hyp) {
  DS_REQUIRE(ref.frames() == hyp.frames(), "f0_rmse: tracks must have equal frame counts");
  double sq = 0.0;
  Index n = 0;
  for (Index i = 0; i < ref.frames(); ++i) {
    if (!ref.voiced(i) || !hyp.voiced(i)) continue;
    const double d = hyp.f0[static_cast<std::size_t>(i)] - ref.f0[static_cast<std::size_t>(i)];
    sq += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(sq / static_cast<double>(n));
}

std::pair<F0Track, F0Track> align_tracks(const F0Track& ref, const F0Track& hyp, const WarpPath& path) {
  std::pair<F0Track, F0Track> out;
  for (const auto& [i, j] : path) {
    DS_REQUIRE(i < ref.frames() && j < hyp.frames(), "align_tracks: path exceeds track length");
    out.first.f0.push_back(ref.f0[static_cast<std::size_t>(i)]);
    out.second.f0.push_back(hyp.f0[static_cast<std::size_t>(j)]);
  }
  return out;
}

MetricReport evaluate_pair(const MelTensor& ref_mel, const F0Track& ref_f0, const MelTensor& hyp_mel, const F0Track& hyp_f0,
                           int order) {
  DS_REQUIRE(ref_mel.bins() == hyp_mel.bins(), "evaluate_pair: bin counts differ");
  DS_REQUIRE(ref_f0.frames() == ref_mel.frames() && hyp_f0.frames() == hyp_mel.frames(),
             "evaluate_pair: F0 track length must match its mel");
  const Tensor2 ca = mel_cepstrum(loudness_normalize(ref_mel).mel.values, order);
  const Tensor2 cb = mel_cepstrum(loudness_normalize(hyp_mel).mel.values, order);
  const WarpPath path = dtw_align(ca, cb);
  const auto [r, h] = align_tracks(ref_f0, hyp_f0, path);
  MetricReport report;
  report.mcd = mcd_along(ca, cb, path);
  report.ffe = ffe(r, h);
  report.f0rmse = f0_rmse(r, h);
  report.frames_compared = static_cast<Index>(path.size());
  return report;
}

F0Track decode_f0(const MelTensor& mel) {
  const Index half = mel.bins() / 2;
  const double threshold = 0.5 * (kMelFloor + kMelPeak);
  F0Track track;
  track.f0.assign(static_cast<std::size_t>(mel.frames()), 0.0);
  for (Index i = 0; i < mel.frames(); ++i) {
    Index arg = 0;
    const double peak = mel.values.row(i).segment(half, mel.bins() - half).maxCoeff(&arg);
    if (peak > threshold) {
      track.f0[static_cast<std::size_t>(i)] = pitch_band_center_hz(static_cast<int>(half + arg), static_cast<int>(mel.bins()));
    }
  }
  return track;
}

std::vector<int> decode_phoneme_bands(const MelTensor& mel) {
  const Index half = mel.bins() / 2;
  std::vector<int> bands(static_cast<std::size_t>(mel.frames()), 0);
  for (Index i = 0; i < mel.frames(); ++i) {
    Index arg = 0;
    mel.values.row(i).head(half).maxCoeff(&arg);
    bands[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return bands;
}

double band_accuracy(const MelTensor& hyp, const ScoreSequence& score) {
  const auto truth = oracle_frame_tokens(score, hyp.geometry());
  const auto bands = decode_phoneme_bands(hyp);
  DS_REQUIRE(truth.size() == bands.size(), "band_accuracy: mel length does not match the score");
  Index voiced = 0, hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;
    ++voiced;
    const int expected = phoneme_band(score.tokens[static_cast<std::size_t>(truth[i])].phoneme_id, static_cast<int>(hyp.bins()));
    if (bands[i] == expected) ++hits;
  }
  return voiced == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(voiced);
}

}  // namespace ditsinger
