#pragma once

#include "ditsinger/numerics.hpp"
#include "ditsinger/score.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace ditsinger {

struct F0Track {
  std::vector<double> f0;  // Hz, 0 when unvoiced

  Index frames() const { return static_cast<Index>(f0.size()); }
  bool voiced(Index i) const { return f0[static_cast<std::size_t>(i)] > 0.0; }
};

struct MetricReport {
  double mcd = 0.0;                // dB
  double ffe = 0.0;                // fraction of frames
  std::optional<double> f0rmse;    // Hz; absent when no frame is voiced in both
  Index frames_compared = 0;
};

inline constexpr double kLoudnessReference = 0.0;
inline constexpr int kDefaultCepstrumOrder = 13;
inline constexpr double kFfeCentsThreshold = 50.0;

struct LoudnessResult {
  MelTensor mel;
  bool silent = false;  // no dynamic range; returned unchanged
};

/// Shifts all log-mel values so that the mean frame energy (mean over bins,
/// then over frames) equals kLoudnessReference.
LoudnessResult loudness_normalize(const MelTensor& mel);

/// Orthonormal DCT-II of each log-mel frame, keeping c1..c_order.
Tensor2 mel_cepstrum(const Tensor2& log_mel, int order);

using WarpPath = std::vector<std::pair<Index, Index>>;

/// Minimum cumulative Euclidean distance path with steps (1,0), (0,1),
/// (1,1). Among equal-cost paths the shortest is taken.
WarpPath dtw_align(const Tensor2& a, const Tensor2& b);
double path_cost(const Tensor2& a, const Tensor2& b, const WarpPath& path);

/// (10 / ln 10) * sqrt(2) * mean Euclidean cepstral distance along the DTW path.
double mcd(const MelTensor& a, const MelTensor& b, int order = kDefaultCepstrumOrder);
double mcd_along(const Tensor2& ceps_a, const Tensor2& ceps_b, const WarpPath& path);

double cents(double f_ref, double f_hyp);
double ffe(const F0Track& ref, const F0Track& hyp);
std::optional<double> f0_rmse(const F0Track& ref, const F0Track& hyp);

/// Pairs two tracks along a warping path (path.first indexes ref).
std::pair<F0Track, F0Track> align_tracks(const F0Track& ref, const F0Track& hyp, const WarpPath& path);

/// Loudness-normalizes both mels, aligns their cepstra with DTW and scores
/// F0 on the same path.
MetricReport evaluate_pair(const MelTensor& ref_mel, const F0Track& ref_f0, const MelTensor& hyp_mel,
                           const F0Track& hyp_f0, int order = kDefaultCepstrumOrder);

// Feature readers for oracle-rendered mels: argmax over the phoneme half
// and over the pitch half of the bins.
F0Track decode_f0(const MelTensor& mel);
std::vector<int> decode_phoneme_bands(const MelTensor& mel);

/// Fraction of oracle-voiced frames whose decoded phoneme band matches the
/// sounding phoneme's band. Returns 1 when no frame is voiced.
double band_accuracy(const MelTensor& hyp, const ScoreSequence& score);

}  // namespace ditsinger
