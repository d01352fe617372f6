#pragma once

// Independent reference implementations used by the tests. None of these
// call into the library code they are compared against.

#include "ditsinger/numerics.hpp"
#include "ditsinger/score.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

using ditsinger::Index;
using ditsinger::ScoreSequence;
using ditsinger::Tensor2;

// Allowed[i][j] by direct evaluation of the span rule: the character that
// owns phoneme j is pulled back by min(delta, its duration, the previous
// character's duration) and frame i is allowed when its midpoint falls in
// the closed interval. A phoneme that no midpoint reaches is attached to the
// frame holding its interval centre. The trailing silence column is open
// exactly on frames no phoneme reached.
inline std::vector<std::vector<bool>> mask(const ScoreSequence& s, double delta, Index frames, double clock) {
  const std::size_t n = s.tokens.size();
  std::vector<std::vector<bool>> allowed(static_cast<std::size_t>(frames), std::vector<bool>(n + 1, false));
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t owner = 0;
    for (std::size_t c = 0; c < s.spans.size(); ++c) {
      if (static_cast<int>(j) >= s.spans[c].phoneme_begin && static_cast<int>(j) < s.spans[c].phoneme_end) owner = c;
    }
    const double start = s.spans[owner].start_time;
    const double dur = s.spans[owner].duration;
    const double prev = owner == 0 ? 0.0 : s.spans[owner - 1].duration;
    const double lo = start - std::min(delta, std::min(dur, prev));
    const double hi = start + dur;
    bool reached = false;
    for (Index i = 0; i < frames; ++i) {
      const double mid = clock * (static_cast<double>(i) + 0.5);
      if (lo <= mid && mid <= hi) {
        allowed[static_cast<std::size_t>(i)][j] = true;
        reached = true;
      }
    }
    if (!reached) {
      Index f = static_cast<Index>(std::floor((lo + hi) / 2.0 / clock));
      f = std::max<Index>(0, std::min(frames - 1, f));
      allowed[static_cast<std::size_t>(f)][j] = true;
    }
  }
  for (Index i = 0; i < frames; ++i) {
    auto& row = allowed[static_cast<std::size_t>(i)];
    row[n] = std::none_of(row.begin(), row.begin() + static_cast<long>(n), [](bool b) { return b; });
  }
  return allowed;
}

// Exhaustive monotone warping-path search. Returns the minimum total
// Euclidean cost over every path of (1,0)/(0,1)/(1,1) steps from (0,0) to
// the far corner, and the fewest steps among paths attaining that cost.
inline std::pair<double, std::size_t> dtw_exhaustive(const Tensor2& a, const Tensor2& b) {
  const Index n = a.rows(), m = b.rows();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_len = 0;
  std::function<void(Index, Index, double, std::size_t)> walk = [&](Index i, Index j, double cost, std::size_t len) {
    cost += (a.row(i) - b.row(j)).norm();
    ++len;
    if (i == n - 1 && j == m - 1) {
      if (cost < best - 1e-12 || (std::abs(cost - best) <= 1e-12 && len < best_len)) {
        best = cost;
        best_len = len;
      }
      return;
    }
    if (i + 1 < n) walk(i + 1, j, cost, len);
    if (j + 1 < m) walk(i, j + 1, cost, len);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, cost, len);
  };
  walk(0, 0, 0.0, 0);
  return {best, best_len};
}

// Orthonormal DCT-II of one row, coefficients 1..order.
inline std::vector<double> dct(const std::vector<double>& x, int order) {
  const std::size_t n = x.size();
  std::vector<double> out;
  for (int k = 1; k <= order; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::cos(M_PI * k * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    out.push_back(acc * std::sqrt(2.0 / static_cast<double>(n)));
  }
  return out;
}

// Central finite difference of a scalar function over every entry of a leaf,
// compared against the analytic gradient as |a - c| / max(|a|, |c|, floor).
inline double max_relative_error(const std::function<double()>& f, Tensor2& leaf, const Tensor2& analytic, double h,
                                 double floor, std::size_t max_coords = 0) {
  double worst = 0.0;
  const Index n = leaf.size();
  const Index stride = max_coords == 0 || static_cast<std::size_t>(n) <= max_coords
                           ? 1
                           : static_cast<Index>((static_cast<std::size_t>(n) + max_coords - 1) / max_coords);
  for (Index k = 0; k < n; k += stride) {
    const double keep = leaf.data()[k];
    leaf.data()[k] = keep + h;
    const double up = f();
    leaf.data()[k] = keep - h;
    const double down = f();
    leaf.data()[k] = keep;
    const double central = (up - down) / (2.0 * h);
    const double a = analytic.data()[k];
    worst = std::max(worst, std::abs(a - central) / std::max({std::abs(a), std::abs(central), floor}));
  }
  return worst;
}

// Random valid score with `chars` characters and at most `max_phonemes`
// tokens; durations are drawn on a 10 ms grid.
inline ScoreSequence random_score(ditsinger::Rng& rng, int chars, int max_phonemes, double min_dur, double max_dur,
                                  int vocab = 16) {
  ScoreSequence s;
  double t = 0.02 * static_cast<double>(rng.uniform_int(10));
  const int steps = static_cast<int>(std::round((max_dur - min_dur) / 0.01));
  for (int c = 0; c < chars; ++c) {
    const int remaining_chars = chars - c - 1;
    const int room = max_phonemes - static_cast<int>(s.tokens.size()) - remaining_chars;
    const int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(std::max(1, std::min(3, room)))));
    ditsinger::CharSpan span;
    span.start_time = t;
    span.duration = min_dur + 0.01 * static_cast<double>(rng.uniform_int(static_cast<std::uint64_t>(steps + 1)));
    span.phoneme_begin = static_cast<int>(s.tokens.size());
    for (int k = 0; k < n; ++k) {
      s.tokens.push_back({1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(vocab - 1))),
                          48 + static_cast<int>(rng.uniform_int(37)), ditsinger::duration_bucket(span.duration), false});
    }
    span.phoneme_end = static_cast<int>(s.tokens.size());
    s.spans.push_back(span);
    t += span.duration;
    if (rng.bernoulli(0.3)) t += 0.01 * static_cast<double>(rng.uniform_int(20));
  }
  s.total_duration = t + 0.1;
  return s;
}

}  // namespace oracle
