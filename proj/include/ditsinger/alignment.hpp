#pragma once

// Implicit phoneme-to-frame alignment: every phoneme inherits its
// character's span, pulled back by an offset, and cross-attention from
// latent frames to phonemes is restricted to those spans.

#include "ditsinger/numerics.hpp"
#include "ditsinger/score.hpp"

#include <span>
#include <string>
#include <vector>

namespace ditsinger {

struct ExtendedSpan {
  double t_start_ext = 0.0;
  double t_end = 0.0;
  int phoneme_index = 0;

  friend bool operator==(const ExtendedSpan&, const ExtendedSpan&) = default;
};

/// One entry per phoneme token, in token order. delta is in seconds. The
/// first character has no predecessor and is never extended.
std::vector<ExtendedSpan> extend_spans(const ScoreSequence& score, double delta);

/// Additive bias over (latent frame, phoneme). The last column is a reserved
/// silence token that frames outside every span attend to.
struct AlignmentMask {
  Index latent_frames = 0;
  Index phonemes = 0;  // token count + 1 (silence column)
  Tensor2 bias;        // entries are 0 or kMaskedBias
  double frame_clock = 0.0;
  std::vector<bool> unvoiced;  // frame lies in no extended span

  Index silence_column() const { return phonemes - 1; }
  bool allowed(Index frame, Index phoneme) const { return !is_masked(bias(frame, phoneme)); }
};

double frame_midpoint(Index frame, double frame_clock);

/// bias(i, j) = 0 iff the midpoint of frame i lies in the closed interval of
/// span j. A phoneme whose interval contains no midpoint (shorter than one
/// frame, or beyond the last frame) is given the frame nearest to its
/// interval so that no column is fully masked.
AlignmentMask build_mask(std::span<const ExtendedSpan> spans, Index latent_frames, double frame_clock);

AlignmentMask build_score_mask(const ScoreSequence& score, double delta, Index latent_frames, double frame_clock);

/// All-zero bias against a single column: the unconditional path.
AlignmentMask unconstrained_mask(Index latent_frames, Index phonemes, double frame_clock);

/// softmax(Q K^T / sqrt(d) + M) V with a single head.
Tensor2 masked_cross_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v, const AlignmentMask& mask,
                               Tensor2* weights_out = nullptr);

/// Mean over frames of the attention mass that lands on allowed positions.
double attention_concentration(const Tensor2& weights, const AlignmentMask& mask);

/// CSV grid with a header row; entries are "0" or "-inf".
std::string mask_to_csv(const AlignmentMask& mask);

}  // namespace ditsinger
