#include "ditsinger/alignment.hpp"

#include "ditsinger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ditsinger {

std::vector<ExtendedSpan> extend_spans(const ScoreSequence& score, double delta) {
  DS_REQUIRE(delta >= 0.0, "extend_spans: delta must be non-negative");
  std::vector<ExtendedSpan> out;
  out.reserve(score.tokens.size());
  for (std::size_t c = 0; c < score.spans.size(); ++c) {
    const auto& span = score.spans[c];
    const double d_prev = c == 0 ? 0.0 : score.spans[c - 1].duration;
    const double pull_back = std::min({delta, span.duration, d_prev});
    for (int j = span.phoneme_begin; j < span.phoneme_end; ++j) {
      out.push_back({span.start_time - pull_back, span.start_time + span.duration, j});
    }
  }
  return out;
}

double frame_midpoint(Index frame, double frame_clock) { return (static_cast<double>(frame) + 0.5) * frame_clock; }

AlignmentMask build_mask(std::span<const ExtendedSpan> spans, Index latent_frames, double frame_clock) {
  DS_REQUIRE(latent_frames >= 1, "build_mask: need at least one latent frame");
  DS_REQUIRE(frame_clock > 0.0, "build_mask: frame_clock must be positive");
  for (std::size_t j = 0; j < spans.size(); ++j) {
    if (spans[j].phoneme_index != static_cast<int>(j)) {
      throw ContractViolation("build_mask: phoneme ranges overlap or skip (span " + std::to_string(j) + " claims phoneme " +
                              std::to_string(spans[j].phoneme_index) + ")");
    }
    DS_REQUIRE(spans[j].t_start_ext <= spans[j].t_end, "build_mask: inverted interval");
  }

  const Index n = static_cast<Index>(spans.size());
  AlignmentMask mask;
  mask.latent_frames = latent_frames;
  mask.phonemes = n + 1;
  mask.frame_clock = frame_clock;
  mask.bias = Tensor2::Constant(latent_frames, n + 1, kMaskedBias);
  mask.unvoiced.assign(static_cast<std::size_t>(latent_frames), true);

  for (Index j = 0; j < n; ++j) {
    const auto& s = spans[static_cast<std::size_t>(j)];
    bool any = false;
    for (Index i = 0; i < latent_frames; ++i) {
      const double t = frame_midpoint(i, frame_clock);
      if (t >= s.t_start_ext && t <= s.t_end) {
        mask.bias(i, j) = 0.0;
        mask.unvoiced[static_cast<std::size_t>(i)] = false;
        any = true;
      }
    }
    if (!any) {
      const double centre = 0.5 * (s.t_start_ext + s.t_end);
      const auto nearest = static_cast<Index>(std::clamp(std::floor(centre / frame_clock), 0.0, static_cast<double>(latent_frames - 1)));
      mask.bias(nearest, j) = 0.0;
      mask.unvoiced[static_cast<std::size_t>(nearest)] = false;
    }
  }
  for (Index i = 0; i < latent_frames; ++i) {
    if (mask.unvoiced[static_cast<std::size_t>(i)]) mask.bias(i, n) = 0.0;
  }
  return mask;
}

AlignmentMask build_score_mask(const ScoreSequence& score, double delta, Index latent_frames, double frame_clock) {
  const auto spans = extend_spans(score, delta);
  return build_mask(spans, latent_frames, frame_clock);
}

AlignmentMask unconstrained_mask(Index latent_frames, Index phonemes, double frame_clock) {
  AlignmentMask mask;
  mask.latent_frames = latent_frames;
  mask.phonemes = phonemes;
  mask.frame_clock = frame_clock;
  mask.bias = Tensor2::Zero(latent_frames, phonemes);
  mask.unvoiced.assign(static_cast<std::size_t>(latent_frames), false);
  return mask;
}

Tensor2 masked_cross_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v, const AlignmentMask& mask,
                               Tensor2* weights_out) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ContractViolation("masked_cross_attention: Q/K/V dimensions disagree");
  }
  if (mask.bias.rows() != q.rows() || mask.bias.cols() != k.rows()) {
    throw ContractViolation("masked_cross_attention: mask is " + std::to_string(mask.bias.rows()) + "x" +
                            std::to_string(mask.bias.cols()) + " but attention is " + std::to_string(q.rows()) + "x" +
                            std::to_string(k.rows()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor2 logits = (q * k.transpose()) * scale;
  Tensor2 weights = softmax_with_bias(logits, mask.bias);
  Tensor2 out = weights * v;
  if (weights_out) *weights_out = std::move(weights);
  return out;
}

double attention_concentration(const Tensor2& weights, const AlignmentMask& mask) {
  DS_REQUIRE(weights.rows() == mask.bias.rows() && weights.cols() == mask.bias.cols(),
             "attention_concentration: weights and mask shapes differ");
  if (weights.rows() == 0) return 1.0;
  double total = 0.0;
  for (Index i = 0; i < weights.rows(); ++i) {
    for (Index j = 0; j < weights.cols(); ++j) {
      if (mask.allowed(i, j)) total += weights(i, j);
    }
  }
  return std::clamp(total / static_cast<double>(weights.rows()), 0.0, 1.0);
}

std::string mask_to_csv(const AlignmentMask& mask) {
  std::ostringstream out;
  out << "frame";
  for (Index j = 0; j + 1 < mask.phonemes; ++j) out << ",p" << j;
  out << ",silence\n";
  for (Index i = 0; i < mask.latent_frames; ++i) {
    out << i;
    for (Index j = 0; j < mask.phonemes; ++j) out << (mask.allowed(i, j) ? ",0" : ",-inf");
    out << '\n';
  }
  return out.str();
}

}  // namespace ditsinger
