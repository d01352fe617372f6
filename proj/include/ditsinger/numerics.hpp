#pragma once

// Dense row-major matrices, a small reverse-mode autodiff tape over them,
// the repo's random number generator and finite-difference gradient checks.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ditsinger {

using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Stand-in for -inf inside attention logits. Entries at or below
// kMaskedThreshold are treated as masked and forced to exactly zero weight.
inline constexpr double kMaskedBias = -1e9;
inline constexpr double kMaskedThreshold = -1e8;

inline bool is_masked(double bias) { return bias <= kMaskedThreshold; }

bool all_finite(const Tensor2& t);

/// SplitMix64 in counter form: draw n is mix(key + n * golden_gamma).
/// The whole state is (key, counter), so it serializes as two integers and
/// substreams are derived by hashing an index into a fresh key.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed)), counter_(0) {}

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // Box-Muller, two draws per call
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
  bool bernoulli(double p) { return uniform() < p; }

  Rng derive(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  static Rng from_state(std::uint64_t key, std::uint64_t counter);

  friend bool operator==(const Rng&, const Rng&) = default;

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

Tensor2 seeded_gaussian(Rng& rng, Index rows, Index cols);

/// Row-wise softmax of logits + bias. Masked positions come out exactly 0.
/// A row that is masked everywhere returns uniform weights and logs a warning.
Tensor2 softmax_with_bias(const Tensor2& logits, const Tensor2& bias);

// ---------------------------------------------------------------------------
// Reverse-mode autodiff

struct Node {
  Tensor2 value;
  Tensor2 grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor2& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor2 value, bool requires_grad = false);

  const Tensor2& value() const { return node_->value; }
  Tensor2& mutable_value() { return node_->value; }
  const Tensor2& grad() const;
  void zero_grad();
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }
  double scalar() const { return node_->value(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Tensor2, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

/// Disables tape recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var make_result(Tensor2 value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every leaf that
/// requires them. Root must be 1x1.
void backward(const Var& root);

namespace ag {

Var constant(Tensor2 value);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast 1 x c over rows
Var mul_row(const Var& a, const Var& row);
// x * (1 + gamma) + beta with gamma, beta of shape 1 x c.
Var modulate(const Var& x, const Var& gamma, const Var& beta);
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
// Layer normalization over columns without learned affine.
Var layer_norm(const Var& a, double eps = 1e-6);
// L2-normalizes each head's slice of every row; cols must divide by heads.
Var l2_normalize_heads(const Var& a, int heads, double eps = 1e-12);
// Multiplies head h's columns by temps(0, h).
Var scale_heads(const Var& a, const Var& temps, int heads);
// Rotary embedding applied independently within each head slice; pairs are
// (2i, 2i+1) with frequency base^(-2i/head_dim). positions has one entry per row.
Var rope(const Var& a, std::span<const double> positions, int heads, double base = 10000.0);
Var softmax_bias(const Var& logits, const Tensor2& bias);
// Multi-head scaled dot-product attention with a bias shared by all heads.
// Returns the concatenated head outputs, optionally the weights of each head.
Var attention(const Var& q, const Var& k, const Var& v, const Tensor2& bias, int heads, double scale,
              std::vector<Tensor2>* weights_out = nullptr);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& a, Index rows, Index cols);  // row-major reinterpretation
Var gather_rows(const Var& table, std::span<const int> ids);
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);  // mean of squared differences

}  // namespace ag

// ---------------------------------------------------------------------------
// Finite-difference verification

/// max over coordinates of |analytic - central| / max(1, |analytic|, |central|)
/// for a scalar function of one matrix input.
double gradient_check(const std::function<Var(const Var&)>& f, const Tensor2& x, double eps = 1e-6);

/// Same measure, perturbing the given leaves in place. f must rebuild its
/// graph from the current leaf values on every call.
double gradient_check_params(const std::function<Var()>& f, std::span<Var> params, double eps = 1e-6);

}  // namespace ditsinger
