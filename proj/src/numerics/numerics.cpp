#include "ditsinger/numerics.hpp"

#include "ditsinger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <numbers>
#include <string>
#include <unordered_set>

namespace ditsinger {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void accumulate(const std::shared_ptr<Node>& parent, const Tensor2& g) {
  if (parent->requires_grad) parent->ensure_grad() += g;
}

}  // namespace

bool all_finite(const Tensor2& t) { return t.allFinite(); }

// ---------------------------------------------------------------------------
// Rng

std::uint64_t Rng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  ++counter_;
  return mix(key_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  DS_REQUIRE(n > 0, "uniform_int: empty range");
  // Rejection keeps the draw unbiased; the loop almost never repeats.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return r % n;
}

Rng Rng::derive(std::uint64_t index) const {
  Rng child;
  child.key_ = mix(key_ ^ mix(index + 0x632be59bd9b4e019ULL));
  child.counter_ = 0;
  return child;
}

Rng Rng::from_state(std::uint64_t key, std::uint64_t counter) {
  Rng r;
  r.key_ = key;
  r.counter_ = counter;
  return r;
}

Tensor2 seeded_gaussian(Rng& rng, Index rows, Index cols) {
  Tensor2 out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Softmax

namespace {

// Writes softmax(logits + bias) into out; returns true if any row was fully
// masked.
bool softmax_rows(const Tensor2& logits, const Tensor2& bias, Tensor2& out) {
  bool degenerate = false;
  out.resize(logits.rows(), logits.cols());
  Eigen::ArrayXd row(logits.cols());
  Eigen::ArrayXd keep(logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    keep = (bias.row(i).array() > kMaskedThreshold).cast<double>().transpose();
    if (keep.maxCoeff() == 0.0) {
      degenerate = true;
      out.row(i).setConstant(1.0 / static_cast<double>(logits.cols()));
      continue;
    }
    // Masked entries sit ~1e9 below the max and underflow; keep forces exact zeros.
    row = (logits.row(i) + bias.row(i)).array().transpose();
    row = (row - row.maxCoeff()).exp() * keep;
    out.row(i) = (row / row.sum()).transpose().matrix();
  }
  return degenerate;
}

void warn_degenerate() {
  std::fprintf(stderr, "ditsinger: warning: attention row fully masked, using uniform weights\n");
}

}  // namespace

Tensor2 softmax_with_bias(const Tensor2& logits, const Tensor2& bias) {
  require_same_shape(logits, bias, "softmax_with_bias");
  Tensor2 out;
  if (softmax_rows(logits, bias, out)) warn_degenerate();
  return out;
}

// ---------------------------------------------------------------------------
// Tape

Tensor2& Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Tensor2::Zero(value.rows(), value.cols());
  return grad;
}

Var::Var(Tensor2 value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor2& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
  if (node_) node_->grad = Tensor2::Zero(node_->value.rows(), node_->value.cols());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_result(Tensor2 value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node());
  out.node_->backward = std::move(backward_fn);
  return out;
}

void backward(const Var& root) {
  DS_REQUIRE(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) {
      n->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ag {

Var constant(Tensor2 value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: shape mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Tensor2 out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->ensure_grad().noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->ensure_grad().noalias() += pa->value.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw ContractViolation("matmul_nt: shape mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()) + "^T");
  }
  Tensor2 out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->ensure_grad().noalias() += self.grad * pb->value;
    if (pb->requires_grad) pb->ensure_grad().noalias() += self.grad.transpose() * pa->value;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->ensure_grad() += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->ensure_grad() += self.grad.cwiseProduct(pa->value);
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { accumulate(self.parents[0], self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  DS_REQUIRE(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
  Tensor2 out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad() += self.grad.colwise().sum();
  });
}

Var mul_row(const Var& a, const Var& row) {
  DS_REQUIRE(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be 1 x cols");
  Tensor2 out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pr = self.parents[1];
    if (pa->requires_grad) pa->ensure_grad().array() += self.grad.array().rowwise() * pr->value.row(0).array();
    if (pr->requires_grad) pr->ensure_grad() += self.grad.cwiseProduct(pa->value).colwise().sum();
  });
}

Var modulate(const Var& x, const Var& gamma, const Var& beta) {
  DS_REQUIRE(gamma.rows() == 1 && gamma.cols() == x.cols(), "modulate: gamma must be 1 x cols");
  DS_REQUIRE(beta.rows() == 1 && beta.cols() == x.cols(), "modulate: beta must be 1 x cols");
  Tensor2 gain = gamma.value().array() + 1.0;
  Tensor2 out = (x.value().array().rowwise() * gain.row(0).array()).rowwise() + beta.value().row(0).array();
  return make_result(std::move(out), {x, gamma, beta}, [gain = std::move(gain)](Node& self) {
    auto& px = self.parents[0];
    if (px->requires_grad) px->ensure_grad().array() += self.grad.array().rowwise() * gain.row(0).array();
    if (self.parents[1]->requires_grad) {
      self.parents[1]->ensure_grad() += self.grad.cwiseProduct(px->value).colwise().sum();
    }
    if (self.parents[2]->requires_grad) self.parents[2]->ensure_grad() += self.grad.colwise().sum();
  });
}

Var silu(const Var& a) {
  Tensor2 sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Tensor2 out = a.value().cwiseProduct(sig);
  return make_result(std::move(out), {a}, [sig = std::move(sig)](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    auto x = pa->value.array();
    auto s = sig.array();
    pa->ensure_grad().array() += self.grad.array() * (s * (1.0 + x * (1.0 - s)));
  });
}

Var gelu(const Var& a) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  auto x = a.value().array();
  Tensor2 th = (c * (x + k * x.cube())).tanh().matrix();
  Tensor2 out = (0.5 * x * (1.0 + th.array())).matrix();
  return make_result(std::move(out), {a}, [th = std::move(th)](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    auto xv = pa->value.array();
    auto t = th.array();
    auto d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t.square()) * c * (1.0 + 3.0 * k * xv.square());
    pa->ensure_grad().array() += self.grad.array() * d;
  });
}

Var layer_norm(const Var& a, double eps) {
  const Index n = a.cols();
  Tensor2 out(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  Tensor2 normed = out;
  return make_result(std::move(out), {a}, [normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    Tensor2& g = pa->ensure_grad();
    for (Index i = 0; i < normed.rows(); ++i) {
      const double mean_dy = self.grad.row(i).mean();
      const double mean_dy_y = self.grad.row(i).cwiseProduct(normed.row(i)).mean();
      g.row(i).array() +=
          inv_std(i) * (self.grad.row(i).array() - mean_dy - normed.row(i).array() * mean_dy_y);
    }
  });
}

Var l2_normalize_heads(const Var& a, int heads, double eps) {
  DS_REQUIRE(heads > 0 && a.cols() % heads == 0, "l2_normalize_heads: cols must divide by heads");
  const Index hd = a.cols() / heads;
  Tensor2 out(a.rows(), a.cols());
  Tensor2 norms(a.rows(), heads);
  for (Index i = 0; i < a.rows(); ++i) {
    for (int h = 0; h < heads; ++h) {
      const double nrm = std::sqrt(a.value().row(i).segment(h * hd, hd).squaredNorm() + eps);
      norms(i, h) = nrm;
      out.row(i).segment(h * hd, hd) = a.value().row(i).segment(h * hd, hd) / nrm;
    }
  }
  Tensor2 y = out;
  return make_result(std::move(out), {a}, [y = std::move(y), norms = std::move(norms), heads, hd](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    Tensor2& g = pa->ensure_grad();
    for (Index i = 0; i < y.rows(); ++i) {
      for (int h = 0; h < heads; ++h) {
        auto dy = self.grad.row(i).segment(h * hd, hd);
        auto yy = y.row(i).segment(h * hd, hd);
        const double proj = dy.dot(yy);
        g.row(i).segment(h * hd, hd) += (dy - proj * yy) / norms(i, h);
      }
    }
  });
}

Var scale_heads(const Var& a, const Var& temps, int heads) {
  DS_REQUIRE(heads > 0 && a.cols() % heads == 0, "scale_heads: cols must divide by heads");
  DS_REQUIRE(temps.rows() == 1 && temps.cols() == heads, "scale_heads: temps must be 1 x heads");
  const Index hd = a.cols() / heads;
  Tensor2 out = a.value();
  for (int h = 0; h < heads; ++h) out.middleCols(h * hd, hd) *= temps.value()(0, h);
  return make_result(std::move(out), {a, temps}, [heads, hd](Node& self) {
    auto& pa = self.parents[0];
    auto& pt = self.parents[1];
    for (int h = 0; h < heads; ++h) {
      if (pa->requires_grad) pa->ensure_grad().middleCols(h * hd, hd) += self.grad.middleCols(h * hd, hd) * pt->value(0, h);
      if (pt->requires_grad) {
        pt->ensure_grad()(0, h) += self.grad.middleCols(h * hd, hd).cwiseProduct(pa->value.middleCols(h * hd, hd)).sum();
      }
    }
  });
}

Var rope(const Var& a, std::span<const double> positions, int heads, double base) {
  DS_REQUIRE(heads > 0 && a.cols() % heads == 0, "rope: cols must divide by heads");
  const Index hd = a.cols() / heads;
  DS_REQUIRE(hd % 2 == 0, "rope: head dimension must be even");
  DS_REQUIRE(static_cast<Index>(positions.size()) == a.rows(), "rope: one position per row required");
  const Index pairs = hd / 2;
  Tensor2 cosv(a.rows(), pairs), sinv(a.rows(), pairs);
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index p = 0; p < pairs; ++p) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(hd));
      const double angle = positions[i] * freq;
      cosv(i, p) = std::cos(angle);
      sinv(i, p) = std::sin(angle);
    }
  }
  Tensor2 out(a.rows(), a.cols());
  const Tensor2& x = a.value();
  for (Index i = 0; i < x.rows(); ++i) {
    for (int h = 0; h < heads; ++h) {
      for (Index p = 0; p < pairs; ++p) {
        const Index c0 = h * hd + 2 * p;
        const double x0 = x(i, c0), x1 = x(i, c0 + 1);
        out(i, c0) = x0 * cosv(i, p) - x1 * sinv(i, p);
        out(i, c0 + 1) = x0 * sinv(i, p) + x1 * cosv(i, p);
      }
    }
  }
  return make_result(std::move(out), {a}, [cosv = std::move(cosv), sinv = std::move(sinv), heads, hd, pairs](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    Tensor2& g = pa->ensure_grad();
    for (Index i = 0; i < g.rows(); ++i) {
      for (int h = 0; h < heads; ++h) {
        for (Index p = 0; p < pairs; ++p) {
          const Index c0 = h * hd + 2 * p;
          const double d0 = self.grad(i, c0), d1 = self.grad(i, c0 + 1);
          g(i, c0) += d0 * cosv(i, p) + d1 * sinv(i, p);
          g(i, c0 + 1) += -d0 * sinv(i, p) + d1 * cosv(i, p);
        }
      }
    }
  });
}

namespace {

// dS = P .* (dP - rowsum(dP .* P)), the softmax Jacobian-vector product.
Tensor2 softmax_backward(const Tensor2& probs, const Tensor2& dprobs) {
  Eigen::VectorXd dots = dprobs.cwiseProduct(probs).rowwise().sum();
  Tensor2 ds = probs.cwiseProduct(dprobs);
  ds -= (probs.array().colwise() * dots.array()).matrix();
  return ds;
}

}  // namespace

Var softmax_bias(const Var& logits, const Tensor2& bias) {
  require_same_shape(logits.value(), bias, "softmax_bias");
  Tensor2 out;
  if (softmax_rows(logits.value(), bias, out)) warn_degenerate();
  Tensor2 probs = out;
  return make_result(std::move(out), {logits}, [probs = std::move(probs)](Node& self) {
    accumulate(self.parents[0], softmax_backward(probs, self.grad));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const Tensor2& bias, int heads, double scale,
              std::vector<Tensor2>* weights_out) {
  DS_REQUIRE(heads > 0, "attention: heads must be positive");
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw ContractViolation("attention: incompatible shapes q=" + shape_str(q.value()) + " k=" + shape_str(k.value()) +
                            " v=" + shape_str(v.value()));
  }
  if (bias.rows() != q.rows() || bias.cols() != k.rows()) {
    throw ContractViolation("attention: bias " + shape_str(bias) + " does not match " + std::to_string(q.rows()) + "x" +
                            std::to_string(k.rows()));
  }
  const Index qd = q.cols() / heads;
  const Index vd = v.cols() / heads;
  Tensor2 out(q.rows(), v.cols());
  std::vector<Tensor2> probs(heads);
  bool degenerate = false;
  for (int h = 0; h < heads; ++h) {
    Tensor2 logits = (q.value().middleCols(h * qd, qd) * k.value().middleCols(h * qd, qd).transpose()) * scale;
    degenerate = softmax_rows(logits, bias, probs[h]) || degenerate;
    out.middleCols(h * vd, vd).noalias() = probs[h] * v.value().middleCols(h * vd, vd);
  }
  if (degenerate) warn_degenerate();
  if (weights_out) *weights_out = probs;
  return make_result(std::move(out), {q, k, v}, [probs = std::move(probs), heads, qd, vd, scale](Node& self) {
    auto& pq = self.parents[0];
    auto& pk = self.parents[1];
    auto& pv = self.parents[2];
    for (int h = 0; h < heads; ++h) {
      auto dout = self.grad.middleCols(h * vd, vd);
      if (pv->requires_grad) pv->ensure_grad().middleCols(h * vd, vd).noalias() += probs[h].transpose() * dout;
      if (!pq->requires_grad && !pk->requires_grad) continue;
      Tensor2 dprobs = dout * pv->value.middleCols(h * vd, vd).transpose();
      Tensor2 dlogits = softmax_backward(probs[h], dprobs) * scale;
      if (pq->requires_grad) pq->ensure_grad().middleCols(h * qd, qd).noalias() += dlogits * pk->value.middleCols(h * qd, qd);
      if (pk->requires_grad) {
        pk->ensure_grad().middleCols(h * qd, qd).noalias() += dlogits.transpose() * pq->value.middleCols(h * qd, qd);
      }
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  DS_REQUIRE(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    auto& pa = self.parents[0];
    if (pa->requires_grad) pa->ensure_grad().middleRows(start, count) += self.grad;
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  DS_REQUIRE(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    auto& pa = self.parents[0];
    if (pa->requires_grad) pa->ensure_grad().middleCols(start, count) += self.grad;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  DS_REQUIRE(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    DS_REQUIRE(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor2 out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (p->requires_grad) p->ensure_grad() += self.grad.middleRows(offsets[i], p->value.rows());
    }
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  DS_REQUIRE(rows * cols == a.value().size(), "reshape: element count mismatch");
  Tensor2 out = Eigen::Map<const Tensor2>(a.value().data(), rows, cols);
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad() += Eigen::Map<const Tensor2>(self.grad.data(), pa->value.rows(), pa->value.cols());
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Tensor2 out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ContractViolation("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    auto& pt = self.parents[0];
    if (!pt->requires_grad) return;
    Tensor2& g = pt->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Var sum(const Var& a) {
  Tensor2 out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& pa = self.parents[0];
    if (pa->requires_grad) pa->ensure_grad().array() += self.grad(0, 0);
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse");
  Tensor2 diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  Tensor2 out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return make_result(std::move(out), {a, b}, [diff = std::move(diff), n](Node& self) {
    const double g = self.grad(0, 0) * 2.0 / n;
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad() += diff * g;
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad() -= diff * g;
  });
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double eval_scalar(const Var& y) {
  DS_REQUIRE(y.rows() == 1 && y.cols() == 1, "gradient_check: function must return a scalar");
  const double v = y.scalar();
  DS_REQUIRE(std::isfinite(v), "gradient_check: function value is not finite");
  return v;
}

}  // namespace

double gradient_check(const std::function<Var(const Var&)>& f, const Tensor2& x, double eps) {
  Var input(x, true);
  Var y = f(input);
  eval_scalar(y);
  backward(y);
  const Tensor2 analytic = input.grad();

  double worst = 0.0;
  Tensor2 probe = x;
  NoGradGuard no_grad;
  for (Index i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double up = eval_scalar(f(Var(probe)));
    probe.data()[i] = orig - eps;
    const double down = eval_scalar(f(Var(probe)));
    probe.data()[i] = orig;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double gradient_check_params(const std::function<Var()>& f, std::span<Var> params, double eps) {
  for (auto& p : params) p.zero_grad();
  Var y = f();
  eval_scalar(y);
  backward(y);
  std::vector<Tensor2> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor2& value = params[k].mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      const double orig = value.data()[i];
      value.data()[i] = orig + eps;
      const double up = eval_scalar(f());
      value.data()[i] = orig - eps;
      const double down = eval_scalar(f());
      value.data()[i] = orig;
      worst = std::max(worst, relative_error(analytic[k].data()[i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace ditsinger
