#include "densegen/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "densegen/error.hpp"
#include "densegen/rng.hpp"

namespace densegen {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using NodePtr = std::shared_ptr<detail::Node>;

thread_local Tape* g_active_tape = nullptr;

ConstMap as_matrix(const Buffer& v, std::size_t offset,
                   std::size_t rows, std::size_t cols) {
  return ConstMap(v.data() + offset, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(Buffer& v, std::size_t offset, std::size_t rows,
                 std::size_t cols) {
  return MutMap(v.data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

std::size_t leading_rows(const Tensor& x) {
  return x.size() / x.shape().back();
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ", "));
}

Tensor::Tensor(Shape shape, double fill)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError(fmt::format("shape {} holds {} values, got {}",
                                     to_string(shape), numel(shape),
                                     data.size()));
  }
  node_->shape = std::move(shape);
  node_->value.assign(data.begin(), data.end());
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError(fmt::format("item() on tensor of shape {}",
                                     to_string(shape())));
  }
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return {node_->grad.begin(), node_->grad.end()};
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor make_op_result(Shape shape, Buffer value,
                      std::initializer_list<const Tensor*> inputs,
                      std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) {
      return t != nullptr && t->defined() && t->requires_grad();
    });
    if (needs) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      tape->nodes_.push_back(node);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_op_result_n(Shape shape, Buffer value,
                        const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      tape->nodes_.push_back(node);
    }
  }
  return Tensor(std::move(node));
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  reset();
  g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError(fmt::format(
        "backward() needs a scalar loss, got shape {}",
        loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward(): loss does not depend on any requires_grad tensor");
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
  }
  reset();
}

void Tape::reset() {
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  nodes_.clear();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          fmt::format("matmul: incompatible shapes {} and {}",
                      to_string(a.shape()), to_string(b.shape())));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer out(m * n);
  as_matrix(out, 0, m, n).noalias() =
      as_matrix(a.node()->value, 0, m, k) * as_matrix(b.node()->value, 0, k, n);
  NodePtr an = a.node(), bn = b.node();
  return make_op_result({m, n}, std::move(out), {&a, &b},
                        [an, bn, m, k, n](detail::Node& self) {
    auto g = as_matrix(self.grad, 0, m, n);
    if (an->requires_grad) {
      as_matrix(an->grad_buffer(), 0, m, k).noalias() +=
          g * as_matrix(bn->value, 0, k, n).transpose();
    }
    if (bn->requires_grad) {
      as_matrix(bn->grad_buffer(), 0, k, n).noalias() +=
          as_matrix(an->value, 0, m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.dim(0),
          fmt::format("linear: input {} does not match weight {}",
                      to_string(x.shape()), to_string(w.shape())));
  const bool has_bias = b.defined();
  if (has_bias) {
    require(b.rank() == 1 && b.dim(0) == w.dim(1),
            fmt::format("linear: bias {} does not match weight {}",
                        to_string(b.shape()), to_string(w.shape())));
  }
  const std::size_t in = w.dim(0), outd = w.dim(1), rows = leading_rows(x);
  Buffer out(rows * outd);
  auto y = as_matrix(out, 0, rows, outd);
  y.noalias() = as_matrix(x.node()->value, 0, rows, in) *
                as_matrix(w.node()->value, 0, in, outd);
  if (has_bias) {
    y.rowwise() += as_matrix(b.node()->value, 0, 1, outd).row(0);
  }
  Shape shape = x.shape();
  shape.back() = outd;
  NodePtr xn = x.node(), wn = w.node(), bn = has_bias ? b.node() : nullptr;
  return make_op_result(std::move(shape), std::move(out), {&x, &w, &b},
                        [xn, wn, bn, rows, in, outd](detail::Node& self) {
    auto g = as_matrix(self.grad, 0, rows, outd);
    if (xn->requires_grad) {
      as_matrix(xn->grad_buffer(), 0, rows, in).noalias() +=
          g * as_matrix(wn->value, 0, in, outd).transpose();
    }
    if (wn->requires_grad) {
      as_matrix(wn->grad_buffer(), 0, in, outd).noalias() +=
          as_matrix(xn->value, 0, rows, in).transpose() * g;
    }
    if (bn && bn->requires_grad) {
      as_matrix(bn->grad_buffer(), 0, 1, outd).row(0) += g.colwise().sum();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool suffix = bs.size() <= as.size() &&
                      std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  require(suffix, fmt::format("add: shape {} does not broadcast onto {}",
                              to_string(bs), to_string(as)));
  const std::size_t inner = b.size();
  const std::size_t reps = a.size() / inner;
  Buffer out(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t r = 0; r < reps; ++r) {
    double* o = out.data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) o[i] += bv[i];
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op_result(as, std::move(out), {&a, &b},
                        [an, bn, reps, inner](detail::Node& self) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t r = 0; r < reps; ++r) {
        const double* g = self.grad.data() + r * inner;
        for (std::size_t i = 0; i < inner; ++i) gb[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), fmt::format("sub: shapes {} and {} differ",
                                              to_string(a.shape()),
                                              to_string(b.shape())));
  Buffer out(a.size());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), {&a, &b},
                        [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), fmt::format("mul: shapes {} and {} differ",
                                              to_string(a.shape()),
                                              to_string(b.shape())));
  Buffer out(a.size());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodePtr an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), {&a, &b},
                        [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Buffer out(a.node()->value);
  for (double& v : out) v *= s;
  NodePtr an = a.node();
  return make_op_result(a.shape(), std::move(out), {&a}, [an, s](detail::Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  const auto& xv = x.node()->value;
  Buffer out(xv.size());
  auto tanh_values = std::make_shared<std::vector<double>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    (*tanh_values)[i] = t;
    out[i] = 0.5 * v * (1.0 + t);
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {&x},
                        [xn, tanh_values](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xn->value[i];
      const double t = (*tanh_values)[i];
      const double d = 0.5 * (1.0 + t) +
                       0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = leading_rows(x);
  const auto& xv = x.node()->value;
  Buffer out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = std::exp(in[i] - mx);
      total += o[i];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < n; ++i) o[i] *= inv;
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {&x},
                        [xn, rows, n](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      double* dx = gx.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  require(gain.size() == d && bias.size() == d,
          fmt::format("layer_norm: affine parameters {} / {} do not match input {}",
                      to_string(gain.shape()), to_string(bias.shape()),
                      to_string(x.shape())));
  const std::size_t rows = leading_rows(x);
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  Buffer out(xv.size());
  Buffer xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (in[i] - mu) * rstd[r];
      xhat[r * d + i] = h;
      out[r * d + i] = gv[i] * h + bv[i];
    }
  }
  NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_op_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, rows, d, xhat = std::move(xhat),
       rstd = std::move(rstd)](detail::Node& self) {
        const auto& g = self.grad;
        if (gn->requires_grad || bn->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) {
              if (gn->requires_grad) gn->grad_buffer()[i] += g[r * d + i] * xhat[r * d + i];
              if (bn->requires_grad) bn->grad_buffer()[i] += g[r * d + i];
            }
          }
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        const auto& gain_v = gn->value;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double dh = g[r * d + i] * gain_v[i];
            m1 += dh;
            m2 += dh * xhat[r * d + i];
          }
          m1 *= inv_d;
          m2 *= inv_d;
          for (std::size_t i = 0; i < d; ++i) {
            const double dh = g[r * d + i] * gain_v[i];
            gx[r * d + i] += rstd[r] * (dh - m1 - xhat[r * d + i] * m2);
          }
        }
      });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
          fmt::format("bmm: incompatible shapes {} and {}", to_string(a.shape()),
                      to_string(b.shape())));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  require(bk == k, fmt::format("bmm: inner dimensions of {} and {} differ",
                               to_string(a.shape()), to_string(b.shape())));
  Buffer out(batch * m * n);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < batch; ++i) {
    auto am = as_matrix(av, i * m * k, m, k);
    auto om = as_matrix(out, i * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * as_matrix(bv, i * n * k, n, k).transpose();
    } else {
      om.noalias() = am * as_matrix(bv, i * k * n, k, n);
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op_result({batch, m, n}, std::move(out), {&a, &b},
                        [an, bn, batch, m, k, n, transpose_b](detail::Node& self) {
    for (std::size_t i = 0; i < batch; ++i) {
      auto g = as_matrix(self.grad, i * m * n, m, n);
      if (an->requires_grad) {
        auto ga = as_matrix(an->grad_buffer(), i * m * k, m, k);
        if (transpose_b) {
          ga.noalias() += g * as_matrix(bn->value, i * n * k, n, k);
        } else {
          ga.noalias() += g * as_matrix(bn->value, i * k * n, k, n).transpose();
        }
      }
      if (bn->requires_grad) {
        auto am = as_matrix(an->value, i * m * k, m, k);
        if (transpose_b) {
          as_matrix(bn->grad_buffer(), i * n * k, n, k).noalias() += g.transpose() * am;
        } else {
          as_matrix(bn->grad_buffer(), i * k * n, k, n).noalias() += am.transpose() * g;
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(),
          fmt::format("reshape: {} cannot become {}", to_string(x.shape()),
                      to_string(shape)));
  NodePtr xn = x.node();
  return make_op_result(std::move(shape), x.node()->value, {&x},
                        [xn](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor swap_axes_12(const Tensor& x) {
  require(x.rank() == 4, fmt::format("swap_axes_12: expected rank 4, got {}",
                                     to_string(x.shape())));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  const auto& xv = x.node()->value;
  Buffer out(xv.size());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t l = 0; l < c; ++l)
        std::copy_n(xv.data() + ((i * b + j) * c + l) * d, d,
                    out.data() + ((i * c + l) * b + j) * d);
  NodePtr xn = x.node();
  return make_op_result({a, c, b, d}, std::move(out), {&x},
                        [xn, a, b, c, d](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t l = 0; l < c; ++l) {
          const double* g = self.grad.data() + ((i * c + l) * b + j) * d;
          double* dst = gx.data() + ((i * b + j) * c + l) * d;
          for (std::size_t e = 0; e < d; ++e) dst[e] += g[e];
        }
  });
}

Tensor mask_scores(const Tensor& x, std::span<const std::uint8_t> allowed) {
  require(x.rank() >= 2, "mask_scores: expected at least rank 2");
  const std::size_t plane = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  require(allowed.size() == plane,
          fmt::format("mask_scores: mask of {} entries for score planes {}",
                      allowed.size(), to_string(x.shape())));
  std::vector<std::uint8_t> keep(allowed.begin(), allowed.end());
  Buffer out(x.node()->value);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!keep[i % plane]) out[i] = neg_inf;
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {&x},
                        [xn, plane, keep = std::move(keep)](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (keep[i % plane]) gx[i] += self.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) ok = false;
    }
    require(ok, fmt::format("concat: shape {} incompatible with {} on axis {}",
                            to_string(p.shape()), to_string(first), axis));
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = shape[axis] * inner;
  Buffer out(numel(shape));
  std::size_t col = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    offsets.push_back(col);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * out_row + col);
    }
    col += chunk;
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return make_op_result_n(std::move(shape), std::move(out), parts,
                          [nodes, offsets, outer, out_row](detail::Node& self) {
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (!nodes[p]->requires_grad) continue;
      auto& gp = nodes[p]->grad_buffer();
      const std::size_t chunk = gp.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * out_row + offsets[p];
        double* dst = gp.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis),
          fmt::format("slice: [{}, {}) on axis {} of {}", begin, end, axis,
                      to_string(x.shape())));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t in_row = x.dim(axis) * inner;
  const std::size_t chunk = (end - begin) * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Buffer out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * in_row + begin * inner, chunk,
                out.data() + o * chunk);
  }
  NodePtr xn = x.node();
  const std::size_t start = begin * inner;
  return make_op_result(std::move(shape), std::move(out), {&x},
                        [xn, outer, in_row, chunk, start](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data() + o * chunk;
      double* dst = gx.data() + o * in_row + start;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
    }
  });
}

Tensor average_rows(const Tensor& x,
                    std::span<const std::pair<std::size_t, std::size_t>> sources) {
  require(x.rank() == 3, fmt::format("average_rows: expected [B,S,D], got {}",
                                     to_string(x.shape())));
  const std::size_t batch = x.dim(0), rows = x.dim(1), d = x.dim(2);
  const std::size_t out_rows = sources.size();
  for (const auto& [p, q] : sources) {
    require(p < rows && q < rows,
            fmt::format("average_rows: source row out of range for {}",
                        to_string(x.shape())));
  }
  std::vector<std::pair<std::size_t, std::size_t>> src(sources.begin(), sources.end());
  const auto& xv = x.node()->value;
  Buffer out(batch * out_rows * d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < out_rows; ++r) {
      const double* p = xv.data() + (b * rows + src[r].first) * d;
      const double* q = xv.data() + (b * rows + src[r].second) * d;
      double* o = out.data() + (b * out_rows + r) * d;
      for (std::size_t i = 0; i < d; ++i) o[i] = 0.5 * (p[i] + q[i]);
    }
  }
  NodePtr xn = x.node();
  return make_op_result({batch, out_rows, d}, std::move(out), {&x},
                        [xn, batch, rows, d, src = std::move(src)](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    const std::size_t out_rows = src.size();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < out_rows; ++r) {
        const double* g = self.grad.data() + (b * out_rows + r) * d;
        double* p = gx.data() + (b * rows + src[r].first) * d;
        for (std::size_t i = 0; i < d; ++i) p[i] += 0.5 * g[i];
        double* q = gx.data() + (b * rows + src[r].second) * d;
        for (std::size_t i = 0; i < d; ++i) q[i] += 0.5 * g[i];
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto& xv = x.node()->value;
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  NodePtr xn = x.node();
  return make_op_result({}, {total}, {&x}, [xn](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto& xv = x.node()->value;
  const double n = static_cast<double>(xv.size());
  const double avg = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
  NodePtr xn = x.node();
  return make_op_result({}, {avg}, {&x}, [xn, n](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (double& g : gx) g += self.grad[0] / n;
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), fmt::format("mse: shapes {} and {} differ",
                                              to_string(a.shape()),
                                              to_string(b.shape())));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double e = av[i] - bv[i];
    total += e * e;
  }
  const double n = static_cast<double>(av.size());
  NodePtr an = a.node(), bn = b.node();
  return make_op_result({}, {total / n}, {&a, &b}, [an, bn, n](detail::Node& self) {
    const double s = 2.0 * self.grad[0] / n;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * (an->value[i] - bn->value[i]);
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= s * (an->value[i] - bn->value[i]);
    }
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Buffer mask(x.size());
  for (double& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {&x},
                        [xn, mask = std::move(mask)](detail::Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

}  // namespace densegen
