#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace densegen {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// Cache-line aligned storage. Vectorized kernels split loops by the address
/// alignment, so fixing it keeps results bit-identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

}  // namespace detail

using Buffer = std::vector<double, detail::AlignedAllocator<double>>;

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  Buffer& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with shared value semantics: copies of a
/// Tensor alias the same node, which is what lets parameters be updated in
/// place and identified across calls.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Writable storage. Only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient accumulated by Tape::backward; zeros if none was accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Stable identity of the underlying storage.
  const void* id() const { return node_.get(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, Buffer,
                               std::initializer_list<const Tensor*>,
                               std::function<void(detail::Node&)>);
  friend Tensor make_op_result_n(Shape, Buffer,
                                 const std::vector<Tensor>&,
                                 std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Creates the result of an operation. When a tape is active and any input
/// requires grad, the result is recorded with `backward`, which receives the
/// result node (value and incoming gradient) and accumulates into inputs.
Tensor make_op_result(Shape shape, Buffer value,
                      std::initializer_list<const Tensor*> inputs,
                      std::function<void(detail::Node&)> backward);
Tensor make_op_result_n(Shape shape, Buffer value,
                        const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward);

/// Records differentiable operations for one backward pass. Constructing a
/// Tape makes it the active tape of the calling thread until it is
/// destroyed; operations performed with no active tape build no graph.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populates gradients on every requires_grad leaf reachable from `loss`
  /// and then consumes the tape.
  void backward(const Tensor& loss);
  void reset();
  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

 private:
  friend Tensor make_op_result(Shape, Buffer,
                               std::initializer_list<const Tensor*>,
                               std::function<void(detail::Node&)>);
  friend Tensor make_op_result_n(Shape, Buffer,
                                 const std::vector<Tensor>&,
                                 std::function<void(detail::Node&)>);

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_ = nullptr;
};

/// Temporarily disables recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// ---------------------------------------------------------------------------
// Operations. All of them are pure with respect to their inputs and record a
// backward rule when a tape is active and any input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in, out] + b[out]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Elementwise sum. `b` may have the shape of a trailing suffix of `a`'s
/// shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Batched product over 3-D tensors: a[B,m,k] * b[B,k,n], or a * b^T when
/// `transpose_b` (b is then [B,n,k]).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor reshape(const Tensor& x, Shape shape);
/// [A,B,C,D] -> [A,C,B,D].
Tensor swap_axes_12(const Tensor& x);

/// Scores x[..., q, k] with entries where allowed[q * k_len + k] == 0 set to
/// -inf, so that a following softmax assigns them zero weight.
Tensor mask_scores(const Tensor& x, std::span<const std::uint8_t> allowed);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);

/// Row mixing along axis 1 of x[B,S,D]: output row r is
/// 0.5 * (x[:, first] + x[:, second]) for sources[r] = {first, second}.
/// A pair with first == second copies the row exactly.
Tensor average_rows(const Tensor& x,
                    std::span<const std::pair<std::size_t, std::size_t>> sources);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// mean((a - b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace densegen
