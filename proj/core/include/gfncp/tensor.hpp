#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gfncp {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Value-semantic handle to a dense row-major double tensor. Copies share
/// the underlying buffer; use clone() for an independent copy. The value
/// buffer is immutable once the tensor has entered a tape computation; the
/// grad buffer accumulates across backward passes until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> value,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->value.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::vector<double>& values() { return data_->value; }
  const std::vector<double>& values() const { return data_->value; }
  double scalar_value() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool v) { data_->requires_grad = v; }

  /// Gradient slot, lazily allocated to zeros. A leaf the root does not
  /// depend on therefore reads as zero.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Deep copy of values (fresh buffers, no grad, same requires_grad flag).
  Tensor clone() const;

  /// Identity of the underlying buffer; used by the tape to track producers.
  const detail::TensorData* id() const { return data_.get(); }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorData> data_;
};

/// Explicit per-forward-pass record of differentiable operations. Ops append
/// a node whenever recording is on and some input requires grad; backward()
/// replays the record once in reverse. There is no global tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-recording tape for pure evaluation.
  static Tape no_grad() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep seeding d(root)/d(root) = 1. root must be a scalar that
  /// this tape produced. Accumulates into grads of every tensor on the path;
  /// repeated calls keep accumulating until grads are zeroed.
  void backward(const Tensor& root);

  // Used by kernels; not part of the public surface.
  void record(std::function<void()> backward_fn, const Tensor& output);
  bool produced(const Tensor& t) const;

 private:
  explicit Tape(bool recording) : recording_(recording) {}
  bool recording_ = true;
  std::vector<std::function<void()>> nodes_;
  std::unordered_map<const detail::TensorData*, std::size_t> produced_;
};

// ---------------------------------------------------------------------------
// Kernels. Each checks operand shapes (error names the kernel and shapes),
// verifies the output is finite (overflow raises instead of propagating
// inf/nan), and records a backward node when grads are needed.
// ---------------------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

/// a{m,k} . b{k,n} -> {m,n}
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

/// x{m,k} . w{k,n} + b{n} (b broadcast over rows); x may also be rank-1 {k}.
Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(Tape& tape, const Tensor& x);
Tensor square(Tape& tape, const Tensor& x);
Tensor neg(Tape& tape, const Tensor& x);
Tensor scale(Tape& tape, const Tensor& x, double c);

Tensor sum_all(Tape& tape, const Tensor& x);
Tensor mean_all(Tape& tape, const Tensor& x);

/// Rank-2 axis 0 -> {cols} or axis 1 -> {rows}; rank-1 axis 0 -> scalar.
Tensor sum_axis(Tape& tape, const Tensor& x, int axis);

/// Max-shifted log-sum-exp over the last axis: rank-1 -> scalar {},
/// rank-2 {m,n} -> {m}.
Tensor logsumexp_last(Tape& tape, const Tensor& x);

/// Concatenate along the last axis. Rank-1 operands -> longer vector;
/// rank-2 operands with equal row counts -> wider matrix.
Tensor concat_last(Tape& tape, std::span<const Tensor> parts);

/// Stack equal-length rank-1 tensors into a {k, d} matrix.
Tensor stack_rows(Tape& tape, std::span<const Tensor> rows);

/// Contiguous row range [begin, end) of a rank-2 tensor.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin,
                  std::size_t end);

/// Row i of a rank-2 tensor as rank-1.
Tensor row(Tape& tape, const Tensor& x, std::size_t i);

/// Element i of a rank-1 tensor as a scalar.
Tensor element(Tape& tape, const Tensor& x, std::size_t i);

/// Same data, new shape (numel must match). Cheap copy with identity grad.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

/// Min over the last axis of a rank-1 tensor, value only. Deliberately not
/// differentiated: callers use it as a detached baseline shift.
double min_last_value(const Tensor& x);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
using LossFn = std::function<Tensor(Tape&)>;

/// Compares the analytic gradient of fn at point against central finite
/// differences with the given step. Returns
///   max_i |analytic_i - central_i| / max(1, |central_i|).
double grad_check(const ScalarFn& fn, const Tensor& point, double step);

/// Same comparison for a loss over shared parameter tensors: runs one
/// backward pass, then perturbs every parameter coordinate in place (values
/// are restored, grads are left zeroed). fn must rebuild its computation
/// from the live parameter values on every call.
double param_grad_check(const LossFn& fn, std::span<const Tensor> params,
                        double step);

}  // namespace gfncp
