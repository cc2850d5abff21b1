#include "gfncp/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gfncp {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

[[noreturn]] void fail(const std::string& kernel, const std::string& what,
                       std::initializer_list<const Tensor*> ins) {
  std::ostringstream os;
  os << "gfncp::" << kernel << ": " << what;
  if (ins.size() > 0) {
    os << " (operands:";
    for (const Tensor* t : ins) os << ' ' << shape_str(t->shape());
    os << ')';
  }
  throw std::runtime_error(os.str());
}

void require(bool cond, const std::string& kernel, const std::string& what,
             std::initializer_list<const Tensor*> ins) {
  if (!cond) fail(kernel, what, ins);
}

/// Overflow and invalid-operation results stop the computation here rather
/// than surfacing later as nan losses.
void check_finite(const std::string& kernel, const Tensor& out,
                  std::initializer_list<const Tensor*> ins) {
  for (double v : out.values())
    if (!std::isfinite(v)) fail(kernel, "non-finite output", ins);
}

bool want_grad(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

/// Output grad buffer if the reverse sweep has reached this node, else null.
const std::vector<double>* out_grad(const Tensor& out) {
  const std::vector<double>& g = out.grad();
  bool any = false;
  for (double v : g)
    if (v != 0.0) {
      any = true;
      break;
    }
  return any ? &g : nullptr;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "{";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  out += '}';
  return out;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  t.data_->value.assign(numel_of(shape), fill);
  t.data_->shape = std::move(shape);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> value, bool requires_grad) {
  if (value.size() != numel_of(shape))
    throw std::runtime_error("gfncp::Tensor::from: " + std::to_string(value.size()) +
                             " values for shape " + shape_str(shape));
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  t.data_->shape = std::move(shape);
  t.data_->value = std::move(value);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({}, {v}, requires_grad);
}

double Tensor::scalar_value() const {
  if (numel() != 1)
    throw std::runtime_error("gfncp::Tensor::scalar_value: shape " + shape_str(shape()));
  return data_->value[0];
}

std::vector<double>& Tensor::grad() {
  if (data_->grad.empty()) data_->grad.assign(numel(), 0.0);
  return data_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (data_->grad.empty()) data_->grad.assign(numel(), 0.0);
  return data_->grad;
}

void Tensor::zero_grad() {
  std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  t.data_->shape = data_->shape;
  t.data_->value = data_->value;
  t.data_->requires_grad = data_->requires_grad;
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::record(std::function<void()> backward_fn, const Tensor& output) {
  if (!recording_) return;
  produced_[output.id()] = nodes_.size();
  nodes_.push_back(std::move(backward_fn));
}

bool Tape::produced(const Tensor& t) const {
  return produced_.count(t.id()) > 0;
}

void Tape::backward(const Tensor& root) {
  if (!recording_)
    throw std::runtime_error("gfncp::Tape::backward: tape is in no_grad mode");
  if (!root.is_scalar())
    throw std::runtime_error("gfncp::Tape::backward: root has shape " +
                             shape_str(root.shape()) + ", expected scalar");
  if (!produced(root))
    throw std::runtime_error("gfncp::Tape::backward: root was not produced by this tape");
  Tensor seed = root;  // shares the buffer; drops constness
  seed.grad()[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add", "shape mismatch", {&a, &b});
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  check_finite("add", out, {&a, &b});
  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(
        [a = a, b = b, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
          }
        },
        out);
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub", "shape mismatch", {&a, &b});
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  check_finite("sub", out, {&a, &b});
  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(
        [a = a, b = b, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
          }
        },
        out);
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul", "shape mismatch", {&a, &b});
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  check_finite("mul", out, {&a, &b});
  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(
        [a = a, b = b, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * b.values()[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * a.values()[i];
          }
        },
        out);
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, x.values()[i]);
  Tensor out = Tensor::from(x.shape(), std::move(v));
  check_finite("relu", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < g->size(); ++i)
            if (x.values()[i] > 0.0) gx[i] += (*g)[i];
        },
        out);
  }
  return out;
}

Tensor square(Tape& tape, const Tensor& x) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * x.values()[i];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  check_finite("square", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < g->size(); ++i) gx[i] += 2.0 * x.values()[i] * (*g)[i];
        },
        out);
  }
  return out;
}

Tensor neg(Tape& tape, const Tensor& x) { return scale(tape, x, -1.0); }

Tensor scale(Tape& tape, const Tensor& x, double c) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * x.values()[i];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  check_finite("scale", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, c]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < g->size(); ++i) gx[i] += c * (*g)[i];
        },
        out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul", "operands must be rank-2", {&a, &b});
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul", "inner dimension mismatch", {&a, &b});
  Tensor out = Tensor::zeros({m, n});
  {
    ECMap A(a.values().data(), m, k), B(b.values().data(), k, n);
    EMap C(out.values().data(), m, n);
    C.noalias() = A * B;
  }
  check_finite("matmul", out, {&a, &b});
  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(
        [a = a, b = b, out, m, k, n]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          ECMap G(g->data(), m, n);
          if (a.requires_grad()) {
            ECMap B(b.values().data(), k, n);
            EMap GA(a.grad().data(), m, k);
            GA.noalias() += G * B.transpose();
          }
          if (b.requires_grad()) {
            ECMap A(a.values().data(), m, k);
            EMap GB(b.grad().data(), k, n);
            GB.noalias() += A.transpose() * G;
          }
        },
        out);
  }
  return out;
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 1 || x.rank() == 2, "affine", "input must be rank-1 or rank-2",
          {&x, &w, &b});
  require(w.rank() == 2 && b.rank() == 1, "affine", "weight must be rank-2, bias rank-1",
          {&x, &w, &b});
  const bool vec = x.rank() == 1;
  const std::size_t m = vec ? 1 : x.shape()[0];
  const std::size_t k = vec ? x.shape()[0] : x.shape()[1];
  const std::size_t n = w.shape()[1];
  require(w.shape()[0] == k && b.shape()[0] == n, "affine", "dimension mismatch",
          {&x, &w, &b});
  Tensor out = vec ? Tensor::zeros({n}) : Tensor::zeros({m, n});
  {
    ECMap X(x.values().data(), m, k), W(w.values().data(), k, n);
    ECMap B(b.values().data(), 1, n);
    EMap Y(out.values().data(), m, n);
    Y.noalias() = X * W;
    Y.rowwise() += B.row(0);
  }
  check_finite("affine", out, {&x, &w, &b});
  if (want_grad(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, w = w, b = b, out, m, k, n]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          ECMap G(g->data(), m, n);
          if (x.requires_grad()) {
            ECMap W(w.values().data(), k, n);
            EMap GX(x.grad().data(), m, k);
            GX.noalias() += G * W.transpose();
          }
          if (w.requires_grad()) {
            ECMap X(x.values().data(), m, k);
            EMap GW(w.grad().data(), k, n);
            GW.noalias() += X.transpose() * G;
          }
          if (b.requires_grad()) {
            EMap GB(b.grad().data(), 1, n);
            GB.row(0) += G.colwise().sum();
          }
        },
        out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite("sum_all", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (double& v : gx) v += (*g)[0];
        },
        out);
  }
  return out;
}

Tensor mean_all(Tape& tape, const Tensor& x) {
  return scale(tape, sum_all(tape, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(Tape& tape, const Tensor& x, int axis) {
  if (x.rank() == 1) {
    require(axis == 0, "sum_axis", "axis out of range for rank-1", {&x});
    return sum_all(tape, x);
  }
  require(x.rank() == 2 && (axis == 0 || axis == 1), "sum_axis",
          "expected rank-2 with axis 0 or 1", {&x});
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const std::size_t len = axis == 0 ? n : m;
  std::vector<double> v(len, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[axis == 0 ? j : i] += x.values()[i * n + j];
  Tensor out = Tensor::from({len}, std::move(v));
  check_finite("sum_axis", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, m, n, axis]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] += (*g)[axis == 0 ? j : i];
        },
        out);
  }
  return out;
}

Tensor logsumexp_last(Tape& tape, const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, "logsumexp_last", "expected rank-1 or rank-2",
          {&x});
  const std::size_t rows = x.rank() == 1 ? 1 : x.shape()[0];
  const std::size_t n = x.rank() == 1 ? x.shape()[0] : x.shape()[1];
  require(n > 0, "logsumexp_last", "empty axis", {&x});
  std::vector<double> v(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.values().data() + i * n;
    double m = xi[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xi[j] - m);
    v[i] = m + std::log(s);
  }
  Tensor out = x.rank() == 1 ? Tensor::from({}, std::move(v))
                             : Tensor::from({rows}, std::move(v));
  check_finite("logsumexp_last", out, {&x});
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, rows, n]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < rows; ++i) {
            const double* xi = x.values().data() + i * n;
            const double oi = out.values()[i];
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] += (*g)[i] * std::exp(xi[j] - oi);
          }
        },
        out);
  }
  return out;
}

double min_last_value(const Tensor& x) {
  if (x.rank() != 1 || x.numel() == 0)
    throw std::runtime_error("gfncp::min_last_value: expected nonempty rank-1, got " +
                             shape_str(x.shape()));
  return *std::min_element(x.values().begin(), x.values().end());
}

// ---------------------------------------------------------------------------
// Structural kernels
// ---------------------------------------------------------------------------

Tensor concat_last(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw std::runtime_error("gfncp::concat_last: no operands");
  const std::size_t rank = parts[0].rank();
  require(rank == 1 || rank == 2, "concat_last", "expected rank-1 or rank-2",
          {&parts[0]});
  const std::size_t rows = rank == 1 ? 1 : parts[0].shape()[0];
  std::size_t width = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == rank && (rank == 1 || p.shape()[0] == rows), "concat_last",
            "incompatible operand", {&parts[0], &p});
    width += p.shape()[rank - 1];
  }
  Tensor out = rank == 1 ? Tensor::zeros({width}) : Tensor::zeros({rows, width});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[rank - 1];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.values()[i * width + off + j] = p.values()[i * w + j];
    off += w;
  }
  check_finite("concat_last", out, {&parts[0]});
  bool grad = false;
  if (tape.recording())
    for (const Tensor& p : parts)
      if (p.requires_grad()) grad = true;
  if (grad) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape.record(
        [held = std::move(held), out, rows, width]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          std::size_t off = 0;
          for (Tensor& p : held) {
            const std::size_t w = p.shape()[p.rank() - 1];
            if (p.requires_grad()) {
              auto& gp = p.grad();
              for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j)
                  gp[i * w + j] += (*g)[i * width + off + j];
            }
            off += w;
          }
        },
        out);
  }
  return out;
}

Tensor stack_rows(Tape& tape, std::span<const Tensor> rows) {
  if (rows.empty()) throw std::runtime_error("gfncp::stack_rows: no operands");
  const std::size_t d = rows[0].numel();
  for (const Tensor& r : rows)
    require(r.rank() == 1 && r.numel() == d, "stack_rows", "incompatible row",
            {&rows[0], &r});
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].values().begin(), rows[i].values().end(),
              out.values().begin() + i * d);
  check_finite("stack_rows", out, {&rows[0]});
  bool grad = false;
  if (tape.recording())
    for (const Tensor& r : rows)
      if (r.requires_grad()) grad = true;
  if (grad) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(rows.begin(), rows.end());
    tape.record(
        [held = std::move(held), out, d]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          for (std::size_t i = 0; i < held.size(); ++i) {
            if (!held[i].requires_grad()) continue;
            auto& gr = held[i].grad();
            for (std::size_t j = 0; j < d; ++j) gr[j] += (*g)[i * d + j];
          }
        },
        out);
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 2, "slice_rows", "expected rank-2", {&x});
  require(begin <= end && end <= x.shape()[0], "slice_rows", "range out of bounds", {&x});
  const std::size_t n = x.shape()[1];
  std::vector<double> v(x.values().begin() + begin * n, x.values().begin() + end * n);
  Tensor out = Tensor::from({end - begin, n}, std::move(v));
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, begin, n]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < g->size(); ++i) gx[begin * n + i] += (*g)[i];
        },
        out);
  }
  return out;
}

Tensor row(Tape& tape, const Tensor& x, std::size_t i) {
  require(x.rank() == 2, "row", "expected rank-2", {&x});
  require(i < x.shape()[0], "row", "index out of bounds", {&x});
  const std::size_t n = x.shape()[1];
  std::vector<double> v(x.values().begin() + i * n, x.values().begin() + (i + 1) * n);
  Tensor out = Tensor::from({n}, std::move(v));
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, i, n]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (*g)[j];
        },
        out);
  }
  return out;
}

Tensor element(Tape& tape, const Tensor& x, std::size_t i) {
  require(x.rank() == 1, "element", "expected rank-1", {&x});
  require(i < x.numel(), "element", "index out of bounds", {&x});
  Tensor out = Tensor::scalar(x.values()[i]);
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out, i]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          x.grad()[i] += (*g)[0];
        },
        out);
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require(numel_of(shape) == x.numel(), "reshape", "element count mismatch", {&x});
  Tensor out = Tensor::from(std::move(shape), x.values());
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape.record(
        [x = x, out]() mutable {
          const std::vector<double>* g = out_grad(out);
          if (!g) return;
          auto& gx = x.grad();
          for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
        },
        out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& fn, const Tensor& point, double step) {
  Tensor p = point.clone();
  p.set_requires_grad(true);
  Tape tape;
  Tensor out = fn(tape, p);
  if (!out.is_scalar())
    throw std::runtime_error("gfncp::grad_check: fn must return a scalar, got " +
                             shape_str(out.shape()));
  tape.backward(out);
  const std::vector<double> analytic = p.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    Tensor hi = point.clone(), lo = point.clone();
    hi.values()[i] += step;
    lo.values()[i] -= step;
    Tape th = Tape::no_grad(), tl = Tape::no_grad();
    const double central =
        (fn(th, hi).scalar_value() - fn(tl, lo).scalar_value()) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

double param_grad_check(const LossFn& fn, std::span<const Tensor> params,
                        double step) {
  for (const Tensor& p : params) {
    Tensor t = p;
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = fn(tape);
    if (!loss.is_scalar())
      throw std::runtime_error("gfncp::param_grad_check: fn must return a scalar");
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    analytic.push_back(p.grad());
    Tensor t = p;
    t.zero_grad();
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.values()[i];
      p.values()[i] = orig + step;
      Tape th = Tape::no_grad();
      const double fp = fn(th).scalar_value();
      p.values()[i] = orig - step;
      Tape tl = Tape::no_grad();
      const double fm = fn(tl).scalar_value();
      p.values()[i] = orig;
      const double central = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[pi][i] - central) /
                         std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gfncp
