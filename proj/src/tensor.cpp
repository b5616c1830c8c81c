#include "mambadet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mambadet::ad {

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
thread_local Tape* current_tape = nullptr;
thread_local bool check_finite = false;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> values,
                                     bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  impl->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

void require_rank(const Tensor& x, std::size_t rank, std::string_view op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(x.shape()));
  }
}

// Maps a flat index of the broadcast output onto an operand.
class BroadcastIndexer {
 public:
  BroadcastIndexer(const Shape& operand, const Shape& out) {
    numel_ = shape_numel(operand);
    if (operand == out) {
      mode_ = Mode::kIdentity;
      return;
    }
    // Leading ones of the operand carry no information.
    std::size_t first = 0;
    while (first < operand.size() && operand[first] == 1) ++first;
    Shape core(operand.begin() + static_cast<std::ptrdiff_t>(first), operand.end());
    if (core.size() <= out.size() &&
        std::equal(core.begin(), core.end(),
                   out.end() - static_cast<std::ptrdiff_t>(core.size()))) {
      mode_ = Mode::kModulo;
      return;
    }
    mode_ = Mode::kMap;
    const std::size_t rank = out.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < operand.size(); ++i) {
      const std::size_t axis_op = operand.size() - 1 - i;
      const std::size_t axis_out = rank - 1 - i;
      strides[axis_out] = operand[axis_op] == 1 ? 0 : stride;
      stride *= operand[axis_op];
    }
    const std::size_t total = shape_numel(out);
    map_.resize(total);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      map_[flat] = offset;
      for (std::size_t axis = rank; axis-- > 0;) {
        ++counter[axis];
        offset += strides[axis];
        if (counter[axis] < out[axis]) break;
        offset -= strides[axis] * counter[axis];
        counter[axis] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t flat) const {
    switch (mode_) {
      case Mode::kIdentity:
        return flat;
      case Mode::kModulo:
        return flat % numel_;
      case Mode::kMap:
        break;
    }
    return map_[flat];
  }

 private:
  enum class Mode { kIdentity, kModulo, kMap };
  Mode mode_ = Mode::kIdentity;
  std::size_t numel_ = 1;
  std::vector<std::size_t> map_;
};

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ",";
    out << shape[i];
  }
  out << ")";
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor() : impl_(new_impl({}, {0.0}, false)) {}

Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0),
                         requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value),
                         requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return Tensor(new_impl({}, {value}, false)); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

std::span<double> Tensor::grad_accumulator() const {
  if (!impl_->requires_grad) return {};
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(new_impl(impl_->shape, impl_->data, false));
}

std::size_t Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward() requires a scalar root, got shape " +
                     shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw std::invalid_argument(
        "backward() root does not depend on any tensor that requires grad");
  }
  root.impl()->grad.assign(1, 1.0);
  std::size_t visited = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
    ++visited;
  }
  return visited;
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

void set_finite_checks(bool enabled) { check_finite = enabled; }
bool finite_checks() { return check_finite; }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   const std::function<BackwardFn(const Tensor& out)>& make_backward) {
  if (check_finite) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericError(std::string(op) + ": non-finite output at flat index " +
                           std::to_string(i));
      }
    }
  }
  Tape* tape = current_tape;
  bool tracked = false;
  if (tape != nullptr) {
    for (const Tensor* in : inputs) tracked = tracked || in->requires_grad();
  }
  Tensor out = Tensor::from(std::move(shape), std::move(values), tracked);
  if (tracked) {
    TapeEntry entry;
    entry.op = std::string(op);
    for (const Tensor* in : inputs) entry.input_ids.push_back(in->id());
    entry.output_id = out.id();
    entry.output = out.impl();
    entry.backward = make_backward(out);
    tape->record(std::move(entry));
  }
  return out;
}

// --- elementwise -------------------------------------------------------------

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " +
                       shape_str(b));
    }
    out[rank - 1 - i] = std::max(da, db);
    if (da == 0 || db == 0) out[rank - 1 - i] = 0;
  }
  return out;
}

Tensor unary(UnaryKind kind, const Tensor& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  const char* name = "neg";
  switch (kind) {
    case UnaryKind::kNeg:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = -in[i];
      break;
    case UnaryKind::kExp:
      name = "exp";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
      break;
    case UnaryKind::kSoftplus:
      name = "softplus";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus_value(in[i]);
      break;
    case UnaryKind::kSilu:
      name = "silu";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * sigmoid_value(in[i]);
      break;
    case UnaryKind::kSigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_value(in[i]);
      break;
  }
  return make_result(name, x.shape(), std::move(out), {&x},
                     [kind, x](const Tensor& y) -> BackwardFn {
    return [kind, x, y](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      const auto xv = x.data();
      const auto yv = y.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case UnaryKind::kNeg:
            d = -1.0;
            break;
          case UnaryKind::kExp:
            d = yv[i];
            break;
          case UnaryKind::kSoftplus:
            d = sigmoid_value(xv[i]);
            break;
          case UnaryKind::kSilu: {
            const double s = sigmoid_value(xv[i]);
            d = s * (1.0 + xv[i] * (1.0 - s));
            break;
          }
          case UnaryKind::kSigmoid:
            d = yv[i] * (1.0 - yv[i]);
            break;
        }
        gx[i] += g[i] * d;
      }
    };
  });
}

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  auto ia = std::make_shared<BroadcastIndexer>(a.shape(), out_shape);
  auto ib = std::make_shared<BroadcastIndexer>(b.shape(), out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  const char* name = "add";
  switch (kind) {
    case BinaryKind::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ia)(i)] + bv[(*ib)(i)];
      break;
    case BinaryKind::kSub:
      name = "sub";
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ia)(i)] - bv[(*ib)(i)];
      break;
    case BinaryKind::kMul:
      name = "mul";
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ia)(i)] * bv[(*ib)(i)];
      break;
  }
  return make_result(name, std::move(out_shape), std::move(out), {&a, &b},
                     [kind, a, b, ia, ib](const Tensor&) -> BackwardFn {
    return [kind, a, b, ia, ib](std::span<const double> g) mutable {
      auto ga = a.grad_accumulator();
      auto gb = b.grad_accumulator();
      const auto av = a.data();
      const auto bv = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ja = (*ia)(i);
        const std::size_t jb = (*ib)(i);
        switch (kind) {
          case BinaryKind::kAdd:
            if (!ga.empty()) ga[ja] += g[i];
            if (!gb.empty()) gb[jb] += g[i];
            break;
          case BinaryKind::kSub:
            if (!ga.empty()) ga[ja] += g[i];
            if (!gb.empty()) gb[jb] -= g[i];
            break;
          case BinaryKind::kMul:
            if (!ga.empty()) ga[ja] += g[i] * bv[jb];
            if (!gb.empty()) gb[jb] += g[i] * av[ja];
            break;
        }
      }
    };
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", x.shape(), std::move(out), {&x},
                     [x, factor](const Tensor&) -> BackwardFn {
    return [x, factor](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    };
  });
}

// --- linear algebra ------------------------------------------------------------

namespace {

// C(MxN) += A(MxK) * B(KxN)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// dA(MxK) += G(MxN) * B(KxN)^T
void gemm_nt(const double* g, const double* b, double* da, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      dai[p] += acc;
    }
  }
}

// dB(KxN) += A(MxK)^T * G(MxN)
void gemm_tn(const double* a, const double* g, double* db, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += av * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                      " and " + shape_str(b.shape()));
  };
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_rhs = true;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0);
    k = a.dim(1);
    if (b.dim(0) != k) throw mismatch();
    n = b.dim(1);
    out_shape = {m, n};
  } else if (a.rank() == 3 && b.rank() == 2) {
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    if (b.dim(0) != k) throw mismatch();
    n = b.dim(1);
    out_shape = {batch, m, n};
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) throw mismatch();
    n = b.dim(2);
    shared_rhs = false;
    out_shape = {batch, m, n};
  } else {
    throw mismatch();
  }
  std::vector<double> out(batch * m * n, 0.0);
  if (shared_rhs) {
    gemm_nn(a.data().data(), b.data().data(), out.data(), batch * m, k, n);
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n,
              out.data() + s * m * n, m, k, n);
    }
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                     [a, b, batch, m, k, n, shared_rhs](const Tensor&) -> BackwardFn {
    return [a, b, batch, m, k, n, shared_rhs](std::span<const double> g) mutable {
      auto ga = a.grad_accumulator();
      auto gb = b.grad_accumulator();
      if (shared_rhs) {
        if (!ga.empty()) gemm_nt(g.data(), b.data().data(), ga.data(), batch * m, k, n);
        if (!gb.empty()) gemm_tn(a.data().data(), g.data(), gb.data(), batch * m, k, n);
        return;
      }
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gs = g.data() + s * m * n;
        if (!ga.empty()) {
          gemm_nt(gs, b.data().data() + s * k * n, ga.data() + s * m * k, m, k, n);
        }
        if (!gb.empty()) {
          gemm_tn(a.data().data() + s * m * k, gs, gb.data() + s * k * n, m, k, n);
        }
      }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (w.rank() != 2 || x.rank() < 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  Tensor y;
  if (x.rank() <= 3) {
    y = matmul(x, w);
  } else {
    const std::size_t rows = x.numel() / w.dim(0);
    Shape out_shape = x.shape();
    out_shape.back() = w.dim(1);
    y = reshape(matmul(reshape(x, {rows, w.dim(0)}), w), out_shape);
  }
  if (bias != nullptr) y = add(y, *bias);
  return y;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {}, {total}, {&x}, [x](const Tensor&) -> BackwardFn {
    return [x](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (double& v : gx) v += g[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x},
                     [x](const Tensor&) -> BackwardFn {
    return [x](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  });
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.shape().back()) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for shape " +
                     shape_str(x.shape()));
  }
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  const std::size_t out_w = end - begin;
  std::vector<double> out(rows * out_w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * width + begin), out_w,
                out.begin() + static_cast<std::ptrdiff_t>(r * out_w));
  }
  Shape shape = x.shape();
  shape.back() = out_w;
  return make_result("slice_last", std::move(shape), std::move(out), {&x},
                     [x, rows, width, begin, out_w](const Tensor&) -> BackwardFn {
    return [x, rows, width, begin, out_w](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_w; ++j) gx[r * width + begin + j] += g[r * out_w + j];
      }
    };
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_last: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t wa = a.shape().back();
  const std::size_t wb = b.shape().back();
  const std::size_t rows = a.numel() / std::max<std::size_t>(wa, 1);
  std::vector<double> out(rows * (wa + wb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * wa), wa,
                out.begin() + static_cast<std::ptrdiff_t>(r * (wa + wb)));
    std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(r * wb), wb,
                out.begin() + static_cast<std::ptrdiff_t>(r * (wa + wb) + wa));
  }
  Shape shape = a.shape();
  shape.back() = wa + wb;
  return make_result("concat_last", std::move(shape), std::move(out), {&a, &b},
                     [a, b, rows, wa, wb](const Tensor&) -> BackwardFn {
    return [a, b, rows, wa, wb](std::span<const double> g) mutable {
      auto ga = a.grad_accumulator();
      auto gb = b.grad_accumulator();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * (wa + wb);
        if (!ga.empty()) for (std::size_t j = 0; j < wa; ++j) ga[r * wa + j] += gr[j];
        if (!gb.empty()) for (std::size_t j = 0; j < wb; ++j) gb[r * wb + j] += gr[wa + j];
      }
    };
  });
}

// --- sequence ops ----------------------------------------------------------------

Tensor gather_tokens(const Tensor& x, std::span<const std::size_t> index) {
  require_rank(x, 3, "gather_tokens");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  for (std::size_t i : index) {
    if (i >= len) throw ShapeError("gather_tokens: index out of range");
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t m = idx.size();
  std::vector<double> out(batch * m * ch);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * len + idx[i]) * ch), ch,
                  out.begin() + static_cast<std::ptrdiff_t>((b * m + i) * ch));
    }
  }
  return make_result("gather_tokens", {batch, m, ch}, std::move(out), {&x},
                     [x, idx, batch, len, ch](const Tensor&) -> BackwardFn {
    return [x, idx, batch, len, ch](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      const std::size_t m = idx.size();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          double* dst = gx.data() + (b * len + idx[i]) * ch;
          const double* src = g.data() + (b * m + i) * ch;
          for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
        }
      }
    };
  });
}

Tensor scatter_tokens(const Tensor& x, std::span<const std::size_t> index,
                      std::size_t length) {
  require_rank(x, 3, "scatter_tokens");
  const std::size_t batch = x.dim(0), m = x.dim(1), ch = x.dim(2);
  if (index.size() != m) {
    throw ShapeError("scatter_tokens: index length " + std::to_string(index.size()) +
                     " does not match token count " + std::to_string(m));
  }
  std::vector<char> seen(length, 0);
  for (std::size_t i : index) {
    if (i >= length || seen[i]) {
      throw ShapeError("scatter_tokens: index must be distinct and < length");
    }
    seen[i] = 1;
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(batch * length * ch, 0.0);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * m + i) * ch), ch,
                  out.begin() + static_cast<std::ptrdiff_t>((b * length + idx[i]) * ch));
    }
  }
  return make_result("scatter_tokens", {batch, length, ch}, std::move(out), {&x},
                     [x, idx, batch, length, ch](const Tensor&) -> BackwardFn {
    return [x, idx, batch, length, ch](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      const std::size_t m = idx.size();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* src = g.data() + (b * length + idx[i]) * ch;
          double* dst = gx.data() + (b * m + i) * ch;
          for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
        }
      }
    };
  });
}

Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 3, "slice_tokens");
  if (begin > end || end > x.dim(1)) throw ShapeError("slice_tokens: invalid range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_tokens(x, idx);
}

Tensor concat_tokens(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_tokens");
  require_rank(b, 3, "concat_tokens");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_tokens: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), la = a.dim(1), lb = b.dim(1), ch = a.dim(2);
  std::vector<double> out(batch * (la + lb) * ch);
  for (std::size_t s = 0; s < batch; ++s) {
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(s * la * ch), la * ch,
                out.begin() + static_cast<std::ptrdiff_t>(s * (la + lb) * ch));
    std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(s * lb * ch), lb * ch,
                out.begin() + static_cast<std::ptrdiff_t>((s * (la + lb) + la) * ch));
  }
  return make_result("concat_tokens", {batch, la + lb, ch}, std::move(out), {&a, &b},
                     [a, b, batch, la, lb, ch](const Tensor&) -> BackwardFn {
    return [a, b, batch, la, lb, ch](std::span<const double> g) mutable {
      auto ga = a.grad_accumulator();
      auto gb = b.grad_accumulator();
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gs = g.data() + s * (la + lb) * ch;
        if (!ga.empty()) for (std::size_t i = 0; i < la * ch; ++i) ga[s * la * ch + i] += gs[i];
        if (!gb.empty()) for (std::size_t i = 0; i < lb * ch; ++i) gb[s * lb * ch + i] += gs[la * ch + i];
      }
    };
  });
}

Tensor mean_tokens(const Tensor& x) {
  require_rank(x, 3, "mean_tokens");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (len == 0) throw ShapeError("mean_tokens: empty sequence");
  std::vector<double> out(batch * ch, 0.0);
  const auto xv = x.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] += xv[(b * len + t) * ch + c];
    }
    for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] *= inv;
  }
  return make_result("mean_tokens", {batch, ch}, std::move(out), {&x},
                     [x, batch, len, ch, inv](const Tensor&) -> BackwardFn {
    return [x, batch, len, ch, inv](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t c = 0; c < ch; ++c) gx[(b * len + t) * ch + c] += g[b * ch + c] * inv;
        }
      }
    };
  });
}

Tensor expand_batch(const Tensor& x, std::size_t batch) {
  require_rank(x, 2, "expand_batch");
  const std::size_t len = x.dim(0), ch = x.dim(1);
  std::vector<double> out(batch * len * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(x.data().begin(), x.data().end(),
              out.begin() + static_cast<std::ptrdiff_t>(b * len * ch));
  }
  return make_result("expand_batch", {batch, len, ch}, std::move(out), {&x},
                     [x, batch, len, ch](const Tensor&) -> BackwardFn {
    return [x, batch, len, ch](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < len * ch; ++i) gx[i] += g[b * len * ch + i];
      }
    };
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& scale_param, double eps) {
  if (x.rank() == 0 || scale_param.rank() != 1 ||
      scale_param.dim(0) != x.shape().back()) {
    throw ShapeError("rms_norm: input " + shape_str(x.shape()) +
                     " incompatible with scale " + shape_str(scale_param.shape()));
  }
  const std::size_t width = x.shape().back();
  const std::size_t rows = width == 0 ? 0 : x.numel() / width;
  std::vector<double> out(x.numel());
  auto inv_rms = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.data();
  const auto sv = scale_param.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * width;
    double ms = 0.0;
    for (std::size_t j = 0; j < width; ++j) ms += xr[j] * xr[j];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(width) + eps);
    (*inv_rms)[r] = inv;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = xr[j] * inv * sv[j];
  }
  return make_result("rms_norm", x.shape(), std::move(out), {&x, &scale_param},
                     [x, scale_param, inv_rms, rows, width](const Tensor&) -> BackwardFn {
    return [x, scale_param, inv_rms, rows, width](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      auto gs = scale_param.grad_accumulator();
      const auto xv = x.data();
      const auto sv = scale_param.data();
      const double inv_w = 1.0 / static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * width;
        const double* gr = g.data() + r * width;
        const double inv = (*inv_rms)[r];
        if (!gs.empty()) {
          for (std::size_t j = 0; j < width; ++j) gs[j] += gr[j] * xr[j] * inv;
        }
        if (!gx.empty()) {
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) dot += gr[j] * sv[j] * xr[j];
          const double coef = inv * inv * inv * dot * inv_w;
          for (std::size_t j = 0; j < width; ++j) {
            gx[r * width + j] += inv * gr[j] * sv[j] - coef * xr[j];
          }
        }
      }
    };
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t left_pad) {
  require_rank(x, 3, "depthwise_conv1d");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (weight.rank() != 2 || weight.dim(0) != ch || bias.rank() != 1 || bias.dim(0) != ch) {
    throw ShapeError("depthwise_conv1d: weight " + shape_str(weight.shape()) +
                     " / bias " + shape_str(bias.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t width = weight.dim(1);
  if (left_pad >= width && width > 0) {
    throw ShapeError("depthwise_conv1d: left padding must be smaller than kernel width");
  }
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  std::vector<double> out(batch * len * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      double* yo = out.data() + (b * len + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) yo[c] = bv[c];
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                   static_cast<std::ptrdiff_t>(left_pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xi = xv.data() + (b * len + static_cast<std::size_t>(src)) * ch;
        for (std::size_t c = 0; c < ch; ++c) yo[c] += wv[c * width + k] * xi[c];
      }
    }
  }
  return make_result("depthwise_conv1d", x.shape(), std::move(out), {&x, &weight, &bias},
                     [x, weight, bias, batch, len, ch, width, left_pad](const Tensor&) -> BackwardFn {
    return [x, weight, bias, batch, len, ch, width, left_pad](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      auto gw = weight.grad_accumulator();
      auto gb = bias.grad_accumulator();
      const auto xv = x.data();
      const auto wv = weight.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
          const double* go = g.data() + (b * len + t) * ch;
          if (!gb.empty()) for (std::size_t c = 0; c < ch; ++c) gb[c] += go[c];
          for (std::size_t k = 0; k < width; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                       static_cast<std::ptrdiff_t>(left_pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const std::size_t off = (b * len + static_cast<std::size_t>(src)) * ch;
            for (std::size_t c = 0; c < ch; ++c) {
              if (!gw.empty()) gw[c * width + k] += go[c] * xv[off + c];
              if (!gx.empty()) gx[off + c] += go[c] * wv[c * width + k];
            }
          }
        }
      }
    };
  });
}

Tensor depthwise_conv2d_grid(const Tensor& x, const Tensor& weight, const Tensor& bias,
                             std::size_t grid_h, std::size_t grid_w) {
  require_rank(x, 3, "depthwise_conv2d_grid");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (len != grid_h * grid_w) {
    throw ShapeError("depthwise_conv2d_grid: " + std::to_string(len) +
                     " tokens do not form a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid");
  }
  if (weight.rank() != 2 || weight.dim(0) != ch || weight.dim(1) != 9 ||
      bias.rank() != 1 || bias.dim(0) != ch) {
    throw ShapeError("depthwise_conv2d_grid: expected weight (C,9) and bias (C)");
  }
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  std::vector<double> out(x.numel());
  const auto h = static_cast<std::ptrdiff_t>(grid_h);
  const auto w = static_cast<std::ptrdiff_t>(grid_w);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::ptrdiff_t r = 0; r < h; ++r) {
      for (std::ptrdiff_t col = 0; col < w; ++col) {
        double* yo = out.data() + (b * len + static_cast<std::size_t>(r * w + col)) * ch;
        for (std::size_t c = 0; c < ch; ++c) yo[c] = bv[c];
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
          for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
            const std::ptrdiff_t rr = r + dr, cc = col + dc;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
            const auto k = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
            const double* xi = xv.data() + (b * len + static_cast<std::size_t>(rr * w + cc)) * ch;
            for (std::size_t c = 0; c < ch; ++c) yo[c] += wv[c * 9 + k] * xi[c];
          }
        }
      }
    }
  }
  return make_result("depthwise_conv2d_grid", x.shape(), std::move(out), {&x, &weight, &bias},
                     [x, weight, bias, batch, len, ch, h, w](const Tensor&) -> BackwardFn {
    return [x, weight, bias, batch, len, ch, h, w](std::span<const double> g) mutable {
      auto gx = x.grad_accumulator();
      auto gw = weight.grad_accumulator();
      auto gb = bias.grad_accumulator();
      const auto xv = x.data();
      const auto wv = weight.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::ptrdiff_t r = 0; r < h; ++r) {
          for (std::ptrdiff_t col = 0; col < w; ++col) {
            const double* go = g.data() + (b * len + static_cast<std::size_t>(r * w + col)) * ch;
            if (!gb.empty()) for (std::size_t c = 0; c < ch; ++c) gb[c] += go[c];
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
              for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                const std::ptrdiff_t rr = r + dr, cc = col + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                const auto k = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
                const std::size_t off = (b * len + static_cast<std::size_t>(rr * w + cc)) * ch;
                for (std::size_t c = 0; c < ch; ++c) {
                  if (!gw.empty()) gw[c * 9 + k] += go[c] * xv[off + c];
                  if (!gx.empty()) gx[off + c] += go[c] * wv[c * 9 + k];
                }
              }
            }
          }
        }
      }
    };
  });
}

std::vector<double> softmax_row(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    }
    const auto row = logits.data().subspan(b * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[static_cast<std::size_t>(lab[b])];
    for (std::size_t k = 0; k < classes; ++k) (*probs)[b * classes + k] = std::exp(row[k] - lse);
  }
  loss /= static_cast<double>(batch);
  return make_result("softmax_cross_entropy", {}, {loss}, {&logits},
                     [logits, probs, lab, batch, classes](const Tensor&) -> BackwardFn {
    return [logits, probs, lab, batch, classes](std::span<const double> g) mutable {
      auto gl = logits.grad_accumulator();
      const double f = g[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < classes; ++k) {
          const double onehot = static_cast<std::size_t>(lab[b]) == k ? 1.0 : 0.0;
          gl[b * classes + k] += f * ((*probs)[b * classes + k] - onehot);
        }
      }
    };
  });
}

}  // namespace mambadet::ad
