// Dense row-major float64 tensor with a define-by-run reverse-mode tape.
//
// Ops record themselves on the thread's active Tape (see TapeScope) whenever
// at least one input requires a gradient. Without an active tape every op is
// a plain forward computation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mambadet::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }
  bool defined() const { return impl_ != nullptr; }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access for initialization and optimizer updates. Never call
  // on a tensor that a live tape still references.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Gradient buffer for accumulation inside backward functions; allocates
  // zeros on first use. Empty span when the tensor does not require grad.
  std::span<double> grad_accumulator() const;
  void zero_grad() const;

  std::uint64_t id() const { return impl_->id; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  // Copy of the values that never participates in a tape.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl);
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct TapeEntry {
  std::string op;
  std::vector<std::uint64_t> input_ids;
  std::uint64_t output_id = 0;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
  // Seeds d(root)/d(root) = 1 and runs the recorded backward functions in
  // reverse order. Returns the number of entries whose backward ran.
  std::size_t backward(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  const std::vector<TapeEntry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<TapeEntry> entries_;
};

// Installs a tape as the thread's recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Debug mode: every op checks its output for NaN/Inf and throws NumericError.
void set_finite_checks(bool enabled);
bool finite_checks();

// Builds an op output and, when recording, attaches `backward` to the tape.
// `backward` must accumulate into the inputs' grad_accumulator() buffers.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   const std::function<BackwardFn(const Tensor& out)>& make_backward);

// --- elementwise -------------------------------------------------------------

enum class UnaryKind { kNeg, kExp, kSoftplus, kSilu, kSigmoid };
enum class BinaryKind { kAdd, kSub, kMul };

// Trailing-dimension (numpy-style) broadcast of two shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor unary(UnaryKind kind, const Tensor& x);
Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b);

inline Tensor neg(const Tensor& x) { return unary(UnaryKind::kNeg, x); }
inline Tensor exp(const Tensor& x) { return unary(UnaryKind::kExp, x); }
inline Tensor softplus(const Tensor& x) { return unary(UnaryKind::kSoftplus, x); }
inline Tensor silu(const Tensor& x) { return unary(UnaryKind::kSilu, x); }
inline Tensor sigmoid(const Tensor& x) { return unary(UnaryKind::kSigmoid, x); }
inline Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kMul, a, b); }

Tensor scale(const Tensor& x, double factor);

// Scalar-level helpers shared with fused kernels.
double softplus_value(double x);
double sigmoid_value(double x);

// --- linear algebra and reductions -------------------------------------------

// (M,K)x(K,N), (B,M,K)x(K,N) with shared right operand, or (B,M,K)x(B,K,N).
Tensor matmul(const Tensor& a, const Tensor& b);
// x(...,in) * w(in,out) [+ bias(out)]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Last-axis slicing and concatenation.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_last(const Tensor& a, const Tensor& b);

// --- sequence ops on (B, L, C) -----------------------------------------------

// y[:, i, :] = x[:, index[i], :]
Tensor gather_tokens(const Tensor& x, std::span<const std::size_t> index);
// y has `length` tokens; y[:, index[i], :] = x[:, i, :], zeros elsewhere.
Tensor scatter_tokens(const Tensor& x, std::span<const std::size_t> index,
                      std::size_t length);
Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_tokens(const Tensor& a, const Tensor& b);
// (B, L, C) -> (B, C)
Tensor mean_tokens(const Tensor& x);
// Broadcast a (L, C) or (1, C) tensor over the batch: (B, L, C).
Tensor expand_batch(const Tensor& x, std::size_t batch);

// RMS normalization over the last axis with a learned scale.
Tensor rms_norm(const Tensor& x, const Tensor& scale, double eps = 1e-6);

// Depthwise 1D convolution along the token axis of (B, L, C).
// y[t,c] = bias[c] + sum_k w[c,k] * x[t + k - left_pad, c], zero outside.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, std::size_t left_pad);

// Depthwise 3x3 convolution over tokens laid out as a (grid_h, grid_w) raster,
// zero padded. weight is (C, 9), bias is (C).
Tensor depthwise_conv2d_grid(const Tensor& x, const Tensor& weight,
                             const Tensor& bias, std::size_t grid_h,
                             std::size_t grid_w);

// Mean softmax cross-entropy of logits (B, K) against class labels.
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const int> labels);

std::vector<double> softmax_row(std::span<const double> logits);

}  // namespace mambadet::ad
