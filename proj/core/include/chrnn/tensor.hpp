#pragma once

// Dense row-major tensors and the numeric primitives every layer is built on.
//
// Activations passing between layers keep the batch as the innermost
// (fastest-varying) extent, so a vector of width n for a batch of B samples is
// stored as an n x B matrix. Every kernel below sums its reduction index in
// ascending order, which makes a batch of one bit-identical to the textbook
// scalar loop.

#include <chrnn/errors.hpp>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace chrnn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor of shape " + to_string(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 access.
  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(T{0}); }

  void reshape(Shape shape) {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

void require_same_shape(const Shape& a, const Shape& b, const char* what);

// ---------------------------------------------------------------------------
// Matrix kernels on raw row-major buffers. `cols` is the batch extent.

/// y(m x cols) = w(m x n) * x(n x cols), or += when `accumulate`.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t cols, const T* w, const T* x, T* y,
          bool accumulate);

/// dx(n x cols) += w(m x n)^T * dy(m x cols).
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t cols, const T* w, const T* dy, T* dx);

/// dw(m x n) += dy(m x cols) * x(n x cols)^T, summed over cols in ascending order.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t cols, const T* dy, const T* x, T* dw);

/// y = W x for a rank-2 W and rank-1 x.
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x);

/// Gradients of a scalar loss through y = W x given dL/dy.
template <typename T>
struct MatvecGrad {
  Tensor<T> d_weight;  // outer product dy x^T
  Tensor<T> d_input;   // W^T dy
};

template <typename T>
MatvecGrad<T> matvec_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy);

// ---------------------------------------------------------------------------
// Elementwise activations.

template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

/// Softmax of a vector, stabilized by subtracting the maximum.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Column-wise softmax of a classes x batch matrix.
template <typename T>
Tensor<T> softmax_columns(const Tensor<T>& logits);

/// dL/dx for y = relu(x). The derivative at 0 is taken as 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);
/// dL/dx for y = sigmoid(x), computed from y.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);
/// dL/dx for y = tanh(x), computed from y.
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// Throws NumericError naming `what` if any value is NaN or Inf.
template <typename T>
void ensure_finite(std::span<const T> values, const std::string& what);

}  // namespace chrnn
