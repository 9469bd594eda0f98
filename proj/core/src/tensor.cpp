#include <chrnn/tensor.hpp>

#include <cmath>
#include <sstream>

namespace chrnn {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a) + " does not match " +
                     to_string(b));
  }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t cols, const T* __restrict w,
          const T* __restrict x, T* __restrict y, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict yi = y + i * cols;
    if (!accumulate) std::fill(yi, yi + cols, T{0});
    const T* wi = w + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T wij = wi[j];
      const T* __restrict xj = x + j * cols;
      for (std::size_t b = 0; b < cols; ++b) yi[b] += wij * xj[b];
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t cols, const T* __restrict w,
             const T* __restrict dy, T* __restrict dx) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict dyi = dy + i * cols;
    const T* wi = w + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T wij = wi[j];
      T* __restrict dxj = dx + j * cols;
      for (std::size_t b = 0; b < cols; ++b) dxj[b] += wij * dyi[b];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t cols, const T* __restrict dy,
             const T* __restrict x, T* __restrict dw) {
  thread_local std::vector<T> xt;
  xt.resize(n * cols);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t b = 0; b < cols; ++b) xt[b * n + j] = x[j * cols + b];
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict dwi = dw + i * n;
    for (std::size_t b = 0; b < cols; ++b) {
      const T d = dy[i * cols + b];
      if (d == T{0}) continue;
      const T* __restrict xb = xt.data() + b * n;
      for (std::size_t j = 0; j < n; ++j) dwi[j] += d * xb[j];
    }
  }
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.dim(1) != x.dim(0)) {
    throw ShapeError("matvec: matrix " + to_string(w.shape()) + " incompatible with vector " +
                     to_string(x.shape()));
  }
  Tensor<T> y({w.dim(0)});
  gemm(w.dim(0), w.dim(1), 1, w.data(), x.data(), y.data(), false);
  return y;
}

template <typename T>
MatvecGrad<T> matvec_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy) {
  if (w.rank() != 2 || x.rank() != 1 || dy.rank() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(0) != dy.dim(0)) {
    throw ShapeError("matvec_backward: matrix " + to_string(w.shape()) + ", input " +
                     to_string(x.shape()) + ", upstream " + to_string(dy.shape()));
  }
  MatvecGrad<T> g{Tensor<T>(w.shape()), Tensor<T>(x.shape())};
  gemm_nt(w.dim(0), w.dim(1), 1, dy.data(), x.data(), g.d_weight.data());
  gemm_tn(w.dim(0), w.dim(1), 1, w.data(), dy.data(), g.d_input.data());
  return g;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() != 1) throw ShapeError("softmax expects a vector, got " + to_string(x.shape()));
  Tensor<T> column = x;
  column.reshape({x.size(), 1});
  Tensor<T> y = softmax_columns(column);
  y.reshape(x.shape());
  return y;
}

template <typename T>
Tensor<T> softmax_columns(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_columns expects a matrix, got " + to_string(logits.shape()));
  }
  const std::size_t classes = logits.dim(0);
  const std::size_t batch = logits.dim(1);
  Tensor<T> y(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    T peak = logits(0, b);
    for (std::size_t k = 1; k < classes; ++k) peak = std::max(peak, logits(k, b));
    T total{0};
    for (std::size_t k = 0; k < classes; ++k) {
      y(k, b) = std::exp(logits(k, b) - peak);
      total += y(k, b);
    }
    for (std::size_t k = 0; k < classes; ++k) y(k, b) /= total;
  }
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "relu_backward");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return dx;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  require_same_shape(y.shape(), dy.shape(), "sigmoid_backward");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
  return dx;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  require_same_shape(y.shape(), dy.shape(), "tanh_backward");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (T{1} - y[i] * y[i]);
  return dx;
}

template <typename T>
void ensure_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value " + std::to_string(values[i]) +
                         " at index " + std::to_string(i));
    }
  }
}

#define CHRNN_INSTANTIATE(T)                                                                 \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);   \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);   \
  template Tensor<T> matvec<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template MatvecGrad<T> matvec_backward<T>(const Tensor<T>&, const Tensor<T>&,              \
                                            const Tensor<T>&);                               \
  template T sigmoid<T>(T);                                                                  \
  template Tensor<T> relu<T>(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                           \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                              \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                           \
  template Tensor<T> softmax_columns<T>(const Tensor<T>&);                                   \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> tanh_backward<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template void ensure_finite<T>(std::span<const T>, const std::string&);

CHRNN_INSTANTIATE(float)
CHRNN_INSTANTIATE(double)

#undef CHRNN_INSTANTIATE

}  // namespace chrnn
