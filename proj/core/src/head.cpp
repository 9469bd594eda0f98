#include <chrnn/head.hpp>

#include <cmath>

namespace chrnn {

std::string to_string(Readout r) { return r == Readout::CellMean ? "mean" : "concat"; }

Readout parse_readout(const std::string& text) {
  if (text == "concat") return Readout::Concat;
  if (text == "mean") return Readout::CellMean;
  throw ConfigError("unknown readout '" + text + "' (expected concat or mean)");
}

std::size_t readout_width(Readout readout, std::span<const GridSize> sizes,
                          std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < sizes.size(); ++l)
    total += (readout == Readout::Concat ? sizes[l].cells() : 1) * widths[l];
  return total;
}

namespace {

template <typename T>
std::size_t common_batch(std::span<const FeatureGrid<T>> levels) {
  if (levels.empty()) throw ContractError("readout needs at least one level");
  const std::size_t batch = levels[0].batch();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (levels[l].empty()) {
      throw ContractError("readout: level " + std::to_string(l) + " is missing");
    }
    if (levels[l].batch() != batch) throw ShapeError("readout: levels disagree on batch size");
  }
  return batch;
}

}  // namespace

template <typename T>
Tensor<T> concat_scales(std::span<const FeatureGrid<T>> levels) {
  return readout_forward(levels, Readout::Concat);
}

template <typename T>
Tensor<T> readout_forward(std::span<const FeatureGrid<T>> levels, Readout readout) {
  const std::size_t batch = common_batch(levels);
  std::size_t width = 0;
  for (const auto& g : levels) width += (readout == Readout::Concat ? g.cells() : 1) * g.depth();
  Tensor<T> out({width, batch});
  T* dst = out.data();
  for (const auto& g : levels) {
    const auto& src = g.tensor();
    if (readout == Readout::Concat) {
      dst = std::copy(src.data(), src.data() + src.size(), dst);
      continue;
    }
    const std::size_t stride = g.cell_stride();
    const T scale = T{1} / static_cast<T>(g.cells());
    for (std::size_t k = 0; k < stride; ++k) {
      T total{0};
      for (std::size_t cell = 0; cell < g.cells(); ++cell) total += src[cell * stride + k];
      dst[k] = total * scale;
    }
    dst += stride;
  }
  return out;
}

template <typename T>
std::vector<FeatureGrid<T>> readout_backward(const Tensor<T>& d_readout,
                                             std::span<const FeatureGrid<T>> levels,
                                             Readout readout) {
  const std::size_t batch = common_batch(levels);
  std::size_t width = 0;
  for (const auto& g : levels) width += (readout == Readout::Concat ? g.cells() : 1) * g.depth();
  if (d_readout.shape() != Shape{width, batch}) {
    throw ShapeError("readout backward: gradient " + to_string(d_readout.shape()) +
                     " does not match readout width " + std::to_string(width));
  }
  std::vector<FeatureGrid<T>> grads;
  const T* src = d_readout.data();
  for (const auto& g : levels) {
    FeatureGrid<T> d(g.rows(), g.cols(), g.depth(), g.batch());
    auto& dst = d.tensor();
    if (readout == Readout::Concat) {
      std::copy(src, src + dst.size(), dst.data());
      src += dst.size();
    } else {
      const std::size_t stride = g.cell_stride();
      const T scale = T{1} / static_cast<T>(g.cells());
      for (std::size_t cell = 0; cell < g.cells(); ++cell)
        for (std::size_t k = 0; k < stride; ++k) dst[cell * stride + k] = src[k] * scale;
      src += stride;
    }
    grads.push_back(std::move(d));
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out)
    : weight_({out, in}), bias_({out}), grad_weight_({out, in}), grad_bias_({out}) {}

template <typename T>
void Dense<T>::init(Rng& rng) {
  glorot_uniform(weight_, in(), out(), rng);
  bias_.set_zero();
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(0) != in()) {
    throw ShapeError("dense: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight_.shape()));
  }
  const std::size_t batch = x.dim(1);
  input_ = x;
  Tensor<T> y({out(), batch});
  gemm(out(), in(), batch, weight_.data(), x.data(), y.data(), false);
  for (std::size_t i = 0; i < out(); ++i)
    for (std::size_t b = 0; b < batch; ++b) y(i, b) += bias_[i];
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& dy) {
  if (!has_forward_state()) throw ContractError("dense backward called without a forward pass");
  const std::size_t batch = input_.dim(1);
  if (dy.shape() != Shape{out(), batch}) {
    throw ShapeError("dense backward: upstream " + to_string(dy.shape()) + " expected " +
                     to_string(Shape{out(), batch}));
  }
  gemm_nt(out(), in(), batch, dy.data(), input_.data(), grad_weight_.data());
  for (std::size_t i = 0; i < out(); ++i) {
    T total{0};
    for (std::size_t b = 0; b < batch; ++b) total += dy(i, b);
    grad_bias_[i] += total;
  }
  Tensor<T> dx(input_.shape());
  gemm_tn(out(), in(), batch, weight_.data(), dy.data(), dx.data());
  return dx;
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng) {
  Tensor<T> mask(shape);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.values()) m = rng.bernoulli(rate) ? T{0} : keep;
  return mask;
}

template <typename T>
Head<T>::Head(const HeadConfig& config) : config_(config) {
  if (config.input_width == 0 || config.classes == 0) {
    throw ConfigError("head: input width and class count must be positive");
  }
  std::size_t in = config.input_width;
  for (std::size_t width : config.hidden) {
    if (width == 0) throw ConfigError("head: hidden widths must be positive");
    layers_.emplace_back(in, width);
    in = width;
  }
  layers_.emplace_back(in, config.classes);
}

template <typename T>
void Head<T>::init(Rng& rng) {
  for (auto& layer : layers_) layer.init(rng);
}

template <typename T>
std::vector<Shape> Head<T>::hidden_shapes(std::size_t batch) const {
  std::vector<Shape> shapes;
  for (std::size_t width : config_.hidden) shapes.push_back({width, batch});
  return shapes;
}

template <typename T>
Tensor<T> Head<T>::forward(const Tensor<T>& x, const std::vector<Tensor<T>>* masks) {
  const std::size_t hidden = config_.hidden.size();
  if (masks && masks->size() != hidden) {
    throw ShapeError("head: expected " + std::to_string(hidden) + " dropout masks");
  }
  pre_.assign(hidden, Tensor<T>());
  masks_.clear();
  Tensor<T> a = x;
  for (std::size_t k = 0; k < hidden; ++k) {
    pre_[k] = layers_[k].forward(a);
    a = relu(pre_[k]);
    if (masks) {
      const Tensor<T>& m = (*masks)[k];
      require_same_shape(m.shape(), a.shape(), "head dropout mask");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= m[i];
      masks_.push_back(m);
    }
  }
  return softmax_columns(layers_.back().forward(a));
}

template <typename T>
Tensor<T> Head<T>::backward(const Tensor<T>& d_logits) {
  Tensor<T> d = layers_.back().backward(d_logits);
  for (std::size_t k = config_.hidden.size(); k-- > 0;) {
    if (!masks_.empty()) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= masks_[k][i];
    }
    d = layers_[k].backward(relu_backward(pre_[k], d));
  }
  return d;
}

// ---------------------------------------------------------------------------

template <typename T>
T cross_entropy(const Tensor<T>& probs, std::span<const std::uint32_t> labels) {
  if (probs.rank() != 2 || probs.dim(1) != labels.size() || labels.empty()) {
    throw ShapeError("cross_entropy: probabilities " + to_string(probs.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t classes = probs.dim(0);
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= classes) {
      throw DataError("label " + std::to_string(labels[b]) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
    total += -std::log(std::max(static_cast<double>(probs(labels[b], b)), 1e-12));
  }
  return static_cast<T>(total / static_cast<double>(labels.size()));
}

template <typename T>
T cross_entropy(const Tensor<T>& probs, std::uint32_t label) {
  Tensor<T> column = probs;
  column.reshape({probs.size(), 1});
  const std::uint32_t labels[] = {label};
  return cross_entropy(column, std::span<const std::uint32_t>(labels));
}

template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs,
                                         std::span<const std::uint32_t> labels) {
  if (probs.rank() != 2 || probs.dim(1) != labels.size()) {
    throw ShapeError("softmax_cross_entropy_backward: probabilities " +
                     to_string(probs.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t batch = labels.size();
  const T scale = T{1} / static_cast<T>(batch);
  Tensor<T> d(probs.shape());
  for (std::size_t k = 0; k < probs.dim(0); ++k)
    for (std::size_t b = 0; b < batch; ++b)
      d(k, b) = (probs(k, b) - (labels[b] == k ? T{1} : T{0})) * scale;
  return d;
}

template <typename T>
std::size_t label_rank(const Tensor<T>& probs, std::size_t b, std::uint32_t label) {
  const T target = probs(label, b);
  std::size_t ahead = 0;
  for (std::size_t k = 0; k < probs.dim(0); ++k) {
    const T p = probs(k, b);
    if (p > target || (p == target && k < label)) ++ahead;
  }
  return ahead;
}

#define CHRNN_INSTANTIATE(T)                                                                  \
  template class Dense<T>;                                                                    \
  template class Head<T>;                                                                     \
  template Tensor<T> concat_scales<T>(std::span<const FeatureGrid<T>>);                       \
  template Tensor<T> readout_forward<T>(std::span<const FeatureGrid<T>>, Readout);            \
  template std::vector<FeatureGrid<T>> readout_backward<T>(                                   \
      const Tensor<T>&, std::span<const FeatureGrid<T>>, Readout);                            \
  template Tensor<T> dropout_mask<T>(const Shape&, double, Rng&);                             \
  template T cross_entropy<T>(const Tensor<T>&, std::span<const std::uint32_t>);              \
  template T cross_entropy<T>(const Tensor<T>&, std::uint32_t);                               \
  template Tensor<T> softmax_cross_entropy_backward<T>(const Tensor<T>&,                      \
                                                       std::span<const std::uint32_t>);       \
  template std::size_t label_rank<T>(const Tensor<T>&, std::size_t, std::uint32_t);

CHRNN_INSTANTIATE(float)
CHRNN_INSTANTIATE(double)

#undef CHRNN_INSTANTIATE

}  // namespace chrnn
