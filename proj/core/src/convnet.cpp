#include <chrnn/convnet.hpp>

#include <charconv>
#include <limits>
#include <sstream>

namespace chrnn {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  std::istringstream is(text);
  while (std::getline(is, current, sep)) {
    const auto b = current.find_first_not_of(" \t");
    const auto e = current.find_last_not_of(" \t");
    parts.push_back(b == std::string::npos ? "" : current.substr(b, e - b + 1));
  }
  return parts;
}

std::size_t parse_size(const std::string& s, const std::string& context) {
  std::size_t value = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw ConfigError("expected a non-negative integer in '" + context + "', got '" + s + "'");
  }
  return value;
}

}  // namespace

std::string to_string(const GridSize& g) {
  return std::to_string(g.rows) + "x" + std::to_string(g.cols);
}

std::vector<GridSize> parse_grid_list(const std::string& text) {
  std::vector<GridSize> grids;
  for (const auto& item : split(text, ',')) {
    const auto x = item.find('x');
    GridSize g;
    if (x == std::string::npos) {
      g.rows = g.cols = parse_size(item, text);
    } else {
      g.rows = parse_size(item.substr(0, x), text);
      g.cols = parse_size(item.substr(x + 1), text);
    }
    if (g.rows == 0 || g.cols == 0) throw ConfigError("grid extents must be positive: " + text);
    grids.push_back(g);
  }
  if (grids.empty()) throw ConfigError("empty grid list");
  return grids;
}

std::string format_grid_list(std::span<const GridSize> grids) {
  std::string out;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (i) out += ',';
    out += to_string(grids[i]);
  }
  return out;
}

std::size_t ConvLayerSpec::conv_extent(std::size_t in, std::size_t kernel) const {
  if (stride == 0) throw ShapeError("convolution stride must be positive");
  if (kernel > in + 2 * padding) {
    throw ShapeError("kernel extent " + std::to_string(kernel) + " exceeds padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

GridSize ConvLayerSpec::output_size(GridSize in) const {
  GridSize out{conv_extent(in.rows, kernel_h), conv_extent(in.cols, kernel_w)};
  if (pool) {
    if (pool->window == 0 || pool->stride == 0) throw ShapeError("pool window/stride must be > 0");
    if (pool->window > out.rows || pool->window > out.cols) {
      throw ShapeError("pool window " + std::to_string(pool->window) + " exceeds map " +
                       to_string(out));
    }
    out.rows = (out.rows - pool->window) / pool->stride + 1;
    out.cols = (out.cols - pool->window) / pool->stride + 1;
  }
  return out;
}

std::vector<ConvLayerSpec> parse_conv_stack(const std::string& text, std::size_t in_channels) {
  std::vector<ConvLayerSpec> stack;
  for (const auto& layer : split(text, ',')) {
    const auto fields = split(layer, '/');
    const auto dims = split(fields.at(0), 'x');
    if (dims.size() != 3) throw ConfigError("conv layer must start with CxKxK: '" + layer + "'");
    ConvLayerSpec spec;
    spec.in_channels = in_channels;
    spec.out_channels = parse_size(dims[0], layer);
    spec.kernel_h = parse_size(dims[1], layer);
    spec.kernel_w = parse_size(dims[2], layer);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto& f = fields[i];
      if (f == "linear") {
        spec.relu = false;
      } else if (f.rfind("pool", 0) == 0) {
        const auto s = f.find('s', 4);
        PoolSpec pool;
        pool.window = parse_size(f.substr(4, s == std::string::npos ? std::string::npos : s - 4),
                                 layer);
        pool.stride = s == std::string::npos ? pool.window : parse_size(f.substr(s + 1), layer);
        spec.pool = pool;
      } else if (!f.empty() && f[0] == 's') {
        spec.stride = parse_size(f.substr(1), layer);
      } else if (!f.empty() && f[0] == 'p') {
        spec.padding = parse_size(f.substr(1), layer);
      } else {
        throw ConfigError("unknown conv layer field '" + f + "' in '" + layer + "'");
      }
    }
    if (spec.out_channels == 0 || spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride == 0) {
      throw ConfigError("conv layer extents must be positive: '" + layer + "'");
    }
    in_channels = spec.out_channels;
    stack.push_back(spec);
  }
  return stack;
}

std::string format_conv_stack(std::span<const ConvLayerSpec> stack) {
  std::ostringstream os;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& s = stack[i];
    if (i) os << ',';
    os << s.out_channels << 'x' << s.kernel_h << 'x' << s.kernel_w << "/s" << s.stride << "/p"
       << s.padding;
    if (s.pool) os << "/pool" << s.pool->window << 's' << s.pool->stride;
    if (!s.relu) os << "/linear";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const ConvLayerSpec& spec)
    : spec_(spec),
      weight_({spec.out_channels, spec.in_channels * spec.kernel_h * spec.kernel_w}),
      bias_({spec.out_channels}),
      grad_weight_(weight_.shape()),
      grad_bias_(bias_.shape()) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const std::size_t area = spec_.kernel_h * spec_.kernel_w;
  glorot_uniform(weight_, spec_.in_channels * area, spec_.out_channels * area, rng);
  bias_.set_zero();
}

template <typename T>
void Conv2d<T>::clear_state() {
  cols_ = Tensor<T>();
  activated_ = Tensor<T>();
  argmax_.clear();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input) {
  if (input.rank() != 4 || input.dim(0) != spec_.in_channels) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " does not match " +
                     std::to_string(spec_.in_channels) + " input channels");
  }
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2),
                    batch = input.dim(3);
  const std::size_t out_h = spec_.conv_extent(height, spec_.kernel_h);
  const std::size_t out_w = spec_.conv_extent(width, spec_.kernel_w);
  (void)spec_.output_size({height, width});  // validates pooling
  const std::size_t taps = channels * spec_.kernel_h * spec_.kernel_w;
  const std::size_t span = out_h * out_w * batch;

  input_shape_ = input.shape();
  conv_size_ = {out_h, out_w};
  cols_ = Tensor<T>({taps, span});
  for (std::size_t ci = 0; ci < channels; ++ci) {
    for (std::size_t kh = 0; kh < spec_.kernel_h; ++kh) {
      for (std::size_t kw = 0; kw < spec_.kernel_w; ++kw) {
        T* row = cols_.data() + ((ci * spec_.kernel_h + kh) * spec_.kernel_w + kw) * span;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec_.stride + kh) -
                                    static_cast<std::ptrdiff_t>(spec_.padding);
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec_.stride + kw) -
                                      static_cast<std::ptrdiff_t>(spec_.padding);
            T* dst = row + (oh * out_w + ow) * batch;
            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(height) ||
                iw >= static_cast<std::ptrdiff_t>(width)) {
              std::fill(dst, dst + batch, T{0});
            } else {
              const T* src = input.data() + ((ci * height + ih) * width + iw) * batch;
              std::copy(src, src + batch, dst);
            }
          }
        }
      }
    }
  }

  activated_ = Tensor<T>({spec_.out_channels, out_h, out_w, batch});
  gemm(spec_.out_channels, taps, span, weight_.data(), cols_.data(), activated_.data(), false);
  for (std::size_t co = 0; co < spec_.out_channels; ++co) {
    T* row = activated_.data() + co * span;
    const T b = bias_[co];
    for (std::size_t k = 0; k < span; ++k) {
      row[k] = row[k] + b;
      if (spec_.relu && !(row[k] > T{0})) row[k] = T{0};
    }
  }

  if (!spec_.pool) {
    argmax_.clear();
    return activated_;
  }

  const PoolSpec& pool = *spec_.pool;
  const std::size_t ph = (out_h - pool.window) / pool.stride + 1;
  const std::size_t pw = (out_w - pool.window) / pool.stride + 1;
  Tensor<T> pooled({spec_.out_channels, ph, pw, batch});
  argmax_.assign(pooled.size(), 0);
  for (std::size_t co = 0; co < spec_.out_channels; ++co) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        for (std::size_t b = 0; b < batch; ++b) {
          std::size_t best = ((co * out_h + y * pool.stride) * out_w + x * pool.stride) * batch + b;
          for (std::size_t dy = 0; dy < pool.window; ++dy) {
            for (std::size_t dx = 0; dx < pool.window; ++dx) {
              const std::size_t idx =
                  ((co * out_h + y * pool.stride + dy) * out_w + x * pool.stride + dx) * batch + b;
              if (activated_[idx] > activated_[best]) best = idx;
            }
          }
          const std::size_t o = ((co * ph + y) * pw + x) * batch + b;
          pooled[o] = activated_[best];
          argmax_[o] = best;
        }
      }
    }
  }
  return pooled;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& d_output) {
  if (!has_forward_state()) throw ContractError("conv2d backward called without a forward pass");
  const std::size_t batch = input_shape_[3];
  const std::size_t span = conv_size_.rows * conv_size_.cols * batch;
  const std::size_t taps = cols_.dim(0);

  Tensor<T> d_act(activated_.shape());
  if (spec_.pool) {
    if (d_output.size() != argmax_.size()) {
      throw ShapeError("conv2d backward: upstream " + to_string(d_output.shape()) +
                       " does not match pooled output");
    }
    for (std::size_t o = 0; o < argmax_.size(); ++o) d_act[argmax_[o]] += d_output[o];
  } else {
    require_same_shape(d_output.shape(), activated_.shape(), "conv2d backward");
    d_act = d_output;
  }
  if (spec_.relu) {
    for (std::size_t k = 0; k < d_act.size(); ++k)
      if (!(activated_[k] > T{0})) d_act[k] = T{0};
  }

  for (std::size_t co = 0; co < spec_.out_channels; ++co) {
    const T* row = d_act.data() + co * span;
    T total{0};
    for (std::size_t k = 0; k < span; ++k) total += row[k];
    grad_bias_[co] += total;
  }
  gemm_nt(spec_.out_channels, taps, span, d_act.data(), cols_.data(), grad_weight_.data());

  Tensor<T> d_cols({taps, span});
  gemm_tn(spec_.out_channels, taps, span, weight_.data(), d_act.data(), d_cols.data());

  const std::size_t channels = input_shape_[0], height = input_shape_[1], width = input_shape_[2];
  Tensor<T> d_input(input_shape_);
  for (std::size_t ci = 0; ci < channels; ++ci) {
    for (std::size_t kh = 0; kh < spec_.kernel_h; ++kh) {
      for (std::size_t kw = 0; kw < spec_.kernel_w; ++kw) {
        const T* row = d_cols.data() + ((ci * spec_.kernel_h + kh) * spec_.kernel_w + kw) * span;
        for (std::size_t oh = 0; oh < conv_size_.rows; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec_.stride + kh) -
                                    static_cast<std::ptrdiff_t>(spec_.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ow = 0; ow < conv_size_.cols; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec_.stride + kw) -
                                      static_cast<std::ptrdiff_t>(spec_.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
            const T* src = row + (oh * conv_size_.cols + ow) * batch;
            T* dst = d_input.data() + ((ci * height + ih) * width + iw) * batch;
            for (std::size_t b = 0; b < batch; ++b) dst[b] += src[b];
          }
        }
      }
    }
  }
  return d_input;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvLayerSpec& spec,
                         const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d_forward expects (C, H, W), got " + to_string(input.shape()));
  }
  Conv2d<T> layer(spec);
  require_same_shape(weight.shape(), layer.weight().shape(), "conv2d weight");
  require_same_shape(bias.shape(), layer.bias().shape(), "conv2d bias");
  layer.weight() = weight;
  layer.bias() = bias;
  Tensor<T> batched = input;
  batched.reshape({input.dim(0), input.dim(1), input.dim(2), 1});
  Tensor<T> out = layer.forward(batched);
  out.reshape({out.dim(0), out.dim(1), out.dim(2)});
  return out;
}

// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> adaptive_window(std::size_t i, std::size_t in,
                                                    std::size_t out) {
  const std::size_t begin = (i * in) / out;
  const std::size_t end = ((i + 1) * in + out - 1) / out;
  return {begin, end};
}

template <typename T>
AdaptivePool<T> adaptive_maxpool(const Tensor<T>& map, GridSize target) {
  if (map.rank() != 4) {
    throw ShapeError("adaptive_maxpool expects (D, H, W, B), got " + to_string(map.shape()));
  }
  const std::size_t depth = map.dim(0), height = map.dim(1), width = map.dim(2),
                    batch = map.dim(3);
  if (target.rows == 0 || target.cols == 0 || target.rows > height || target.cols > width) {
    throw ShapeError("adaptive_maxpool: target " + to_string(target) + " larger than map " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  AdaptivePool<T> out{FeatureGrid<T>(target.rows, target.cols, depth, batch), {}};
  out.argmax.assign(out.grid.tensor().size(), 0);
  for (std::size_t r = 0; r < target.rows; ++r) {
    const auto [h0, h1] = adaptive_window(r, height, target.rows);
    for (std::size_t c = 0; c < target.cols; ++c) {
      const auto [w0, w1] = adaptive_window(c, width, target.cols);
      for (std::size_t d = 0; d < depth; ++d) {
        for (std::size_t b = 0; b < batch; ++b) {
          std::size_t best = ((d * height + h0) * width + w0) * batch + b;
          for (std::size_t h = h0; h < h1; ++h) {
            for (std::size_t w = w0; w < w1; ++w) {
              const std::size_t idx = ((d * height + h) * width + w) * batch + b;
              if (map[idx] > map[best]) best = idx;
            }
          }
          out.grid.at(r, c, d, b) = map[best];
          out.argmax[(r * target.cols + c) * depth * batch + d * batch + b] = best;
        }
      }
    }
  }
  return out;
}

template <typename T>
PyramidPooling<T>::PyramidPooling(std::vector<GridSize> targets) : targets_(std::move(targets)) {
  for (std::size_t i = 1; i < targets_.size(); ++i) {
    if (targets_[i].cells() <= targets_[i - 1].cells()) {
      throw ShapeError("pyramid targets must be ordered coarse to fine: " +
                       format_grid_list(targets_));
    }
  }
}

template <typename T>
ScalePyramid<T> PyramidPooling<T>::forward(const Tensor<T>& map) {
  ScalePyramid<T> pyramid;
  argmax_.clear();
  map_shape_ = map.shape();
  for (const auto& target : targets_) {
    auto pooled = adaptive_maxpool(map, target);
    pyramid.levels.push_back(std::move(pooled.grid));
    argmax_.push_back(std::move(pooled.argmax));
  }
  return pyramid;
}

template <typename T>
Tensor<T> PyramidPooling<T>::backward(std::span<const FeatureGrid<T>> d_levels) const {
  if (argmax_.empty()) throw ContractError("pyramid backward called without a forward pass");
  if (d_levels.size() != argmax_.size()) {
    throw ShapeError("pyramid backward: expected " + std::to_string(argmax_.size()) +
                     " level gradients, got " + std::to_string(d_levels.size()));
  }
  Tensor<T> d_map(map_shape_);
  for (std::size_t l = 0; l < d_levels.size(); ++l) {
    const auto& g = d_levels[l].tensor();
    if (g.size() != argmax_[l].size()) throw ShapeError("pyramid backward: level size mismatch");
    for (std::size_t k = 0; k < g.size(); ++k) d_map[argmax_[l][k]] += g[k];
  }
  return d_map;
}

template <typename T>
ScalePyramid<T> build_pyramid(const Tensor<T>& map, std::span<const GridSize> targets) {
  PyramidPooling<T> pooling({targets.begin(), targets.end()});
  return pooling.forward(map);
}

#define CHRNN_INSTANTIATE(T)                                                                  \
  template class Conv2d<T>;                                                                   \
  template class PyramidPooling<T>;                                                           \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvLayerSpec&,                \
                                       const Tensor<T>&, const Tensor<T>&);                   \
  template AdaptivePool<T> adaptive_maxpool<T>(const Tensor<T>&, GridSize);                   \
  template ScalePyramid<T> build_pyramid<T>(const Tensor<T>&, std::span<const GridSize>);

CHRNN_INSTANTIATE(float)
CHRNN_INSTANTIATE(double)

#undef CHRNN_INSTANTIATE

}  // namespace chrnn
