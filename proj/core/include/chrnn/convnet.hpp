#pragma once

// Convolutional frontend and multi-scale adaptive max pooling.
//
// Feature maps use the layout (channels, height, width, batch). Region grids
// use (rows, cols, depth, batch) so that every cell's vector is contiguous.

#include <chrnn/random.hpp>
#include <chrnn/tensor.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

struct GridSize {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t cells() const { return rows * cols; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

std::string to_string(const GridSize& g);

/// Parses "1,2,3,6" (square grids) or "1x1,2x3" into grid sizes.
std::vector<GridSize> parse_grid_list(const std::string& text);
std::string format_grid_list(std::span<const GridSize> grids);

/// R x C grid of D-dimensional region vectors for a batch of B samples.
template <typename T>
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t rows, std::size_t cols, std::size_t depth, std::size_t batch = 1)
      : rows_(rows), cols_(cols), depth_(depth), batch_(batch),
        data_(Shape{rows, cols, depth, batch}) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t depth() const noexcept { return depth_; }
  std::size_t batch() const noexcept { return batch_; }
  std::size_t cells() const noexcept { return rows_ * cols_; }
  GridSize size() const noexcept { return {rows_, cols_}; }
  bool empty() const noexcept { return data_.empty(); }

  /// Stride between consecutive cells: depth * batch values.
  std::size_t cell_stride() const noexcept { return depth_ * batch_; }

  T* cell(std::size_t r, std::size_t c) { return data_.data() + (r * cols_ + c) * cell_stride(); }
  const T* cell(std::size_t r, std::size_t c) const {
    return data_.data() + (r * cols_ + c) * cell_stride();
  }

  T& at(std::size_t r, std::size_t c, std::size_t d, std::size_t b = 0) {
    return cell(r, c)[d * batch_ + b];
  }
  const T& at(std::size_t r, std::size_t c, std::size_t d, std::size_t b = 0) const {
    return cell(r, c)[d * batch_ + b];
  }

  Tensor<T>& tensor() noexcept { return data_; }
  const Tensor<T>& tensor() const noexcept { return data_; }

  bool same_layout(const FeatureGrid& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && depth_ == o.depth_ && batch_ == o.batch_;
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t depth_ = 0;
  std::size_t batch_ = 0;
  Tensor<T> data_;
};

/// Levels ordered coarse to fine, all with the same depth.
template <typename T>
struct ScalePyramid {
  std::vector<FeatureGrid<T>> levels;

  std::size_t depth() const { return levels.empty() ? 0 : levels.front().depth(); }
  std::size_t batch() const { return levels.empty() ? 0 : levels.front().batch(); }
};

struct PoolSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct ConvLayerSpec {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool relu = true;
  std::optional<PoolSpec> pool;

  /// Convolution output extent floor((in + 2 pad - k) / stride) + 1.
  std::size_t conv_extent(std::size_t in, std::size_t kernel) const;
  /// Spatial size after convolution and optional pooling; throws ShapeError.
  GridSize output_size(GridSize in) const;
};

/// Layer list syntax: "16x5x5/s1/p2/pool2s2,32x5x5/s1/p2/pool2s2"; "/linear"
/// disables the ReLU. Input channels are chained from `in_channels`.
std::vector<ConvLayerSpec> parse_conv_stack(const std::string& text, std::size_t in_channels);
std::string format_conv_stack(std::span<const ConvLayerSpec> stack);

/// Convolution (+ bias, optional ReLU, optional max pool) as a layer with a
/// recorded forward pass.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  explicit Conv2d(const ConvLayerSpec& spec);

  const ConvLayerSpec& spec() const { return spec_; }

  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& bias() const { return bias_; }
  Tensor<T>& grad_weight() { return grad_weight_; }
  Tensor<T>& grad_bias() { return grad_bias_; }

  void init(Rng& rng);

  /// input: (C, H, W, B) -> (C', H', W', B).
  Tensor<T> forward(const Tensor<T>& input);
  /// Accumulates parameter gradients and returns dL/dinput.
  Tensor<T> backward(const Tensor<T>& d_output);

  bool has_forward_state() const { return !cols_.empty(); }
  void clear_state();

 private:
  ConvLayerSpec spec_;
  Tensor<T> weight_;  // out x (in * kh * kw), rows ordered (in, kh, kw)
  Tensor<T> bias_;
  Tensor<T> grad_weight_;
  Tensor<T> grad_bias_;

  Shape input_shape_;
  GridSize conv_size_;
  Tensor<T> cols_;                   // (in*kh*kw) x (H' * W' * B)
  Tensor<T> activated_;              // conv output after ReLU, before pooling
  std::vector<std::size_t> argmax_;  // pooled output -> index into activated_
};

/// Single-sample convenience: input (C, H, W) with explicit weights of shape
/// (C', C*kh*kw) and bias (C'). Returns (C', H', W').
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvLayerSpec& spec,
                         const Tensor<T>& weight, const Tensor<T>& bias);

/// Result of adaptive max pooling with the argmax routing needed for backward.
template <typename T>
struct AdaptivePool {
  FeatureGrid<T> grid;
  std::vector<std::size_t> argmax;  // per grid value: flat index into the map
};

/// Half-open window [floor(i * in / out), ceil((i + 1) * in / out)).
std::pair<std::size_t, std::size_t> adaptive_window(std::size_t i, std::size_t in,
                                                    std::size_t out);

/// map: (D, H, W, B) -> R x C grid of channelwise window maxima.
template <typename T>
AdaptivePool<T> adaptive_maxpool(const Tensor<T>& map, GridSize target);

/// Multi-scale pooling of one map with recorded argmax routing.
template <typename T>
class PyramidPooling {
 public:
  explicit PyramidPooling(std::vector<GridSize> targets = {});

  const std::vector<GridSize>& targets() const { return targets_; }

  ScalePyramid<T> forward(const Tensor<T>& map);
  /// Sums the routed level gradients into dL/dmap.
  Tensor<T> backward(std::span<const FeatureGrid<T>> d_levels) const;

 private:
  std::vector<GridSize> targets_;
  Shape map_shape_;
  std::vector<std::vector<std::size_t>> argmax_;
};

/// Pools `map` to every target, coarse to fine. Targets must strictly increase
/// in region count.
template <typename T>
ScalePyramid<T> build_pyramid(const Tensor<T>& map, std::span<const GridSize> targets);

}  // namespace chrnn
