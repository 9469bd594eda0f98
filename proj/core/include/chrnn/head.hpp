#pragma once

// Classification head: scale readout, fully-connected ReLU layers with
// inverted dropout, and a softmax output with cross-entropy loss.

#include <chrnn/convnet.hpp>
#include <chrnn/random.hpp>
#include <chrnn/tensor.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

/// How level outputs become the head input vector.
///   Concat:   every cell of every level, levels coarse to fine, cells row-major.
///   CellMean: per level, the mean over cells; levels concatenated. Orderless.
enum class Readout { Concat, CellMean };

std::string to_string(Readout r);
Readout parse_readout(const std::string& text);

/// Width of the readout vector for levels of the given sizes and widths.
std::size_t readout_width(Readout readout, std::span<const GridSize> sizes,
                          std::span<const std::size_t> widths);

/// Concatenation of all level outputs into a (sum of cells*width) x B matrix.
template <typename T>
Tensor<T> concat_scales(std::span<const FeatureGrid<T>> levels);

template <typename T>
Tensor<T> readout_forward(std::span<const FeatureGrid<T>> levels, Readout readout);

/// Splits dL/d(readout) back into per-level gradients shaped like `levels`.
template <typename T>
std::vector<FeatureGrid<T>> readout_backward(const Tensor<T>& d_readout,
                                             std::span<const FeatureGrid<T>> levels,
                                             Readout readout);

/// Fully-connected layer y = W x + b on an (in x B) input.
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out);

  std::size_t in() const { return weight_.dim(1); }
  std::size_t out() const { return weight_.dim(0); }

  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& bias() const { return bias_; }
  Tensor<T>& grad_weight() { return grad_weight_; }
  Tensor<T>& grad_bias() { return grad_bias_; }

  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients; returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy);

  bool has_forward_state() const { return !input_.empty(); }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  Tensor<T> grad_weight_;
  Tensor<T> grad_bias_;
  Tensor<T> input_;
};

/// Mask of inverted-dropout factors: 0 with probability `rate`, else 1/(1-rate).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng);

struct HeadConfig {
  std::size_t input_width = 0;
  std::vector<std::size_t> hidden;  // widths of the ReLU layers
  std::size_t classes = 0;
};

template <typename T>
class Head {
 public:
  Head() = default;
  explicit Head(const HeadConfig& config);

  const HeadConfig& config() const { return config_; }
  std::vector<Dense<T>>& layers() { return layers_; }
  const std::vector<Dense<T>>& layers() const { return layers_; }

  void init(Rng& rng);

  /// x: (input_width x B) -> class probabilities (classes x B). `masks`, when
  /// given, holds one dropout mask per hidden layer.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<Tensor<T>>* masks = nullptr);
  /// dL/dlogits -> dL/dx, accumulating parameter gradients.
  Tensor<T> backward(const Tensor<T>& d_logits);

  std::vector<Shape> hidden_shapes(std::size_t batch) const;

 private:
  HeadConfig config_;
  std::vector<Dense<T>> layers_;
  std::vector<Tensor<T>> pre_;    // hidden pre-activations
  std::vector<Tensor<T>> masks_;  // applied masks (empty when none)
};

/// Mean over the batch of -log(max(p[label], 1e-12)). Labels are zero-based.
template <typename T>
T cross_entropy(const Tensor<T>& probs, std::span<const std::uint32_t> labels);

/// Single distribution (vector) variant.
template <typename T>
T cross_entropy(const Tensor<T>& probs, std::uint32_t label);

/// Gradient of the mean cross-entropy w.r.t. the logits: (p - onehot) / B.
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs,
                                         std::span<const std::uint32_t> labels);

/// Number of classes ranked strictly ahead of `label` in column `b`, with ties
/// broken in favour of the lower class index.
template <typename T>
std::size_t label_rank(const Tensor<T>& probs, std::size_t b, std::uint32_t label);

}  // namespace chrnn
