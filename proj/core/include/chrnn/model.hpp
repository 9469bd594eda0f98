#pragma once

// The full convolutional hierarchical recurrent network: conv frontend,
// pyramid pooling, hierarchical recurrent layers, readout and head.

#include <chrnn/convnet.hpp>
#include <chrnn/head.hpp>
#include <chrnn/hrnn.hpp>
#include <chrnn/random.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

/// Hrnn: spatial and scale dependencies. Mrnn: spatial only (cross-scale
/// matrices fixed at zero). Spp: neither (recurrent and cross-scale matrices
/// fixed at zero), which reduces the recurrent layer to per-cell transforms.
enum class Variant { Hrnn, Mrnn, Spp };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t in_height = 24;
  std::size_t in_width = 24;
  std::vector<ConvLayerSpec> conv;
  std::vector<GridSize> scales;
  CellKind cell = CellKind::Srn;
  Variant variant = Variant::Hrnn;
  Readout readout = Readout::Concat;
  std::size_t hidden = 0;  // 0 means "equal to the feature depth"
  std::vector<std::size_t> fc{64, 64};
  std::size_t classes = 2;
  double dropout = 0.5;

  GridSize feature_map() const;
  std::size_t depth() const;
  HrnnConfig hrnn() const;
  HeadConfig head() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

enum class Mode { Train, Eval };

template <typename T>
struct ParamRef {
  std::string name;
  std::string group;  // conv, hrnn.recurrent, hrnn.input, hrnn.bias, hrnn.cross, head
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  std::vector<ParamRef<T>> parameters();
  void zero_grad();

  /// Groups whose values the variant pins at zero; optimizers must not move them.
  std::vector<std::string> frozen_groups() const;

  /// images: (C, H, W, B). Train mode draws dropout masks from `rng`.
  /// Returns class probabilities (classes x B).
  const Tensor<T>& forward(const Tensor<T>& images, Mode mode, Rng* rng = nullptr);

  /// Mean cross-entropy of the last forward pass.
  T loss(std::span<const std::uint32_t> labels) const;

  /// Backpropagates the mean cross-entropy of the last forward pass into the
  /// parameter gradients (accumulating).
  void backward(std::span<const std::uint32_t> labels);

  const Tensor<T>& probabilities() const { return probs_; }
  const HrnnState<T>& hrnn_state() const { return hrnn_state_; }

  std::vector<Conv2d<T>>& convs() { return convs_; }
  HrnnWeights<T>& hrnn() { return hrnn_; }
  const HrnnWeights<T>& hrnn() const { return hrnn_; }
  Head<T>& head() { return head_; }

  HrnnOptions& hrnn_options() { return hrnn_options_; }

  /// Copies every parameter value from a model with the same configuration.
  template <typename U>
  void copy_parameters_from(Model<U>& other) {
    auto src = other.parameters();
    auto dst = parameters();
    if (src.size() != dst.size()) throw ShapeError("copy_parameters_from: models differ");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      require_same_shape(src[i].value->shape(), dst[i].value->shape(), "copy_parameters_from");
      for (std::size_t k = 0; k < dst[i].value->size(); ++k)
        (*dst[i].value)[k] = static_cast<T>((*src[i].value)[k]);
    }
  }

 private:
  void apply_variant();

  ModelConfig config_;
  std::vector<Conv2d<T>> convs_;
  PyramidPooling<T> pooling_;
  HrnnWeights<T> hrnn_;
  HrnnWeights<T> hrnn_grad_;
  Head<T> head_;
  HrnnOptions hrnn_options_;

  HrnnState<T> hrnn_state_;
  Tensor<T> probs_;
};

}  // namespace chrnn
