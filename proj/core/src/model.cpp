#include <chrnn/model.hpp>

namespace chrnn {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Hrnn: return "hrnn";
    case Variant::Mrnn: return "mrnn";
    case Variant::Spp: return "spp";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  if (text == "hrnn") return Variant::Hrnn;
  if (text == "mrnn") return Variant::Mrnn;
  if (text == "spp") return Variant::Spp;
  throw ConfigError("unknown model variant '" + text + "' (expected hrnn, mrnn or spp)");
}

GridSize ModelConfig::feature_map() const {
  GridSize size{in_height, in_width};
  for (const auto& spec : conv) size = spec.output_size(size);
  return size;
}

std::size_t ModelConfig::depth() const {
  return conv.empty() ? in_channels : conv.back().out_channels;
}

HrnnConfig ModelConfig::hrnn() const {
  HrnnConfig h;
  h.cell = cell;
  h.scales = scales;
  h.depth = depth();
  h.hidden = hidden == 0 ? depth() : hidden;
  return h;
}

HeadConfig ModelConfig::head() const {
  const HrnnConfig h = hrnn();
  std::vector<std::size_t> widths;
  for (std::size_t l = 0; l < h.levels(); ++l) widths.push_back(h.output_width(l));
  return {readout_width(readout, scales, widths), fc, classes};
}

void ModelConfig::validate() const {
  if (in_channels == 0 || in_height == 0 || in_width == 0) {
    throw ConfigError("model: input extents must be positive");
  }
  std::size_t channels = in_channels;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    if (conv[i].in_channels != channels) {
      throw ConfigError("model: conv layer " + std::to_string(i) + " expects " +
                        std::to_string(conv[i].in_channels) + " input channels, previous layer " +
                        "produces " + std::to_string(channels));
    }
    channels = conv[i].out_channels;
  }
  GridSize map;
  try {
    map = feature_map();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model: conv stack does not fit the input: ") + e.what());
  }
  if (scales.empty()) throw ConfigError("model: at least one scale is required");
  for (const auto& s : scales) {
    if (s.rows > map.rows || s.cols > map.cols) {
      throw ConfigError("model: scale " + to_string(s) + " exceeds the " + to_string(map) +
                        " feature map");
    }
  }
  if (hidden != 0 && hidden != depth()) {
    throw ConfigError("model: hidden size " + std::to_string(hidden) +
                      " must equal the feature depth " + std::to_string(depth()));
  }
  if (classes < 2) throw ConfigError("model: at least two classes are required");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  hrnn().validate();
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  for (const auto& spec : config_.conv) convs_.emplace_back(spec);
  pooling_ = PyramidPooling<T>(config_.scales);
  hrnn_ = HrnnWeights<T>(config_.hrnn());
  hrnn_grad_ = HrnnWeights<T>(config_.hrnn());
  head_ = Head<T>(config_.head());

  Rng rng(seed);
  for (auto& conv : convs_) conv.init(rng);
  hrnn_.init(rng);
  head_.init(rng);
  apply_variant();
}

template <typename T>
void Model<T>::apply_variant() {
  if (config_.variant == Variant::Hrnn) return;
  for (auto& v : hrnn_.cross.by_target)
    for (auto& m : v) m.set_zero();
  if (config_.variant == Variant::Spp) {
    for (auto& level : hrnn_.directions) {
      for (auto& d : level) {
        d.w_row.set_zero();
        d.w_col.set_zero();
      }
    }
  }
}

template <typename T>
std::vector<std::string> Model<T>::frozen_groups() const {
  switch (config_.variant) {
    case Variant::Hrnn: return {};
    case Variant::Mrnn: return {"hrnn.cross"};
    case Variant::Spp: return {"hrnn.recurrent", "hrnn.cross"};
  }
  return {};
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> params;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i);
    params.push_back({prefix + ".weight", "conv", &convs_[i].weight(), &convs_[i].grad_weight()});
    params.push_back({prefix + ".bias", "conv", &convs_[i].bias(), &convs_[i].grad_bias()});
  }
  for (std::size_t l = 0; l < hrnn_.directions.size(); ++l) {
    for (std::size_t k = 0; k < hrnn_.directions[l].size(); ++k) {
      auto& w = hrnn_.directions[l][k];
      auto& g = hrnn_grad_.directions[l][k];
      const std::string prefix = "hrnn.l" + std::to_string(l) + "." + to_string(kDirections[k]);
      params.push_back({prefix + ".w_row", "hrnn.recurrent", &w.w_row, &g.w_row});
      params.push_back({prefix + ".w_col", "hrnn.recurrent", &w.w_col, &g.w_col});
      params.push_back({prefix + ".w_in", "hrnn.input", &w.w_in, &g.w_in});
      params.push_back({prefix + ".bias", "hrnn.bias", &w.bias, &g.bias});
    }
  }
  for (std::size_t l = 0; l < hrnn_.cross.by_target.size(); ++l) {
    for (std::size_t j = 0; j < l; ++j) {
      params.push_back({"hrnn.cross." + std::to_string(j) + "_" + std::to_string(l), "hrnn.cross",
                        &hrnn_.cross.at(j, l), &hrnn_grad_.cross.at(j, l)});
    }
  }
  for (std::size_t i = 0; i < head_.layers().size(); ++i) {
    auto& layer = head_.layers()[i];
    const std::string prefix = "head.fc" + std::to_string(i);
    params.push_back({prefix + ".weight", "head", &layer.weight(), &layer.grad_weight()});
    params.push_back({prefix + ".bias", "head", &layer.bias(), &layer.grad_bias()});
  }
  return params;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.grad->set_zero();
}

template <typename T>
const Tensor<T>& Model<T>::forward(const Tensor<T>& images, Mode mode, Rng* rng) {
  if (images.rank() != 4 || images.dim(0) != config_.in_channels ||
      images.dim(1) != config_.in_height || images.dim(2) != config_.in_width) {
    throw ShapeError("model: images " + to_string(images.shape()) + " expected (" +
                     std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.in_height) + ", " + std::to_string(config_.in_width) +
                     ", batch)");
  }
  const bool drop = mode == Mode::Train && config_.dropout > 0.0;
  if (drop && !rng) throw ContractError("model: train mode with dropout needs an rng");
  const std::size_t batch = images.dim(3);

  Tensor<T> a = images;
  for (auto& conv : convs_) a = conv.forward(a);
  const ScalePyramid<T> pyramid = pooling_.forward(a);

  std::vector<FeatureGrid<T>> level_masks;
  if (drop) {
    const HrnnConfig h = hrnn_.config;
    for (std::size_t l = 0; l < h.levels(); ++l) {
      FeatureGrid<T> m(h.scales[l].rows, h.scales[l].cols, h.output_width(l), batch);
      m.tensor() = dropout_mask<T>(m.tensor().shape(), config_.dropout, *rng);
      level_masks.push_back(std::move(m));
    }
  }
  hrnn_state_ = hrnn_forward(pyramid, hrnn_, drop ? &level_masks : nullptr, hrnn_options_);

  const Tensor<T> features = readout_forward<T>(hrnn_state_.outputs, config_.readout);
  std::vector<Tensor<T>> head_masks;
  if (drop) {
    for (const auto& shape : head_.hidden_shapes(batch))
      head_masks.push_back(dropout_mask<T>(shape, config_.dropout, *rng));
  }
  probs_ = head_.forward(features, drop ? &head_masks : nullptr);
  ensure_finite<T>(probs_.values(), "model output");
  return probs_;
}

template <typename T>
T Model<T>::loss(std::span<const std::uint32_t> labels) const {
  if (probs_.empty()) throw ContractError("model: loss requested before a forward pass");
  return cross_entropy(probs_, labels);
}

template <typename T>
void Model<T>::backward(std::span<const std::uint32_t> labels) {
  if (!hrnn_state_.valid() || probs_.empty()) {
    throw ContractError("model: backward called without a forward pass");
  }
  const Tensor<T> d_logits = softmax_cross_entropy_backward(probs_, labels);
  const Tensor<T> d_features = head_.backward(d_logits);
  const auto d_levels = readout_backward<T>(d_features, hrnn_state_.outputs, config_.readout);
  const auto d_pyramid = hrnn_backward<T>(hrnn_state_, hrnn_, d_levels, hrnn_grad_, hrnn_options_);
  Tensor<T> d = pooling_.backward(d_pyramid);
  for (std::size_t i = convs_.size(); i-- > 0;) d = convs_[i].backward(d);
}

template class Model<float>;
template class Model<double>;

}  // namespace chrnn
