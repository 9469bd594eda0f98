#pragma once

#include <chrnn/convnet.hpp>
#include <chrnn/data.hpp>
#include <chrnn/gradcheck.hpp>
#include <chrnn/model.hpp>
#include <chrnn/random.hpp>
#include <chrnn/tensor.hpp>

#include <vector>

namespace chrnn::test {

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

template <typename T>
FeatureGrid<T> random_grid(std::size_t rows, std::size_t cols, std::size_t depth,
                           std::size_t batch, Rng& rng) {
  FeatureGrid<T> g(rows, cols, depth, batch);
  fill_uniform(g.tensor(), rng);
  return g;
}

/// Dot product of two equally shaped tensors; turns any output into a scalar
/// loss whose gradient w.r.t. the output is `weights`.
template <typename T>
double weighted_sum(const Tensor<T>& out, const Tensor<T>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i)
    s += static_cast<double>(out[i]) * static_cast<double>(weights[i]);
  return s;
}

inline std::vector<double> to_vector(const Tensor<double>& t) {
  return {t.data(), t.data() + t.size()};
}

/// 1x8x8 input, one 2x2/s2 conv to a 4x4 map, scales 1,2,4.
inline ModelConfig tiny_model_config(CellKind cell = CellKind::Srn, std::size_t classes = 3) {
  ModelConfig c;
  c.in_channels = 1;
  c.in_height = 8;
  c.in_width = 8;
  c.conv = parse_conv_stack("4x2x2/s2/p0/linear", 1);
  c.scales = parse_grid_list("1,2,4");
  c.cell = cell;
  c.readout = Readout::Concat;
  c.fc = {16};
  c.classes = classes;
  c.dropout = 0.0;
  return c;
}

/// n random 1x8x8 samples with labels cycling through `classes`.
inline Dataset tiny_dataset(std::size_t n, std::size_t classes, std::uint64_t seed,
                            const std::string& split = "train") {
  Rng rng(seed);
  Dataset d;
  d.images = Tensor<float>({n, 1, 8, 8});
  fill_uniform(d.images, rng);
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<std::uint32_t>(i % classes));
  d.classes = classes;
  d.split = split;
  return d;
}

}  // namespace chrnn::test
