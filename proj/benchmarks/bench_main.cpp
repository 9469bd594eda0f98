#include <chrnn/hrnn.hpp>
#include <chrnn/model.hpp>
#include <chrnn/random.hpp>
#include <chrnn/tensor.hpp>

#include <benchmark/benchmark.h>

#include <vector>

using namespace chrnn;

namespace {

template <typename T>
void fill(std::vector<T>& v, Rng& rng) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 32;
  Rng rng(1);
  std::vector<float> w(n * n), x(n * cols), y(n * cols);
  fill(w, rng);
  fill(x, rng);
  for (auto _ : state) {
    gemm(n, n, cols, w.data(), x.data(), y.data(), false);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * cols));
}
BENCHMARK(BM_Gemm)->Arg(16)->Arg(64)->Arg(256);

void BM_Scan(benchmark::State& state) {
  const auto kind = state.range(0) ? CellKind::Lstm : CellKind::Srn;
  const auto side = static_cast<std::size_t>(state.range(1));
  const std::size_t depth = 64, batch = 32;
  Rng rng(2);
  FeatureGrid<float> x(side, side, depth, batch);
  for (auto& v : x.tensor().values()) v = static_cast<float>(rng.uniform(-1, 1));
  DirectionWeights<float> w(kind, depth, depth);
  w.init(rng);
  for (auto _ : state) benchmark::DoNotOptimize(scan_forward(x, Direction::SE, w));
}
BENCHMARK(BM_Scan)->ArgsProduct({{0, 1}, {3, 6}});

void BM_HrnnForwardBackward(benchmark::State& state) {
  HrnnConfig cfg;
  cfg.cell = state.range(0) ? CellKind::Lstm : CellKind::Srn;
  cfg.scales = parse_grid_list("1,2,3,6");
  cfg.depth = cfg.hidden = 32;
  Rng rng(3);
  HrnnWeights<float> w(cfg), grad(cfg);
  w.init(rng);
  ScalePyramid<float> p;
  for (const auto& s : cfg.scales) {
    FeatureGrid<float> g(s.rows, s.cols, cfg.depth, 32);
    for (auto& v : g.tensor().values()) v = static_cast<float>(rng.uniform(-1, 1));
    p.levels.push_back(std::move(g));
  }
  for (auto _ : state) {
    const auto st = hrnn_forward(p, w);
    benchmark::DoNotOptimize(hrnn_backward<float>(st, w, st.outputs, grad));
  }
}
BENCHMARK(BM_HrnnForwardBackward)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
