#include "scan_oracle.hpp"
#include "support.hpp"

#include <chrnn/errors.hpp>
#include <chrnn/head.hpp>
#include <chrnn/hrnn.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace chrnn;
using chrnn::test::flip_cols;
using chrnn::test::flip_rows;
using chrnn::test::random_grid;
using chrnn::test::random_weights;
using chrnn::test::rot180;
using chrnn::test::scalar_scan;

namespace {

HrnnConfig make_config(CellKind cell, const char* scales, std::size_t d) {
  HrnnConfig c;
  c.cell = cell;
  c.scales = parse_grid_list(scales);
  c.depth = d;
  c.hidden = d;
  return c;
}

template <typename T>
ScalePyramid<T> random_pyramid(const HrnnConfig& cfg, std::size_t batch, Rng& rng) {
  ScalePyramid<T> p;
  for (const auto& s : cfg.scales) p.levels.push_back(random_grid<T>(s.rows, s.cols, cfg.depth, batch, rng));
  return p;
}

template <typename T>
void randomize(HrnnWeights<T>& w, Rng& rng, double scale = 0.5) {
  for (auto& level : w.directions)
    for (auto& d : level) d = random_weights<T>(d.kind, d.hidden, d.depth, rng, scale);
  for (auto& v : w.cross.by_target)
    for (auto& m : v) test::fill_uniform(m, rng, -scale, scale);
}

}  // namespace

TEST(Direction, StepsAndNames) {
  EXPECT_EQ(scan_steps(Direction::SE).row_step, 1);
  EXPECT_EQ(scan_steps(Direction::NW).col_step, -1);
  EXPECT_EQ(scan_steps(Direction::NE).row_step, -1);
  EXPECT_EQ(scan_steps(Direction::NE).col_step, 1);
  EXPECT_EQ(scan_steps(Direction::SW).row_step, 1);
  EXPECT_EQ(scan_steps(Direction::SW).col_step, -1);
  EXPECT_EQ(to_string(Direction::SE), "se");
  EXPECT_EQ(parse_cell_kind("lstm"), CellKind::Lstm);
  EXPECT_THROW(parse_cell_kind("gru"), ConfigError);
}

TEST(ScanSrn, ZeroWeightsGiveZeroGrid) {
  Rng rng(1);
  const auto x = random_grid<double>(3, 4, 2, 1, rng);
  DirectionWeights<double> w(CellKind::Srn, 3, 2);
  for (auto d : kDirections) {
    const auto h = scan_srn(x, d, w);
    for (double v : h.tensor().values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ScanSrn, SingleCellHasNoRecurrentTerms) {
  Rng rng(2);
  const auto x = random_grid<double>(1, 1, 3, 1, rng);
  const auto ctx = random_grid<double>(1, 1, 3, 1, rng);
  const auto w = random_weights<double>(CellKind::Srn, 3, 3, rng);
  const auto h = scan_srn(x, Direction::NW, w, &ctx);
  for (std::size_t k = 0; k < 3; ++k) {
    double a = w.bias[k] + ctx.at(0, 0, k);
    for (std::size_t m = 0; m < 3; ++m) a += w.w_in(k, m) * x.at(0, 0, m);
    EXPECT_DOUBLE_EQ(h.at(0, 0, k), std::max(a, 0.0));
  }
}

TEST(ScanSrn, IdentityInputZeroRecurrenceIsRelu) {
  Rng rng(3);
  const auto x = random_grid<double>(3, 3, 4, 2, rng);
  DirectionWeights<double> w(CellKind::Srn, 4, 4);
  for (std::size_t i = 0; i < 4; ++i) w.w_in(i, i) = 1.0;
  for (auto d : kDirections) {
    const auto h = scan_srn(x, d, w);
    for (std::size_t i = 0; i < x.tensor().size(); ++i)
      EXPECT_EQ(h.tensor()[i], std::max(x.tensor()[i], 0.0));
  }
}

TEST(ScanSrn, MatchesScalarRecursionEveryDirection) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t R = 1 + rng.below(4), C = 1 + rng.below(4);
    const auto x = random_grid<double>(R, C, 3, 1, rng);
    const auto ctx = random_grid<double>(R, C, 2, 1, rng);
    const auto w = random_weights<double>(CellKind::Srn, 2, 3, rng);
    for (auto d : kDirections) {
      const auto h = scan_srn(x, d, w, &ctx);
      const auto o = scalar_scan(x, d, w, &ctx);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t k = 0; k < 2; ++k) ASSERT_NEAR(h.at(r, c, k), o.h[r * C + c][k], 1e-12);
    }
  }
}

TEST(ScanSrn, ContextWidthMismatchIsShapeError) {
  Rng rng(4);
  const auto x = random_grid<double>(2, 2, 3, 1, rng);
  const auto ctx = random_grid<double>(2, 2, 5, 1, rng);
  const auto w = random_weights<double>(CellKind::Srn, 3, 3, rng);
  EXPECT_THROW(scan_srn(x, Direction::SE, w, &ctx), ShapeError);
  EXPECT_THROW(scan_lstm(x, Direction::SE, w), ContractError);
}

TEST(ScanLstm, ZeroWeightsGiveHalfGatesAndZeroState) {
  Rng rng(5);
  const auto x = random_grid<double>(3, 3, 2, 1, rng);
  DirectionWeights<double> w(CellKind::Lstm, 2, 2);
  const auto s = scan_forward(x, Direction::SE, w);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(s.gates.at(r, c, k), 0.5);      // i
        EXPECT_EQ(s.gates.at(r, c, 2 + k), 0.5);  // f
        EXPECT_EQ(s.gates.at(r, c, 4 + k), 0.5);  // o
        EXPECT_EQ(s.gates.at(r, c, 6 + k), 0.0);  // g
        EXPECT_EQ(s.memory.at(r, c, k), 0.0);
        EXPECT_EQ(s.hidden.at(r, c, k), 0.0);
      }
}

TEST(ScanLstm, SingleCellMemoryIsInputTimesCandidate) {
  Rng rng(6);
  const auto x = random_grid<double>(1, 1, 3, 1, rng);
  const auto w = random_weights<double>(CellKind::Lstm, 3, 3, rng);
  const auto s = scan_forward(x, Direction::SW, w);
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_DOUBLE_EQ(s.memory.at(0, 0, k), s.gates.at(0, 0, k) * s.gates.at(0, 0, 9 + k));
}

TEST(ScanLstm, TwoByTwoMatchesHandUnrolledOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto x = random_grid<double>(2, 2, 3, 1, rng);
    const auto ctx = random_grid<double>(2, 2, 3, 1, rng);
    const auto w = random_weights<double>(CellKind::Lstm, 3, 3, rng, 1.0);
    for (auto d : kDirections) {
      const auto res = scan_lstm(x, d, w, &ctx);
      const auto o = scalar_scan(x, d, w, &ctx);
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t k = 0; k < 3; ++k) {
            ASSERT_NEAR(res.hidden.at(r, c, k), o.h[r * 2 + c][k], 1e-12);
            ASSERT_NEAR(res.memory.at(r, c, k), o.c[r * 2 + c][k], 1e-12);
          }
    }
  }
}

TEST(ScanLstm, GatesStayInRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const auto x = random_grid<double>(4, 3, 2, 2, rng);
    auto w = random_weights<double>(CellKind::Lstm, 3, 2, rng, 5.0);
    const auto s = scan_forward(x, kDirections[seed % 4], w);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 12; ++k)
          for (std::size_t b = 0; b < 2; ++b) {
            const double v = s.gates.at(r, c, k, b);
            if (k < 9) {
              EXPECT_GE(v, 0.0);
              EXPECT_LE(v, 1.0);
            } else {
              EXPECT_GE(v, -1.0);
              EXPECT_LE(v, 1.0);
            }
          }
  }
}

TEST(ScanSymmetry, OppositeDirectionsAreRotationsAndFlips) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const CellKind kind = seed % 2 ? CellKind::Lstm : CellKind::Srn;
    const std::size_t R = 2 + rng.below(3), C = 2 + rng.below(3);
    const auto x = random_grid<double>(R, C, 3, 1, rng);
    const auto w = random_weights<double>(kind, 3, 3, rng);
    const auto se = [&](const FeatureGrid<double>& g) {
      return scan_forward(g, Direction::SE, w).hidden;
    };
    EXPECT_EQ(scan_forward(x, Direction::NW, w).hidden, rot180(se(rot180(x))));
    EXPECT_EQ(scan_forward(x, Direction::NE, w).hidden, flip_rows(se(flip_rows(x))));
    EXPECT_EQ(scan_forward(x, Direction::SW, w).hidden, flip_cols(se(flip_cols(x))));
  }
}

TEST(ScanLocality, PerturbationOnlyReachesDownstreamCells) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const CellKind kind = seed % 2 ? CellKind::Lstm : CellKind::Srn;
    const std::size_t R = 4, C = 4;
    const auto x = random_grid<double>(R, C, 2, 1, rng);
    const auto w = random_weights<double>(kind, 2, 2, rng);
    const std::size_t pr = rng.below(R), pc = rng.below(C);
    auto y = x;
    y.at(pr, pc, 0) += 0.75;
    y.at(pr, pc, 1) -= 0.5;
    for (auto d : kDirections) {
      const auto st = scan_steps(d);
      const auto a = scan_forward(x, d, w).hidden;
      const auto b = scan_forward(y, d, w).hidden;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const bool downstream = (static_cast<long>(r) - static_cast<long>(pr)) * st.row_step >= 0 &&
                                  (static_cast<long>(c) - static_cast<long>(pc)) * st.col_step >= 0;
          if (downstream) continue;
          for (std::size_t k = 0; k < 2; ++k) ASSERT_EQ(a.at(r, c, k), b.at(r, c, k));
        }
    }
  }
}

TEST(ScanBackward, SingleScaleSrnGradcheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_grid<double>(3, 3, 4, 1, rng);
    auto w = random_weights<double>(CellKind::Srn, 4, 4, rng);
    const auto up = random_grid<double>(3, 3, 4, 1, rng);
    const auto fwd = scan_forward(x, Direction::SE, w);
    DirectionWeights<double> g(CellKind::Srn, 4, 4);
    const auto grads = scan_backward(x, static_cast<const FeatureGrid<double>*>(nullptr), fwd, w, up, g);
    auto loss = [&] { return test::weighted_sum(scan_srn(x, Direction::SE, w).tensor(), up.tensor()); };
    EXPECT_TRUE(gradcheck(loss, w.w_row.values(), test::to_vector(g.w_row), "w_row").passed);
    EXPECT_TRUE(gradcheck(loss, w.w_col.values(), test::to_vector(g.w_col), "w_col").passed);
    EXPECT_TRUE(gradcheck(loss, w.w_in.values(), test::to_vector(g.w_in), "w_in").passed);
    EXPECT_TRUE(gradcheck(loss, w.bias.values(), test::to_vector(g.bias), "bias").passed);
    EXPECT_TRUE(
        gradcheck(loss, x.tensor().values(), test::to_vector(grads.d_input.tensor()), "x").passed);
  }
}

TEST(ScanBackward, CorruptedRowRecurrenceFailsGradcheck) {
  Rng rng(11);
  auto x = random_grid<double>(3, 3, 4, 1, rng);
  auto w = random_weights<double>(CellKind::Srn, 4, 4, rng);
  for (auto& v : w.bias.values()) v = 1.0;  // keep units active
  const auto up = random_grid<double>(3, 3, 4, 1, rng);
  const auto fwd = scan_forward(x, Direction::SE, w);
  DirectionWeights<double> g(CellKind::Srn, 4, 4);
  BackwardOptions bad;
  bad.corrupt_row_recurrence = true;
  scan_backward(x, static_cast<const FeatureGrid<double>*>(nullptr), fwd, w, up, g, bad);
  auto loss = [&] { return test::weighted_sum(scan_srn(x, Direction::SE, w).tensor(), up.tensor()); };
  EXPECT_FALSE(gradcheck(loss, w.w_row.values(), test::to_vector(g.w_row), "w_row").passed);
}

TEST(ContextSource, FloorMapping) {
  EXPECT_EQ(context_source(3, 4, {6, 6}, {3, 3}), (GridSize{1, 2}));
  EXPECT_EQ(context_source(1, 1, {2, 2}, {1, 1}), (GridSize{0, 0}));
  EXPECT_EQ(context_source(2, 0, {3, 3}, {2, 2}), (GridSize{1, 0}));
  // Every source lies inside the coarser grid.
  for (std::size_t R = 1; R <= 6; ++R)
    for (std::size_t Rs = 1; Rs <= R; ++Rs)
      for (std::size_t r = 0; r < R; ++r) EXPECT_LT(context_source(r, 0, {R, 1}, {Rs, 1}).rows, Rs);
}

TEST(ScaleContext, ZeroMatricesGiveZeroContext) {
  Rng rng(12);
  const auto cfg = make_config(CellKind::Srn, "1,2,3", 3);
  HrnnWeights<double> w(cfg);
  std::vector<FeatureGrid<double>> fused{random_grid<double>(1, 1, 3, 1, rng),
                                         random_grid<double>(2, 2, 3, 1, rng)};
  const auto s = scale_context<double>(fused, 2, {3, 3}, w.cross, 3);
  for (double v : s.tensor().values()) EXPECT_EQ(v, 0.0);
}

TEST(ScaleContext, SingleGlobalSourceBroadcasts) {
  Rng rng(13);
  const auto cfg = make_config(CellKind::Srn, "1,2", 3);
  HrnnWeights<double> w(cfg);
  randomize(w, rng);
  std::vector<FeatureGrid<double>> fused{random_grid<double>(1, 1, 3, 1, rng)};
  const auto s = scale_context<double>(fused, 1, {2, 2}, w.cross, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    double e = 0.0;
    for (std::size_t m = 0; m < 3; ++m) e += w.cross.at(0, 1)(k, m) * fused[0].at(0, 0, m);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(s.at(r, c, k), e, 1e-14);
  }
}

TEST(ScaleContext, SumsAllCoarserLevelsAtMappedCells) {
  Rng rng(14);
  const auto cfg = make_config(CellKind::Srn, "1,2,3,6", 2);
  HrnnWeights<double> w(cfg);
  randomize(w, rng);
  std::vector<FeatureGrid<double>> fused;
  for (std::size_t l = 0; l < 3; ++l)
    fused.push_back(random_grid<double>(cfg.scales[l].rows, cfg.scales[l].cols, 2, 1, rng));
  const auto s = scale_context<double>(fused, 3, {6, 6}, w.cross, 2);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t k = 0; k < 2; ++k) {
        double e = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          const std::size_t n = cfg.scales[j].rows;
          const std::size_t sr = r * n / 6, sc = c * n / 6;
          for (std::size_t m = 0; m < 2; ++m) e += w.cross.at(j, 3)(k, m) * fused[j].at(sr, sc, m);
        }
        EXPECT_NEAR(s.at(r, c, k), e, 1e-14);
      }
}

TEST(ScaleContext, UnprocessedCoarserLevelIsContractError) {
  Rng rng(15);
  const auto cfg = make_config(CellKind::Srn, "1,2,3", 2);
  HrnnWeights<double> w(cfg);
  std::vector<FeatureGrid<double>> fused{random_grid<double>(1, 1, 2, 1, rng), FeatureGrid<double>()};
  EXPECT_THROW(scale_context<double>(fused, 2, {3, 3}, w.cross, 2), ContractError);
  EXPECT_THROW(scale_context<double>(std::span(fused.data(), 1), 2, {3, 3}, w.cross, 2),
               ContractError);
}

TEST(HrnnForward, SingleGlobalLevelPassesThrough) {
  Rng rng(16);
  const auto cfg = make_config(CellKind::Lstm, "1", 4);
  HrnnWeights<double> w(cfg);
  w.init(rng);
  const auto p = random_pyramid<double>(cfg, 2, rng);
  const auto s = hrnn_forward(p, w);
  EXPECT_EQ(s.fused[0], p.levels[0]);
  EXPECT_TRUE(s.levels[0].scans.empty());
}

TEST(HrnnForward, FusedIsSumOfDirections) {
  Rng rng(17);
  const auto cfg = make_config(CellKind::Lstm, "1,2,3", 3);
  HrnnWeights<double> w(cfg);
  randomize(w, rng);
  const auto p = random_pyramid<double>(cfg, 2, rng);
  const auto s = hrnn_forward(p, w);
  for (std::size_t l = 1; l < 3; ++l) {
    const auto& ctx = s.levels[l].context;
    std::vector<FeatureGrid<double>> hs;
    // Run the scans in reverse order; fusion stays in the canonical order.
    for (std::size_t k = 4; k-- > 0;)
      hs.insert(hs.begin(), scan_forward(p.levels[l], kDirections[k], w.directions[l][k], &ctx).hidden);
    for (std::size_t i = 0; i < s.fused[l].tensor().size(); ++i) {
      const double e = ((hs[0].tensor()[i] + hs[1].tensor()[i]) + hs[2].tensor()[i]) + hs[3].tensor()[i];
      ASSERT_EQ(s.fused[l].tensor()[i], e);
    }
  }
}

TEST(HrnnForward, ThreadedScansAreBitIdentical) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto cfg = make_config(seed % 2 ? CellKind::Lstm : CellKind::Srn, "1,2,3,6", 4);
    HrnnWeights<float> w(cfg);
    w.init(rng);
    const auto p = random_pyramid<float>(cfg, 3, rng);
    HrnnOptions seq, par;
    par.threads = 4;
    const auto a = hrnn_forward<float>(p, w, nullptr, seq);
    const auto b = hrnn_forward<float>(p, w, nullptr, par);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(a.fused[l], b.fused[l]);

    std::vector<FeatureGrid<float>> up;
    for (const auto& f : a.outputs) up.push_back(random_grid<float>(f.rows(), f.cols(), f.depth(), 3, rng));
    HrnnWeights<float> ga(cfg), gb(cfg);
    const auto da = hrnn_backward(a, w, std::span<const FeatureGrid<float>>(up), ga, seq);
    const auto db = hrnn_backward(b, w, std::span<const FeatureGrid<float>>(up), gb, par);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(da[l], db[l]);
    for (std::size_t l = 1; l < 4; ++l)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(ga.directions[l][k].w_row, gb.directions[l][k].w_row);
  }
}

TEST(HrnnForward, DegenerateSrnIsFourTimesRelu) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto cfg = make_config(CellKind::Srn, "1,2,3,6", 5);
    HrnnWeights<double> w(cfg);
    for (auto& level : w.directions)
      for (auto& d : level)
        for (std::size_t i = 0; i < 5; ++i) d.w_in(i, i) = 1.0;
    const auto p = random_pyramid<double>(cfg, 2, rng);
    const auto s = hrnn_forward(p, w);
    for (std::size_t l = 1; l < 4; ++l)
      for (std::size_t i = 0; i < p.levels[l].tensor().size(); ++i)
        ASSERT_EQ(s.fused[l].tensor()[i], 4.0 * std::max(p.levels[l].tensor()[i], 0.0));
  }
}

TEST(HrnnForward, DegenerateSrnMatchesScaledSppHead) {
  // A dense layer over the degenerate features equals one with 4x weights over ReLU(x).
  Rng rng(18);
  const auto cfg = make_config(CellKind::Srn, "2,3", 3);
  HrnnWeights<double> w(cfg);
  for (auto& level : w.directions)
    for (auto& d : level)
      for (std::size_t i = 0; i < 3; ++i) d.w_in(i, i) = 1.0;
  const auto p = random_pyramid<double>(cfg, 4, rng);
  const auto s = hrnn_forward(p, w);
  const auto hrnn_in = concat_scales<double>(s.fused);
  std::vector<FeatureGrid<double>> spp;
  for (const auto& l : p.levels) {
    auto g = l;
    for (auto& v : g.tensor().values()) v = std::max(v, 0.0);
    spp.push_back(std::move(g));
  }
  const auto spp_in = concat_scales<double>(spp);
  Dense<double> a(hrnn_in.dim(0), 4), b(hrnn_in.dim(0), 4);
  a.init(rng);
  b.weight() = a.weight();
  for (auto& v : b.weight().values()) v *= 4.0;
  b.bias() = a.bias();
  const auto pa = softmax_columns(a.forward(hrnn_in));
  const auto pb = softmax_columns(b.forward(spp_in));
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
}

TEST(HrnnForward, DropoutMasksScaleOutputs) {
  Rng rng(19);
  const auto cfg = make_config(CellKind::Srn, "1,2", 3);
  HrnnWeights<double> w(cfg);
  w.init(rng);
  const auto p = random_pyramid<double>(cfg, 2, rng);
  std::vector<FeatureGrid<double>> masks;
  for (const auto& s : cfg.scales) {
    FeatureGrid<double> m(s.rows, s.cols, 3, 2);
    m.tensor() = dropout_mask<double>(m.tensor().shape(), 0.5, rng);
    masks.push_back(std::move(m));
  }
  const auto s = hrnn_forward(p, w, &masks);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < s.outputs[l].tensor().size(); ++i)
      EXPECT_EQ(s.outputs[l].tensor()[i], s.fused[l].tensor()[i] * masks[l].tensor()[i]);
}

TEST(HrnnBackward, TwoScaleLstmGradcheckIncludingCrossScale) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto cfg = make_config(CellKind::Lstm, "1,2", 3);
    HrnnWeights<double> w(cfg);
    randomize(w, rng);
    auto p = random_pyramid<double>(cfg, 2, rng);
    std::vector<FeatureGrid<double>> up;
    for (const auto& s : cfg.scales) up.push_back(random_grid<double>(s.rows, s.cols, 3, 2, rng));
    auto loss = [&] {
      const auto s = hrnn_forward(p, w);
      double v = 0;
      for (std::size_t l = 0; l < up.size(); ++l) v += test::weighted_sum(s.outputs[l].tensor(), up[l].tensor());
      return v;
    };
    HrnnWeights<double> g(cfg);
    const auto state = hrnn_forward(p, w);
    const auto dp = hrnn_backward(state, w, std::span<const FeatureGrid<double>>(up), g);
    auto check = [&](Tensor<double>& value, const Tensor<double>& grad, const char* name) {
      const auto r = gradcheck(loss, value.values(), test::to_vector(grad), name);
      EXPECT_TRUE(r.passed) << r.describe();
    };
    check(w.cross.at(0, 1), g.cross.at(0, 1), "W_01");
    for (std::size_t k = 0; k < 4; ++k) {
      auto& d = w.directions[1][k];
      auto& gd = g.directions[1][k];
      check(d.w_row, gd.w_row, "w_row");
      check(d.w_col, gd.w_col, "w_col");
      check(d.w_in, gd.w_in, "w_in");
      check(d.bias, gd.bias, "bias");
    }
    for (std::size_t l = 0; l < 2; ++l) check(p.levels[l].tensor(), dp[l].tensor(), "pyramid");
  }
}

TEST(HrnnBackward, FourScaleSrnGradcheck) {
  Rng rng(21);
  const auto cfg = make_config(CellKind::Srn, "1,2,3", 2);
  HrnnWeights<double> w(cfg);
  randomize(w, rng);
  for (auto& level : w.directions)
    for (auto& d : level)
      for (auto& v : d.bias.values()) v = 0.5 + std::abs(v);
  auto p = random_pyramid<double>(cfg, 1, rng);
  std::vector<FeatureGrid<double>> up;
  for (const auto& s : cfg.scales) up.push_back(random_grid<double>(s.rows, s.cols, 2, 1, rng));
  auto loss = [&] {
    const auto s = hrnn_forward(p, w);
    double v = 0;
    for (std::size_t l = 0; l < up.size(); ++l) v += test::weighted_sum(s.outputs[l].tensor(), up[l].tensor());
    return v;
  };
  HrnnWeights<double> g(cfg);
  const auto dp = hrnn_backward(hrnn_forward(p, w), w, std::span<const FeatureGrid<double>>(up), g);
  for (std::size_t l = 1; l < 3; ++l)
    for (std::size_t j = 0; j < l; ++j)
      EXPECT_TRUE(gradcheck(loss, w.cross.at(j, l).values(), test::to_vector(g.cross.at(j, l)), "W_jl").passed);
  for (std::size_t l = 0; l < 3; ++l)
    EXPECT_TRUE(gradcheck(loss, p.levels[l].tensor().values(), test::to_vector(dp[l].tensor()), "x").passed);
}

TEST(HrnnBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(22);
  const auto cfg = make_config(CellKind::Lstm, "1,2,3", 3);
  HrnnWeights<double> w(cfg);
  w.init(rng);
  const auto p = random_pyramid<double>(cfg, 2, rng);
  std::vector<FeatureGrid<double>> up;
  for (const auto& s : cfg.scales) up.emplace_back(s.rows, s.cols, 3, 2);
  HrnnWeights<double> g(cfg);
  const auto dp = hrnn_backward(hrnn_forward(p, w), w, std::span<const FeatureGrid<double>>(up), g);
  for (const auto& level : g.directions)
    for (const auto& d : level)
      for (const auto* t : {&d.w_row, &d.w_col, &d.w_in, &d.bias})
        for (double v : t->values()) EXPECT_EQ(v, 0.0);
  for (const auto& v : g.cross.by_target)
    for (const auto& m : v)
      for (double x : m.values()) EXPECT_EQ(x, 0.0);
  for (const auto& l : dp)
    for (double x : l.tensor().values()) EXPECT_EQ(x, 0.0);
}

TEST(HrnnBackward, MissingStateIsContractError) {
  const auto cfg = make_config(CellKind::Srn, "1,2", 2);
  HrnnWeights<double> w(cfg), g(cfg);
  std::vector<FeatureGrid<double>> up;
  EXPECT_THROW(hrnn_backward(HrnnState<double>{}, w, std::span<const FeatureGrid<double>>(up), g),
               ContractError);
}

TEST(CountParameters, ReferenceConfigurations) {
  auto srn = make_config(CellKind::Srn, "1,2,3,6", 256);
  const auto a = count_parameters(srn);
  EXPECT_EQ(a.matrices, 42u);
  EXPECT_EQ(a.matrix_params, 2752512u);
  EXPECT_EQ(a.cross_connections, 6u);
  auto lstm = srn;
  lstm.cell = CellKind::Lstm;
  const auto b = count_parameters(lstm);
  EXPECT_EQ(b.matrices, 150u);
  EXPECT_EQ(b.matrix_params, 9830400u);
}

TEST(CountParameters, OneScannedScale) {
  const auto c = count_parameters(make_config(CellKind::Srn, "3", 4));
  EXPECT_EQ(c.matrices, 12u);
  EXPECT_EQ(c.matrix_params, 192u);
  EXPECT_EQ(c.bias_params, 16u);
}

TEST(CountParameters, MatchesAllocatedWeights) {
  for (const char* scales : {"1,2", "1,2,3,6", "2,3", "3"})
    for (CellKind kind : {CellKind::Srn, CellKind::Lstm}) {
      const auto cfg = make_config(kind, scales, 3);
      HrnnWeights<double> w(cfg);
      std::size_t matrices = 0, params = 0, biases = 0;
      for (const auto& level : w.directions)
        for (const auto& d : level) {
          matrices += 3 * gate_count(kind);
          params += d.w_row.size() + d.w_col.size() + d.w_in.size();
          biases += d.bias.size();
        }
      for (const auto& v : w.cross.by_target)
        for (const auto& m : v) {
          ++matrices;
          params += m.size();
        }
      const auto c = count_parameters(cfg);
      EXPECT_EQ(c.matrices, matrices) << scales;
      EXPECT_EQ(c.matrix_params, params) << scales;
      EXPECT_EQ(c.bias_params, biases) << scales;
      EXPECT_EQ(w.cross.count(), c.cross_connections);
    }
}
