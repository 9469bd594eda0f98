#include <chrnn/verify.hpp>

#include <algorithm>
#include <cmath>

namespace chrnn {

ModelConfig gradcheck_model_config(CellKind cell, std::vector<GridSize> scales, std::size_t depth,
                                   std::size_t classes) {
  ModelConfig c;
  c.in_channels = 1;
  c.in_height = 6;
  c.in_width = 6;
  c.conv = parse_conv_stack(std::to_string(depth) + "x3x3/s1/p1", 1);
  c.scales = std::move(scales);
  c.cell = cell;
  c.variant = Variant::Hrnn;
  c.readout = Readout::Concat;
  c.hidden = depth;
  c.fc = {8};
  c.classes = classes;
  c.dropout = 0.0;
  return c;
}

std::vector<GradcheckReport> gradcheck_model(const ModelConfig& config,
                                             const ModelGradcheckOptions& options) {
  Model<double> model(config, options.seed);
  model.hrnn_options().backward = options.backward;

  Rng rng(options.seed ^ 0x6772616463686bULL);
  Tensor<double> images({config.in_channels, config.in_height, config.in_width, options.batch});
  for (auto& v : images.values()) v = rng.uniform(-1.0, 1.0);
  std::vector<std::uint32_t> labels(options.batch);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(config.classes));

  // Random nonzero values everywhere so no group sits at a trivial point.
  for (auto& p : model.parameters())
    for (auto& v : p.value->values()) v = rng.uniform(-0.5, 0.5);

  model.zero_grad();
  model.forward(images, Mode::Eval);
  model.backward(labels);

  const auto loss = [&] {
    model.forward(images, Mode::Eval);
    return static_cast<double>(model.loss(labels));
  };

  std::vector<GradcheckReport> reports;
  for (auto& p : model.parameters()) {
    const std::vector<double> analytic(p.grad->data(), p.grad->data() + p.grad->size());
    GradcheckReport r = gradcheck(loss, p.value->values(), analytic, p.group + " (" + p.name + ")",
                                  options.check);
    auto it = std::find_if(reports.begin(), reports.end(), [&](const GradcheckReport& g) {
      return g.name.substr(0, g.name.find(' ')) == p.group;
    });
    if (it == reports.end()) {
      reports.push_back(r);
      continue;
    }
    const std::size_t coords = it->coordinates + r.coordinates;
    if (!(r.worst_error <= it->worst_error)) *it = r;
    it->coordinates = coords;
    it->passed = it->worst_error <= options.check.tolerance;
  }
  return reports;
}

DegeneracyReport degeneracy_check(const DegeneracyOptions& options) {
  HrnnConfig config;
  config.cell = CellKind::Srn;
  config.scales = options.scales;
  config.depth = options.depth;
  config.hidden = options.depth;
  HrnnWeights<double> weights(config);
  weights.set_zero();
  for (auto& level : weights.directions) {
    for (auto& d : level) {
      for (std::size_t i = 0; i < config.hidden; ++i) d.w_in(i, i) = 1.0;
      if (options.perturb_recurrent) d.w_row(0, 0) = 0.5;
    }
  }

  Rng rng(options.seed);
  DegeneracyReport report;
  for (std::size_t n = 0; n < options.pyramids; ++n) {
    ScalePyramid<double> pyramid;
    for (const auto& s : config.scales) {
      FeatureGrid<double> g(s.rows, s.cols, config.depth, 1);
      if (!options.zero_input)
        for (auto& v : g.tensor().values()) v = rng.uniform(-1.0, 1.0);
      pyramid.levels.push_back(std::move(g));
    }
    const HrnnState<double> state = hrnn_forward(pyramid, weights);
    for (std::size_t l = 0; l < config.levels(); ++l) {
      if (!config.scanned(l)) continue;
      const auto& x = pyramid.levels[l].tensor();
      const auto& fused = state.fused[l].tensor();
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double expected = 4.0 * std::max(x[k], 0.0);
        report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(fused[k] - expected));
      }
    }
    ++report.pyramids;
  }
  return report;
}

HrnnConfig reference_audit_config(CellKind cell) {
  HrnnConfig c;
  c.cell = cell;
  c.scales = parse_grid_list("1,2,3,6");
  c.depth = 256;
  c.hidden = 256;
  return c;
}

std::string format_audit(const ParameterCount& count) {
  return "matrices=" + std::to_string(count.matrices) +
         " params=" + std::to_string(count.matrix_params);
}

}  // namespace chrnn
