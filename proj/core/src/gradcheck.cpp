#include <chrnn/gradcheck.hpp>

#include <chrnn/errors.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace chrnn {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / scale;
}

std::string GradcheckReport::describe() const {
  std::ostringstream os;
  os << name << ": " << (passed ? "ok" : "FAILED") << " coords=" << coordinates
     << " worst_rel_err=" << worst_error << " at index " << worst_index
     << " (analytic=" << worst_analytic << ", numeric=" << worst_numeric << ")";
  return os.str();
}

GradcheckReport gradcheck(const std::function<double()>& loss, std::span<double> theta,
                          std::span<const double> analytic, std::string name,
                          const GradcheckOptions& options) {
  if (theta.size() != analytic.size()) {
    throw ShapeError("gradcheck " + name + ": " + std::to_string(theta.size()) +
                     " parameters but " + std::to_string(analytic.size()) + " gradients");
  }
  GradcheckReport report;
  report.name = std::move(name);
  report.coordinates = theta.size();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + options.epsilon;
    const double plus = loss();
    theta[i] = saved - options.epsilon;
    const double minus = loss();
    theta[i] = saved;
    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double err = relative_error(analytic[i], numeric, options.abs_floor);
    // NaN compares false and is reported as the worst coordinate.
    if (i == 0 || !(err <= report.worst_error)) {
      report.worst_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.worst_error <= options.tolerance;
  return report;
}

}  // namespace chrnn
