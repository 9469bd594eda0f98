#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace chrnn {

struct GradcheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-3;
  /// Denominator floor so that two vanishing gradients are not compared relatively.
  double abs_floor = 1e-7;
};

struct GradcheckReport {
  std::string name;
  std::size_t coordinates = 0;
  std::size_t worst_index = 0;
  double worst_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;

  std::string describe() const;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double abs_floor);

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing each entry of `theta` in place. `theta` is restored on return.
GradcheckReport gradcheck(const std::function<double()>& loss, std::span<double> theta,
                          std::span<const double> analytic, std::string name,
                          const GradcheckOptions& options = {});

}  // namespace chrnn
