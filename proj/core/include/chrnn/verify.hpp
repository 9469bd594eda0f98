#pragma once

// Self-checks shared by the command-line tool and the acceptance suite:
// whole-model gradient checks, the degenerate-configuration identity and the
// parameter audit.

#include <chrnn/gradcheck.hpp>
#include <chrnn/hrnn.hpp>
#include <chrnn/model.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace chrnn {

/// Small model for gradient checks: a 3x3 padded conv producing `depth`
/// channels on a 6x6 input, the given scales, H = D = depth, concat readout,
/// one hidden FC layer of 8 units, `classes` outputs and no dropout.
ModelConfig gradcheck_model_config(CellKind cell, std::vector<GridSize> scales, std::size_t depth,
                                   std::size_t classes);

struct ModelGradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t batch = 2;
  GradcheckOptions check;
  BackwardOptions backward;
};

/// Central-difference check of every parameter in 64-bit precision. One
/// report per parameter group; a report's name is "<group> (<parameter>)" of
/// the parameter holding the worst coordinate.
std::vector<GradcheckReport> gradcheck_model(const ModelConfig& config,
                                             const ModelGradcheckOptions& options = {});

struct DegeneracyOptions {
  std::size_t pyramids = 100;
  std::uint64_t seed = 1;
  std::size_t depth = 8;
  std::vector<GridSize> scales{{2, 2}, {3, 3}, {6, 6}};
  /// Negative control: sets one recurrent entry to a nonzero value.
  bool perturb_recurrent = false;
  /// Feeds all-zero pyramids instead of random ones.
  bool zero_input = false;
};

struct DegeneracyReport {
  std::size_t pyramids = 0;
  double max_abs_deviation = 0.0;
};

/// Builds SRN weights with zero recurrent and cross-scale matrices, identity
/// input matrices and zero biases, and measures max |fused - 4 relu(x)|.
DegeneracyReport degeneracy_check(const DegeneracyOptions& options = {});

/// H = D = 256 over scales {1x1, 2x2, 3x3, 6x6}.
HrnnConfig reference_audit_config(CellKind cell);

/// "matrices=<n> params=<n>"
std::string format_audit(const ParameterCount& count);

}  // namespace chrnn
