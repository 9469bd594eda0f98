#pragma once

// Hierarchical recurrent layers: four directional 2D scans per scale (simple
// ReLU cells or LSTM cells), coarse-to-fine scale context, and fusion of the
// four directions by summation.
//
// Levels are processed coarse to fine. A leading 1x1 level is not scanned: its
// pooled vector is used directly as the level output and as a context source
// for every finer level.

#include <chrnn/convnet.hpp>
#include <chrnn/random.hpp>
#include <chrnn/tensor.hpp>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

enum class CellKind { Srn, Lstm };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(const std::string& text);

/// Gate blocks stacked in the recurrent matrices: 1 for SRN, 4 (i, f, o, g) for LSTM.
constexpr std::size_t gate_count(CellKind kind) { return kind == CellKind::Lstm ? 4 : 1; }

/// Scan orders. SE runs top-left to bottom-right, NW bottom-right to top-left,
/// NE bottom-left to top-right, SW top-right to bottom-left.
enum class Direction { SE, NW, NE, SW };

inline constexpr std::array<Direction, 4> kDirections{Direction::SE, Direction::NW, Direction::NE,
                                                      Direction::SW};

std::string to_string(Direction d);

/// +1 or -1 per axis. The row predecessor of (r, c) is (r - row_step, c) and
/// the column predecessor is (r, c - col_step).
struct ScanSteps {
  int row_step;
  int col_step;
};

constexpr ScanSteps scan_steps(Direction d) {
  switch (d) {
    case Direction::SE: return {+1, +1};
    case Direction::NW: return {-1, -1};
    case Direction::NE: return {-1, +1};
    case Direction::SW: return {+1, -1};
  }
  return {+1, +1};
}

/// Weights of one directional scan. Gate blocks are stacked row-wise in the
/// order i, f, o, g for LSTM cells.
template <typename T>
struct DirectionWeights {
  CellKind kind = CellKind::Srn;
  std::size_t hidden = 0;
  std::size_t depth = 0;
  Tensor<T> w_row;  // (G*H) x H, applied to the row predecessor
  Tensor<T> w_col;  // (G*H) x H, applied to the column predecessor
  Tensor<T> w_in;   // (G*H) x D
  Tensor<T> bias;   // G*H

  DirectionWeights() = default;
  DirectionWeights(CellKind kind, std::size_t hidden, std::size_t depth);

  /// Uniform init on matrices, zero biases, LSTM forget bias +1.
  void init(Rng& rng);
  void set_zero();
};

/// Forward record of one directional scan over one grid.
template <typename T>
struct DirectionalScan {
  Direction direction = Direction::SE;
  CellKind kind = CellKind::Srn;
  FeatureGrid<T> hidden;       // H per cell
  FeatureGrid<T> gates;        // SRN: pre-activation; LSTM: activated i, f, o, g
  FeatureGrid<T> memory;       // LSTM: c
  FeatureGrid<T> memory_tanh;  // LSTM: tanh(c)
};

/// Runs one directional scan. Out-of-grid predecessors contribute zero vectors.
/// `context` (H per cell) is added to every gate pre-activation when present.
template <typename T>
DirectionalScan<T> scan_forward(const FeatureGrid<T>& input, Direction direction,
                                const DirectionWeights<T>& weights,
                                const FeatureGrid<T>* context = nullptr);

template <typename T>
FeatureGrid<T> scan_srn(const FeatureGrid<T>& input, Direction direction,
                        const DirectionWeights<T>& weights, const FeatureGrid<T>* context = nullptr);

template <typename T>
struct LstmScanResult {
  FeatureGrid<T> hidden;
  FeatureGrid<T> memory;
};

template <typename T>
LstmScanResult<T> scan_lstm(const FeatureGrid<T>& input, Direction direction,
                            const DirectionWeights<T>& weights,
                            const FeatureGrid<T>* context = nullptr);

struct BackwardOptions {
  /// Negative-control hook: drops the gradient flowing into row predecessors.
  bool corrupt_row_recurrence = false;
};

template <typename T>
struct ScanGradients {
  FeatureGrid<T> d_input;
  FeatureGrid<T> d_context;  // empty when the scan ran without context
};

/// Backpropagation through the unrolled scan in reverse visit order. Weight
/// gradients are accumulated into `grad`.
template <typename T>
ScanGradients<T> scan_backward(const FeatureGrid<T>& input, const FeatureGrid<T>* context,
                               const DirectionalScan<T>& forward,
                               const DirectionWeights<T>& weights,
                               const FeatureGrid<T>& d_hidden, DirectionWeights<T>& grad,
                               const BackwardOptions& options = {});

// ---------------------------------------------------------------------------

struct HrnnConfig {
  CellKind cell = CellKind::Srn;
  std::vector<GridSize> scales;  // coarse to fine
  std::size_t depth = 0;         // D, region vector width
  std::size_t hidden = 0;        // H

  std::size_t levels() const { return scales.size(); }
  /// Every level is scanned except a leading 1x1 level.
  bool scanned(std::size_t level) const;
  /// Width of a level's output vectors: D for the unscanned level, else H.
  std::size_t output_width(std::size_t level) const;
  void validate() const;
};

/// Scale-to-scale matrices, one per ordered pair j < l (j coarser).
template <typename T>
struct CrossScaleWeights {
  std::vector<std::vector<Tensor<T>>> by_target;  // by_target[l][j], j < l

  Tensor<T>& at(std::size_t from, std::size_t to) { return by_target.at(to).at(from); }
  const Tensor<T>& at(std::size_t from, std::size_t to) const { return by_target.at(to).at(from); }
  std::size_t count() const;
};

template <typename T>
struct HrnnWeights {
  HrnnConfig config;
  std::vector<std::vector<DirectionWeights<T>>> directions;  // [level][direction]; empty if unscanned
  CrossScaleWeights<T> cross;

  HrnnWeights() = default;
  explicit HrnnWeights(const HrnnConfig& config);

  void init(Rng& rng);
  void set_zero();
};

/// Source cell at a coarser grid for cell (r, c) of a finer grid:
/// floor(r * R_src / R_dst), floor(c * C_src / C_dst), zero-based.
GridSize context_source(std::size_t r, std::size_t c, GridSize finer, GridSize coarser);

/// s(r, c) = sum over j < level of W_jl * fused_j(source cell). `fused` must
/// hold the outputs of every level coarser than `level`.
template <typename T>
FeatureGrid<T> scale_context(std::span<const FeatureGrid<T>> fused, std::size_t level,
                             GridSize target, const CrossScaleWeights<T>& cross,
                             std::size_t hidden);

struct HrnnOptions {
  /// Directional scans of one level run concurrently when > 1. Results are
  /// bit-identical to the sequential order.
  std::size_t threads = 1;
  BackwardOptions backward;
};

template <typename T>
struct HrnnLevelState {
  FeatureGrid<T> input;
  FeatureGrid<T> context;                 // empty for levels without coarser sources
  std::vector<DirectionalScan<T>> scans;  // empty for the unscanned level
  FeatureGrid<T> mask;                    // dropout mask, empty when not applied
};

template <typename T>
struct HrnnState {
  HrnnConfig config;
  std::vector<HrnnLevelState<T>> levels;
  std::vector<FeatureGrid<T>> fused;    // sum of the directional hidden grids
  std::vector<FeatureGrid<T>> outputs;  // fused * mask

  bool valid() const { return !levels.empty(); }
};

/// Forward over a pyramid. `dropout_masks`, when given, multiply each level's
/// fused output (inverted-dropout values 0 or 1/(1-p)).
template <typename T>
HrnnState<T> hrnn_forward(const ScalePyramid<T>& pyramid, const HrnnWeights<T>& weights,
                          const std::vector<FeatureGrid<T>>* dropout_masks = nullptr,
                          const HrnnOptions& options = {});

/// Backward given dL/d(level outputs). Accumulates into `grad` and returns
/// dL/d(pyramid levels).
template <typename T>
std::vector<FeatureGrid<T>> hrnn_backward(const HrnnState<T>& state, const HrnnWeights<T>& weights,
                                          std::span<const FeatureGrid<T>> d_outputs,
                                          HrnnWeights<T>& grad, const HrnnOptions& options = {});

struct ParameterCount {
  std::size_t matrices = 0;
  std::size_t matrix_params = 0;
  std::size_t bias_params = 0;
  std::size_t scanned_levels = 0;
  std::size_t cross_connections = 0;
};

/// Matrix and bias counts. Matrix counts follow the per-gate accounting: three
/// matrices (row, column, input) per gate per direction, plus one per
/// cross-scale connection.
ParameterCount count_parameters(const HrnnConfig& config);

}  // namespace chrnn
