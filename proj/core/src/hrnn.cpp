#include <chrnn/hrnn.hpp>

#include <cmath>
#include <future>

namespace chrnn {

std::string to_string(CellKind kind) { return kind == CellKind::Lstm ? "lstm" : "srn"; }

CellKind parse_cell_kind(const std::string& text) {
  if (text == "srn") return CellKind::Srn;
  if (text == "lstm") return CellKind::Lstm;
  throw ConfigError("unknown cell kind '" + text + "' (expected srn or lstm)");
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::SE: return "se";
    case Direction::NW: return "nw";
    case Direction::NE: return "ne";
    case Direction::SW: return "sw";
  }
  return "?";
}

namespace {

// Runs fn(0..3), spreading the four directions over up to `threads` workers.
template <typename Fn>
void for_each_direction(std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(threads, kDirections.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < kDirections.size(); ++k) fn(k);
    return;
  }
  std::vector<std::future<void>> pending;
  for (std::size_t w = 0; w < workers; ++w) {
    pending.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t k = w; k < kDirections.size(); k += workers) fn(k);
    }));
  }
  for (auto& f : pending) f.get();
}

struct Neighbors {
  std::size_t r, c;
  bool has_row, has_col;
  std::size_t row_r, col_c;  // row predecessor (row_r, c), column predecessor (r, col_c)
};

// k-th cell in visit order.
Neighbors visit(std::size_t k, std::size_t rows, std::size_t cols, ScanSteps steps) {
  const std::size_t i = k / cols, j = k % cols;
  Neighbors n{};
  n.r = steps.row_step > 0 ? i : rows - 1 - i;
  n.c = steps.col_step > 0 ? j : cols - 1 - j;
  n.has_row = steps.row_step > 0 ? n.r > 0 : n.r + 1 < rows;
  n.has_col = steps.col_step > 0 ? n.c > 0 : n.c + 1 < cols;
  n.row_r = steps.row_step > 0 ? n.r - 1 : n.r + 1;
  n.col_c = steps.col_step > 0 ? n.c - 1 : n.c + 1;
  return n;
}

template <typename T>
void check_scan_inputs(const FeatureGrid<T>& input, const DirectionWeights<T>& w,
                       const FeatureGrid<T>* context) {
  const std::size_t gh = gate_count(w.kind) * w.hidden;
  if (w.w_row.shape() != Shape{gh, w.hidden} || w.w_col.shape() != Shape{gh, w.hidden} ||
      w.w_in.shape() != Shape{gh, w.depth} || w.bias.shape() != Shape{gh}) {
    throw ShapeError("scan: direction weights are inconsistent with hidden=" +
                     std::to_string(w.hidden) + " depth=" + std::to_string(w.depth));
  }
  if (input.depth() != w.depth) {
    throw ShapeError("scan: input depth " + std::to_string(input.depth()) +
                     " does not match weight depth " + std::to_string(w.depth));
  }
  if (context && !context->empty()) {
    if (context->rows() != input.rows() || context->cols() != input.cols() ||
        context->batch() != input.batch() || context->depth() != w.hidden) {
      throw ShapeError("scan: context grid " + to_string(context->tensor().shape()) +
                       " does not match " + std::to_string(input.rows()) + "x" +
                       std::to_string(input.cols()) + " cells of hidden width " +
                       std::to_string(w.hidden));
    }
  }
}

}  // namespace

template <typename T>
DirectionWeights<T>::DirectionWeights(CellKind k, std::size_t h, std::size_t d)
    : kind(k),
      hidden(h),
      depth(d),
      w_row({gate_count(k) * h, h}),
      w_col({gate_count(k) * h, h}),
      w_in({gate_count(k) * h, d}),
      bias({gate_count(k) * h}) {}

template <typename T>
void DirectionWeights<T>::init(Rng& rng) {
  glorot_uniform(w_row, hidden, hidden, rng);
  glorot_uniform(w_col, hidden, hidden, rng);
  glorot_uniform(w_in, depth, hidden, rng);
  bias.set_zero();
  if (kind == CellKind::Lstm) {
    for (std::size_t h = 0; h < hidden; ++h) bias[hidden + h] = T{1};
  }
}

template <typename T>
void DirectionWeights<T>::set_zero() {
  w_row.set_zero();
  w_col.set_zero();
  w_in.set_zero();
  bias.set_zero();
}

template <typename T>
DirectionalScan<T> scan_forward(const FeatureGrid<T>& input, Direction direction,
                                const DirectionWeights<T>& w, const FeatureGrid<T>* context) {
  check_scan_inputs(input, w, context);
  if (context && context->empty()) context = nullptr;
  const std::size_t rows = input.rows(), cols = input.cols(), batch = input.batch();
  const std::size_t hidden = w.hidden, depth = w.depth;
  const std::size_t gh = gate_count(w.kind) * hidden;
  const std::size_t hb = hidden * batch;
  const bool lstm = w.kind == CellKind::Lstm;

  DirectionalScan<T> s;
  s.direction = direction;
  s.kind = w.kind;
  s.hidden = FeatureGrid<T>(rows, cols, hidden, batch);
  s.gates = FeatureGrid<T>(rows, cols, gh, batch);
  if (lstm) {
    s.memory = FeatureGrid<T>(rows, cols, hidden, batch);
    s.memory_tanh = FeatureGrid<T>(rows, cols, hidden, batch);
  }

  const ScanSteps steps = scan_steps(direction);
  for (std::size_t k = 0; k < rows * cols; ++k) {
    const Neighbors n = visit(k, rows, cols, steps);
    T* pre = s.gates.cell(n.r, n.c);
    gemm(gh, depth, batch, w.w_in.data(), input.cell(n.r, n.c), pre, false);
    for (std::size_t g = 0; g < gh; ++g) {
      const T b = w.bias[g];
      for (std::size_t i = 0; i < batch; ++i) pre[g * batch + i] += b;
    }
    if (context) {
      const T* ctx = context->cell(n.r, n.c);
      for (std::size_t g = 0; g < gh / hidden; ++g)
        for (std::size_t i = 0; i < hb; ++i) pre[g * hb + i] += ctx[i];
    }
    if (n.has_row) gemm(gh, hidden, batch, w.w_row.data(), s.hidden.cell(n.row_r, n.c), pre, true);
    if (n.has_col) gemm(gh, hidden, batch, w.w_col.data(), s.hidden.cell(n.r, n.col_c), pre, true);

    T* h = s.hidden.cell(n.r, n.c);
    if (!lstm) {
      for (std::size_t i = 0; i < hb; ++i) h[i] = pre[i] > T{0} ? pre[i] : T{0};
      continue;
    }
    T* ig = pre;
    T* fg = pre + hb;
    T* og = pre + 2 * hb;
    T* gg = pre + 3 * hb;
    T* mem = s.memory.cell(n.r, n.c);
    T* mt = s.memory_tanh.cell(n.r, n.c);
    const T* mem_row = n.has_row ? s.memory.cell(n.row_r, n.c) : nullptr;
    const T* mem_col = n.has_col ? s.memory.cell(n.r, n.col_c) : nullptr;
    for (std::size_t i = 0; i < hb; ++i) {
      ig[i] = sigmoid(ig[i]);
      fg[i] = sigmoid(fg[i]);
      og[i] = sigmoid(og[i]);
      gg[i] = std::tanh(gg[i]);
      const T prev = (mem_row ? mem_row[i] : T{0}) + (mem_col ? mem_col[i] : T{0});
      mem[i] = fg[i] * prev + ig[i] * gg[i];
      mt[i] = std::tanh(mem[i]);
      h[i] = og[i] * mt[i];
    }
  }
  return s;
}

template <typename T>
FeatureGrid<T> scan_srn(const FeatureGrid<T>& input, Direction direction,
                        const DirectionWeights<T>& weights, const FeatureGrid<T>* context) {
  if (weights.kind != CellKind::Srn) throw ContractError("scan_srn given LSTM weights");
  return scan_forward(input, direction, weights, context).hidden;
}

template <typename T>
LstmScanResult<T> scan_lstm(const FeatureGrid<T>& input, Direction direction,
                            const DirectionWeights<T>& weights, const FeatureGrid<T>* context) {
  if (weights.kind != CellKind::Lstm) throw ContractError("scan_lstm given SRN weights");
  auto s = scan_forward(input, direction, weights, context);
  return {std::move(s.hidden), std::move(s.memory)};
}

template <typename T>
ScanGradients<T> scan_backward(const FeatureGrid<T>& input, const FeatureGrid<T>* context,
                               const DirectionalScan<T>& fwd, const DirectionWeights<T>& w,
                               const FeatureGrid<T>& d_hidden, DirectionWeights<T>& grad,
                               const BackwardOptions& options) {
  if (fwd.hidden.empty()) throw ContractError("scan backward called without a forward record");
  check_scan_inputs(input, w, context);
  if (context && context->empty()) context = nullptr;
  if (!d_hidden.same_layout(fwd.hidden)) {
    throw ShapeError("scan backward: upstream gradient " + to_string(d_hidden.tensor().shape()) +
                     " does not match hidden grid " + to_string(fwd.hidden.tensor().shape()));
  }
  if (grad.w_row.shape() != w.w_row.shape() || grad.w_in.shape() != w.w_in.shape()) {
    throw ShapeError("scan backward: gradient buffers do not match weights");
  }
  const std::size_t rows = input.rows(), cols = input.cols(), batch = input.batch();
  const std::size_t hidden = w.hidden, depth = w.depth;
  const std::size_t gates = gate_count(w.kind);
  const std::size_t gh = gates * hidden;
  const std::size_t hb = hidden * batch;
  const bool lstm = w.kind == CellKind::Lstm;

  FeatureGrid<T> dh = d_hidden;
  FeatureGrid<T> dc;
  if (lstm) dc = FeatureGrid<T>(rows, cols, hidden, batch);
  std::vector<T> dpre(gh * batch);

  ScanGradients<T> out;
  out.d_input = FeatureGrid<T>(rows, cols, depth, batch);
  if (context) out.d_context = FeatureGrid<T>(rows, cols, hidden, batch);

  const ScanSteps steps = scan_steps(fwd.direction);
  for (std::size_t k = rows * cols; k-- > 0;) {
    const Neighbors n = visit(k, rows, cols, steps);
    const T* dhc = dh.cell(n.r, n.c);
    const T* pre = fwd.gates.cell(n.r, n.c);
    T* dp = dpre.data();
    if (!lstm) {
      for (std::size_t i = 0; i < hb; ++i) dp[i] = pre[i] > T{0} ? dhc[i] : T{0};
    } else {
      const T* ig = pre;
      const T* fg = pre + hb;
      const T* og = pre + 2 * hb;
      const T* gg = pre + 3 * hb;
      const T* mt = fwd.memory_tanh.cell(n.r, n.c);
      const T* dcc = dc.cell(n.r, n.c);
      const T* mem_row = n.has_row ? fwd.memory.cell(n.row_r, n.c) : nullptr;
      const T* mem_col = n.has_col ? fwd.memory.cell(n.r, n.col_c) : nullptr;
      T* dc_row = n.has_row ? dc.cell(n.row_r, n.c) : nullptr;
      T* dc_col = n.has_col ? dc.cell(n.r, n.col_c) : nullptr;
      for (std::size_t i = 0; i < hb; ++i) {
        const T dct = dcc[i] + dhc[i] * og[i] * (T{1} - mt[i] * mt[i]);
        const T prev = (mem_row ? mem_row[i] : T{0}) + (mem_col ? mem_col[i] : T{0});
        dp[i] = dct * gg[i] * ig[i] * (T{1} - ig[i]);
        dp[hb + i] = dct * prev * fg[i] * (T{1} - fg[i]);
        dp[2 * hb + i] = dhc[i] * mt[i] * og[i] * (T{1} - og[i]);
        dp[3 * hb + i] = dct * ig[i] * (T{1} - gg[i] * gg[i]);
        const T carry = fg[i] * dct;
        if (dc_row) dc_row[i] += carry;
        if (dc_col) dc_col[i] += carry;
      }
    }

    if (n.has_row) {
      if (!options.corrupt_row_recurrence)
        gemm_tn(gh, hidden, batch, w.w_row.data(), dp, dh.cell(n.row_r, n.c));
      gemm_nt(gh, hidden, batch, dp, fwd.hidden.cell(n.row_r, n.c), grad.w_row.data());
    }
    if (n.has_col) {
      gemm_tn(gh, hidden, batch, w.w_col.data(), dp, dh.cell(n.r, n.col_c));
      gemm_nt(gh, hidden, batch, dp, fwd.hidden.cell(n.r, n.col_c), grad.w_col.data());
    }
    gemm_tn(gh, depth, batch, w.w_in.data(), dp, out.d_input.cell(n.r, n.c));
    gemm_nt(gh, depth, batch, dp, input.cell(n.r, n.c), grad.w_in.data());
    for (std::size_t g = 0; g < gh; ++g) {
      T total{0};
      for (std::size_t i = 0; i < batch; ++i) total += dp[g * batch + i];
      grad.bias[g] += total;
    }
    if (context) {
      T* dctx = out.d_context.cell(n.r, n.c);
      for (std::size_t g = 0; g < gates; ++g)
        for (std::size_t i = 0; i < hb; ++i) dctx[i] += dp[g * hb + i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

bool HrnnConfig::scanned(std::size_t level) const {
  return !(level == 0 && scales.at(0).cells() == 1);
}

std::size_t HrnnConfig::output_width(std::size_t level) const {
  return scanned(level) ? hidden : depth;
}

void HrnnConfig::validate() const {
  if (scales.empty()) throw ConfigError("hrnn: at least one scale is required");
  if (depth == 0 || hidden == 0) throw ConfigError("hrnn: depth and hidden must be positive");
  for (std::size_t l = 1; l < scales.size(); ++l) {
    if (scales[l].cells() <= scales[l - 1].cells()) {
      throw ConfigError("hrnn: scales must be ordered coarse to fine: " +
                        format_grid_list(scales));
    }
  }
}

template <typename T>
std::size_t CrossScaleWeights<T>::count() const {
  std::size_t n = 0;
  for (const auto& v : by_target) n += v.size();
  return n;
}

template <typename T>
HrnnWeights<T>::HrnnWeights(const HrnnConfig& cfg) : config(cfg) {
  config.validate();
  const std::size_t levels = config.levels();
  directions.resize(levels);
  cross.by_target.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (config.scanned(l)) {
      for (std::size_t k = 0; k < kDirections.size(); ++k)
        directions[l].emplace_back(config.cell, config.hidden, config.depth);
    }
    for (std::size_t j = 0; j < l; ++j)
      cross.by_target[l].emplace_back(Shape{config.hidden, config.output_width(j)});
  }
}

template <typename T>
void HrnnWeights<T>::init(Rng& rng) {
  for (auto& level : directions)
    for (auto& d : level) d.init(rng);
  for (std::size_t l = 0; l < cross.by_target.size(); ++l)
    for (std::size_t j = 0; j < l; ++j)
      glorot_uniform(cross.at(j, l), config.output_width(j), config.hidden, rng);
}

template <typename T>
void HrnnWeights<T>::set_zero() {
  for (auto& level : directions)
    for (auto& d : level) d.set_zero();
  for (auto& v : cross.by_target)
    for (auto& m : v) m.set_zero();
}

GridSize context_source(std::size_t r, std::size_t c, GridSize finer, GridSize coarser) {
  return {(r * coarser.rows) / finer.rows, (c * coarser.cols) / finer.cols};
}

template <typename T>
FeatureGrid<T> scale_context(std::span<const FeatureGrid<T>> fused, std::size_t level,
                             GridSize target, const CrossScaleWeights<T>& cross,
                             std::size_t hidden) {
  if (fused.size() < level) {
    throw ContractError("scale context for level " + std::to_string(level) + " needs " +
                        std::to_string(level) + " coarser levels, only " +
                        std::to_string(fused.size()) + " processed");
  }
  if (level == 0) throw ContractError("the coarsest level has no scale context");
  const std::size_t batch = fused[0].batch();
  FeatureGrid<T> s(target.rows, target.cols, hidden, batch);
  for (std::size_t j = 0; j < level; ++j) {
    const FeatureGrid<T>& src = fused[j];
    if (src.empty()) {
      throw ContractError("scale context for level " + std::to_string(level) + ": level " +
                          std::to_string(j) + " has not been processed");
    }
    const Tensor<T>& w = cross.at(j, level);
    if (w.shape() != Shape{hidden, src.depth()} || src.batch() != batch) {
      throw ShapeError("scale context: matrix " + to_string(w.shape()) + " from level " +
                       std::to_string(j) + " incompatible with source depth " +
                       std::to_string(src.depth()));
    }
    for (std::size_t r = 0; r < target.rows; ++r) {
      for (std::size_t c = 0; c < target.cols; ++c) {
        const GridSize at = context_source(r, c, target, src.size());
        gemm(hidden, src.depth(), batch, w.data(), src.cell(at.rows, at.cols), s.cell(r, c), true);
      }
    }
  }
  return s;
}

template <typename T>
HrnnState<T> hrnn_forward(const ScalePyramid<T>& pyramid, const HrnnWeights<T>& weights,
                          const std::vector<FeatureGrid<T>>* dropout_masks,
                          const HrnnOptions& options) {
  const HrnnConfig& cfg = weights.config;
  if (pyramid.levels.size() != cfg.levels()) {
    throw ShapeError("hrnn: pyramid has " + std::to_string(pyramid.levels.size()) +
                     " levels, weights expect " + std::to_string(cfg.levels()));
  }
  if (dropout_masks && dropout_masks->size() != cfg.levels()) {
    throw ShapeError("hrnn: one dropout mask per level is required");
  }
  HrnnState<T> state;
  state.config = cfg;
  state.levels.resize(cfg.levels());
  state.fused.resize(cfg.levels());
  state.outputs.resize(cfg.levels());

  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const FeatureGrid<T>& input = pyramid.levels[l];
    if (input.size() != cfg.scales[l] || input.depth() != cfg.depth) {
      throw ShapeError("hrnn: level " + std::to_string(l) + " is " + to_string(input.size()) +
                       " x " + std::to_string(input.depth()) + ", expected " +
                       to_string(cfg.scales[l]) + " x " + std::to_string(cfg.depth));
    }
    HrnnLevelState<T>& lv = state.levels[l];
    lv.input = input;
    if (!cfg.scanned(l)) {
      state.fused[l] = input;
    } else {
      if (l > 0) {
        lv.context = scale_context<T>(std::span<const FeatureGrid<T>>(state.fused.data(), l), l,
                                      cfg.scales[l], weights.cross, cfg.hidden);
      }
      lv.scans.resize(kDirections.size());
      for_each_direction(options.threads, [&](std::size_t k) {
        lv.scans[k] = scan_forward(lv.input, kDirections[k], weights.directions[l][k],
                                   lv.context.empty() ? nullptr : &lv.context);
      });
      FeatureGrid<T> fused = lv.scans[0].hidden;
      for (std::size_t k = 1; k < lv.scans.size(); ++k) {
        const auto& h = lv.scans[k].hidden.tensor();
        auto& f = fused.tensor();
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += h[i];
      }
      state.fused[l] = std::move(fused);
    }
    if (dropout_masks) {
      lv.mask = (*dropout_masks)[l];
      if (!lv.mask.same_layout(state.fused[l])) {
        throw ShapeError("hrnn: dropout mask for level " + std::to_string(l) +
                         " does not match its output");
      }
      state.outputs[l] = state.fused[l];
      auto& o = state.outputs[l].tensor();
      const auto& m = lv.mask.tensor();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= m[i];
    } else {
      state.outputs[l] = state.fused[l];
    }
  }
  return state;
}

template <typename T>
std::vector<FeatureGrid<T>> hrnn_backward(const HrnnState<T>& state, const HrnnWeights<T>& weights,
                                          std::span<const FeatureGrid<T>> d_outputs,
                                          HrnnWeights<T>& grad, const HrnnOptions& options) {
  if (!state.valid()) throw ContractError("hrnn backward called without a forward state");
  const HrnnConfig& cfg = state.config;
  const std::size_t levels = cfg.levels();
  if (d_outputs.size() != levels) {
    throw ShapeError("hrnn backward: expected " + std::to_string(levels) +
                     " output gradients, got " + std::to_string(d_outputs.size()));
  }
  std::vector<FeatureGrid<T>> d_fused(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (!d_outputs[l].same_layout(state.outputs[l])) {
      throw ShapeError("hrnn backward: gradient for level " + std::to_string(l) +
                       " does not match its output");
    }
    d_fused[l] = d_outputs[l];
    const auto& mask = state.levels[l].mask;
    if (!mask.empty()) {
      auto& d = d_fused[l].tensor();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= mask.tensor()[i];
    }
  }

  std::vector<FeatureGrid<T>> d_pyramid(levels);
  for (std::size_t l = levels; l-- > 0;) {
    const HrnnLevelState<T>& lv = state.levels[l];
    if (!cfg.scanned(l)) {
      d_pyramid[l] = d_fused[l];
      continue;
    }
    const FeatureGrid<T>* context = lv.context.empty() ? nullptr : &lv.context;
    std::vector<ScanGradients<T>> g(kDirections.size());
    for_each_direction(options.threads, [&](std::size_t k) {
      g[k] = scan_backward(lv.input, context, lv.scans[k], weights.directions[l][k], d_fused[l],
                           grad.directions[l][k], options.backward);
    });
    d_pyramid[l] = std::move(g[0].d_input);
    for (std::size_t k = 1; k < g.size(); ++k) {
      auto& acc = d_pyramid[l].tensor();
      const auto& add = g[k].d_input.tensor();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
    if (!context) continue;

    FeatureGrid<T> ds = std::move(g[0].d_context);
    for (std::size_t k = 1; k < g.size(); ++k) {
      auto& acc = ds.tensor();
      const auto& add = g[k].d_context.tensor();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
    const GridSize target = cfg.scales[l];
    const std::size_t batch = ds.batch();
    for (std::size_t j = 0; j < l; ++j) {
      const FeatureGrid<T>& src = state.fused[j];
      const Tensor<T>& w = weights.cross.at(j, l);
      Tensor<T>& gw = grad.cross.at(j, l);
      for (std::size_t r = 0; r < target.rows; ++r) {
        for (std::size_t c = 0; c < target.cols; ++c) {
          const GridSize at = context_source(r, c, target, src.size());
          gemm_nt(cfg.hidden, src.depth(), batch, ds.cell(r, c), src.cell(at.rows, at.cols),
                  gw.data());
          gemm_tn(cfg.hidden, src.depth(), batch, w.data(), ds.cell(r, c),
                  d_fused[j].cell(at.rows, at.cols));
        }
      }
    }
  }
  return d_pyramid;
}

ParameterCount count_parameters(const HrnnConfig& config) {
  config.validate();
  ParameterCount count;
  const std::size_t h = config.hidden, d = config.depth;
  for (std::size_t l = 0; l < config.levels(); ++l) {
    if (config.scanned(l)) {
      const std::size_t g = gate_count(config.cell);
      ++count.scanned_levels;
      count.matrices += kDirections.size() * 3 * g;
      count.matrix_params += kDirections.size() * g * (2 * h * h + h * d);
      count.bias_params += kDirections.size() * g * h;
    }
    for (std::size_t j = 0; j < l; ++j) {
      ++count.cross_connections;
      ++count.matrices;
      count.matrix_params += h * config.output_width(j);
    }
  }
  return count;
}

#define CHRNN_INSTANTIATE(T)                                                                     \
  template struct DirectionWeights<T>;                                                           \
  template struct CrossScaleWeights<T>;                                                          \
  template struct HrnnWeights<T>;                                                                \
  template DirectionalScan<T> scan_forward<T>(const FeatureGrid<T>&, Direction,                  \
                                              const DirectionWeights<T>&, const FeatureGrid<T>*); \
  template FeatureGrid<T> scan_srn<T>(const FeatureGrid<T>&, Direction,                          \
                                      const DirectionWeights<T>&, const FeatureGrid<T>*);        \
  template LstmScanResult<T> scan_lstm<T>(const FeatureGrid<T>&, Direction,                      \
                                          const DirectionWeights<T>&, const FeatureGrid<T>*);    \
  template ScanGradients<T> scan_backward<T>(const FeatureGrid<T>&, const FeatureGrid<T>*,       \
                                             const DirectionalScan<T>&,                          \
                                             const DirectionWeights<T>&, const FeatureGrid<T>&,  \
                                             DirectionWeights<T>&, const BackwardOptions&);      \
  template FeatureGrid<T> scale_context<T>(std::span<const FeatureGrid<T>>, std::size_t,         \
                                           GridSize, const CrossScaleWeights<T>&, std::size_t);  \
  template HrnnState<T> hrnn_forward<T>(const ScalePyramid<T>&, const HrnnWeights<T>&,           \
                                        const std::vector<FeatureGrid<T>>*, const HrnnOptions&); \
  template std::vector<FeatureGrid<T>> hrnn_backward<T>(                                         \
      const HrnnState<T>&, const HrnnWeights<T>&, std::span<const FeatureGrid<T>>,               \
      HrnnWeights<T>&, const HrnnOptions&);

CHRNN_INSTANTIATE(float)
CHRNN_INSTANTIATE(double)

#undef CHRNN_INSTANTIATE

}  // namespace chrnn
