#include <chrnn/errors.hpp>
#include <chrnn/log.hpp>
#include <chrnn/train.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>

namespace chrnn {

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  for (double m : {lr_mult_conv, lr_mult_hrnn, lr_mult_head})
    if (!(m >= 0.0)) throw ConfigError("train.lr_mult.* must be >= 0");
  if (threads < 1) throw ConfigError("train.threads must be >= 1");
}

double TrainConfig::multiplier(const std::string& group) const {
  if (group == "conv") return lr_mult_conv;
  if (group == "head") return lr_mult_head;
  if (group.rfind("hrnn", 0) == 0) return lr_mult_hrnn;
  throw ContractError("unknown parameter group '" + group + "'");
}

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, SgdState<T>& state, double lr,
              std::span<const double> multipliers, double weight_decay) {
  if (multipliers.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(multipliers.size()) + " multipliers for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.value->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer holds " + std::to_string(state.velocity.size()) +
                     " velocity buffers for " + std::to_string(params.size()) + " parameters");
  }
  const T mu = static_cast<T>(state.momentum);
  const T decay = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& theta = *params[i].value;
    const Tensor<T>& grad = *params[i].grad;
    Tensor<T>& v = state.velocity[i];
    require_same_shape(theta.shape(), grad.shape(), ("sgd_step " + params[i].name).c_str());
    require_same_shape(theta.shape(), v.shape(), ("sgd_step velocity " + params[i].name).c_str());
    const T rate = static_cast<T>(lr * multipliers[i]);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      T g = grad[k];
      if (weight_decay != 0.0) g += decay * theta[k];
      v[k] = mu * v[k] - rate * g;
      theta[k] += v[k];
    }
  }
}

template void sgd_step<float>(std::span<const ParamRef<float>>, SgdState<float>&, double,
                              std::span<const double>, double);
template void sgd_step<double>(std::span<const ParamRef<double>>, SgdState<double>&, double,
                               std::span<const double>, double);

bool LrSchedule::update(double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw ContractError("lr schedule: accuracy " + std::to_string(accuracy) + " outside [0, 1]");
  }
  if (accuracy > best) {
    best = accuracy;
    stalled = 0;
    return false;
  }
  if (++stalled < patience) return false;
  lr /= 10.0;
  stalled = 0;
  return true;
}

template <typename T>
HitCounts count_hits(const Tensor<T>& probs, std::span<const std::uint32_t> labels) {
  if (probs.rank() != 2 || probs.dim(1) != labels.size()) {
    throw ShapeError("count_hits: probabilities " + to_string(probs.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  HitCounts hits;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= probs.dim(0)) throw DataError("count_hits: label out of range");
    const std::size_t rank = label_rank(probs, b, labels[b]);
    hits.top1 += rank == 0;
    hits.top5 += rank < 5;
  }
  return hits;
}

template HitCounts count_hits<float>(const Tensor<float>&, std::span<const std::uint32_t>);
template HitCounts count_hits<double>(const Tensor<double>&, std::span<const std::uint32_t>);

EvalResult evaluate(Model<float>& model, const Dataset& data, std::size_t batch) {
  if (data.size() == 0) throw DataError("evaluate: dataset '" + data.split + "' is empty");
  if (batch == 0) throw ContractError("evaluate: batch must be positive");
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t top1 = 0, top5 = 0;
  std::vector<std::uint32_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(start + batch, data.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<std::uint32_t>(start));
    const auto labels = data.gather_labels(idx);
    const Tensor<float>& probs = model.forward(data.gather(idx), Mode::Eval);
    loss_sum += static_cast<double>(model.loss(labels)) * static_cast<double>(labels.size());
    const HitCounts hits = count_hits(probs, std::span<const std::uint32_t>(labels));
    top1 += hits.top1;
    top5 += hits.top5;
  }
  const double n = static_cast<double>(data.size());
  r.samples = data.size();
  r.loss = loss_sum / n;
  r.top1 = static_cast<double>(top1) / n;
  r.top5 = static_cast<double>(top5) / n;
  return r;
}

std::string Metrics::format() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu split=%s loss=%.6f top1=%.4f top5=%.4f lr=%g", epoch,
                split.c_str(), loss, top1, top5, lr);
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

std::string hexfloat(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double parse_double(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw CheckpointError("trainer state: bad number '" + token + "'");
  }
  return v;
}

}  // namespace

std::string TrainerState::serialize() const {
  std::ostringstream os;
  os << "lr " << hexfloat(schedule.lr) << '\n'
     << "patience " << schedule.patience << '\n'
     << "best " << hexfloat(schedule.best) << '\n'
     << "stalled " << schedule.stalled << '\n'
     << "epoch " << epoch << '\n'
     << "cursor " << cursor << '\n'
     << "step " << step << '\n'
     << "loss_sum " << hexfloat(loss_sum) << '\n'
     << "hits1 " << hits1 << '\n'
     << "hits5 " << hits5 << '\n'
     << "permutation " << permutation.size();
  for (auto p : permutation) os << ' ' << p;
  os << '\n' << "rng " << rng.serialize() << '\n';
  return os.str();
}

TrainerState TrainerState::deserialize(const std::string& text) {
  TrainerState s;
  std::istringstream in(text);
  std::string key, token;
  auto expect = [&](const char* name) {
    if (!(in >> key) || key != name) {
      throw CheckpointError(std::string("trainer state: expected '") + name + "', got '" + key +
                            "'");
    }
  };
  auto read_double = [&](const char* name) {
    expect(name);
    in >> token;
    return parse_double(token);
  };
  auto read_count = [&](const char* name) {
    expect(name);
    std::uint64_t v = 0;
    if (!(in >> v)) throw CheckpointError(std::string("trainer state: bad ") + name);
    return v;
  };
  s.schedule.lr = read_double("lr");
  s.schedule.patience = read_count("patience");
  s.schedule.best = read_double("best");
  s.schedule.stalled = read_count("stalled");
  s.epoch = read_count("epoch");
  s.cursor = read_count("cursor");
  s.step = read_count("step");
  s.loss_sum = read_double("loss_sum");
  s.hits1 = read_count("hits1");
  s.hits5 = read_count("hits5");
  const std::uint64_t n = read_count("permutation");
  s.permutation.resize(n);
  for (auto& p : s.permutation)
    if (!(in >> p)) throw CheckpointError("trainer state: truncated permutation");
  expect("rng");
  std::getline(in >> std::ws, token);
  s.rng.deserialize(token);
  return s;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model<float>& model, const Dataset& train, const Dataset* val,
                 const TrainConfig& config)
    : model_(model), train_(train), val_(val), config_(config) {
  config_.validate();
  train_.validate();
  if (train_.size() == 0) throw DataError("training set is empty");
  if (val_) val_->validate();
  sgd_.momentum = config_.momentum;
  state_.schedule.lr = config_.lr;
  state_.schedule.patience = config_.patience;
  state_.rng = Rng(mix_seed(config_.seed) ^ 0x747261696eULL);
  model_.hrnn_options().threads = config_.threads;
}

void Trainer::begin_epoch() {
  state_.permutation.resize(train_.size());
  std::iota(state_.permutation.begin(), state_.permutation.end(), 0u);
  for (std::size_t i = state_.permutation.size(); i > 1; --i)
    std::swap(state_.permutation[i - 1], state_.permutation[state_.rng.below(i)]);
  state_.cursor = 0;
}

bool Trainer::epoch_complete() const {
  return !state_.permutation.empty() && state_.cursor >= state_.permutation.size();
}

double Trainer::step() {
  if (state_.permutation.empty()) begin_epoch();
  if (epoch_complete()) throw ContractError("trainer: epoch complete, call finish_epoch first");
  const std::size_t begin = state_.cursor;
  const std::size_t end = std::min(begin + config_.batch, state_.permutation.size());
  const std::span<const std::uint32_t> idx(state_.permutation.data() + begin, end - begin);

  std::vector<bool> flip;
  if (config_.augment_flip) {
    for (std::size_t b = 0; b < idx.size(); ++b) flip.push_back(state_.rng.bernoulli(0.5));
  }
  const Tensor<float> images = train_.gather(idx, config_.augment_flip ? &flip : nullptr);
  const auto labels = train_.gather_labels(idx);

  const std::string where = "epoch " + std::to_string(state_.epoch + 1) + " step " +
                            std::to_string(state_.step + 1) + " (batch samples " +
                            std::to_string(begin) + ".." + std::to_string(end - 1) + ")";
  model_.zero_grad();
  double loss = 0.0;
  try {
    const Tensor<float>& probs = model_.forward(images, Mode::Train, &state_.rng);
    loss = model_.loss(labels);
    const HitCounts hits = count_hits(probs, std::span<const std::uint32_t>(labels));
    state_.hits1 += hits.top1;
    state_.hits5 += hits.top5;
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at " + where);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at " + where);
  model_.backward(labels);

  const auto params = model_.parameters();
  const auto frozen = model_.frozen_groups();
  std::vector<double> mult;
  for (const auto& p : params) {
    const bool is_frozen = std::find(frozen.begin(), frozen.end(), p.group) != frozen.end();
    mult.push_back(is_frozen ? 0.0 : config_.multiplier(p.group));
    for (float g : p.grad->values())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name + " at " + where);
  }
  sgd_step<float>(params, sgd_, state_.schedule.lr, mult, config_.weight_decay);

  state_.loss_sum += loss * static_cast<double>(idx.size());
  state_.cursor = end;
  ++state_.step;
  log_debug("step " + std::to_string(state_.step) + " loss " + std::to_string(loss));
  return loss;
}

std::vector<Metrics> Trainer::finish_epoch() {
  if (!epoch_complete()) throw ContractError("trainer: finish_epoch before the epoch is complete");
  const double n = static_cast<double>(state_.permutation.size());
  std::vector<Metrics> out;
  const std::size_t epoch = state_.epoch + 1;
  const double lr = state_.schedule.lr;
  out.push_back({epoch, "train", state_.loss_sum / n, static_cast<double>(state_.hits1) / n,
                 static_cast<double>(state_.hits5) / n, lr});
  double accuracy = out.back().top1;
  if (val_ && val_->size() > 0) {
    const EvalResult r = evaluate(model_, *val_);
    out.push_back({epoch, "val", r.loss, r.top1, r.top5, lr});
    accuracy = r.top1;
  }
  if (state_.schedule.update(accuracy)) {
    log_info("learning rate reduced to " + std::to_string(state_.schedule.lr));
  }
  state_.epoch = epoch;
  state_.cursor = 0;
  state_.permutation.clear();
  state_.loss_sum = 0.0;
  state_.hits1 = state_.hits5 = 0;
  return out;
}

std::vector<Metrics> Trainer::run(const MetricsSink& sink) {
  std::vector<Metrics> history;
  while (state_.epoch < config_.epochs) {
    do {
      step();
    } while (!epoch_complete());
    for (auto& m : finish_epoch()) {
      if (sink) sink(m);
      history.push_back(std::move(m));
    }
  }
  return history;
}

}  // namespace chrnn
