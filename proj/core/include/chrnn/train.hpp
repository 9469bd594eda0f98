#pragma once

// SGD with momentum, plateau learning-rate schedule, and the resumable
// training / evaluation loops.

#include <chrnn/data.hpp>
#include <chrnn/model.hpp>
#include <chrnn/random.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

struct TrainConfig {
  std::size_t batch = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t patience = 3;
  double weight_decay = 0.0;
  double lr_mult_conv = 1.0;
  double lr_mult_hrnn = 1.0;
  double lr_mult_head = 1.0;
  bool augment_flip = false;
  std::size_t threads = 1;

  /// Throws ConfigError.
  void validate() const;
  /// Multiplier for a parameter group name (conv, hrnn.*, head).
  double multiplier(const std::string& group) const;
};

/// Per-parameter velocity buffers, created lazily on the first step.
template <typename T>
struct SgdState {
  double momentum = 0.9;
  std::vector<Tensor<T>> velocity;
};

/// v <- momentum * v - lr * mult * (g + weight_decay * theta); theta <- theta + v.
/// `multipliers` holds one factor per parameter.
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, SgdState<T>& state, double lr,
              std::span<const double> multipliers, double weight_decay = 0.0);

/// Plateau schedule: the rate is divided by 10 once accuracy has failed to
/// improve on its best value for `patience` consecutive evaluations.
struct LrSchedule {
  double lr = 0.01;
  std::size_t patience = 3;
  double best = -1.0;
  std::size_t stalled = 0;

  /// Returns true when the rate was reduced. Requires accuracy in [0, 1].
  bool update(double accuracy);
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// Number of samples whose label is the top-1 and within the top-5 (or all
/// classes when fewer than five), ties toward the lower class index.
struct HitCounts {
  std::size_t top1 = 0;
  std::size_t top5 = 0;
};

template <typename T>
HitCounts count_hits(const Tensor<T>& probs, std::span<const std::uint32_t> labels);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t samples = 0;
};

/// Eval-mode pass over a dataset in batches. Throws DataError when empty.
EvalResult evaluate(Model<float>& model, const Dataset& data, std::size_t batch = 256);

struct Metrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double lr = 0.0;

  /// "epoch=3 split=val loss=0.123456 top1=0.9500 top5=1.0000 lr=0.01"
  std::string format() const;
};

using MetricsSink = std::function<void(const Metrics&)>;

/// Everything beyond the parameters and velocities that a resumed run needs.
struct TrainerState {
  LrSchedule schedule;
  std::size_t epoch = 0;   // completed epochs
  std::size_t cursor = 0;  // position in the current permutation
  std::uint64_t step = 0;
  double loss_sum = 0.0;   // running train loss (sum of per-sample losses)
  std::size_t hits1 = 0;
  std::size_t hits5 = 0;
  std::vector<std::uint32_t> permutation;
  Rng rng;

  /// Text form with exact (hex) floating point values.
  std::string serialize() const;
  static TrainerState deserialize(const std::string& text);
  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

class Trainer {
 public:
  Trainer(Model<float>& model, const Dataset& train, const Dataset* val, const TrainConfig& config);

  const TrainConfig& config() const { return config_; }
  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }
  SgdState<float>& optimizer() { return sgd_; }

  /// One optimisation step on the next batch of the current epoch. Returns the
  /// batch loss. Throws NumericError on a non-finite loss or gradient.
  double step();
  bool epoch_complete() const;
  /// Closes the epoch: emits train and val records, updates the schedule.
  std::vector<Metrics> finish_epoch();
  /// Trains until `config.epochs` epochs are complete.
  std::vector<Metrics> run(const MetricsSink& sink = {});

 private:
  void begin_epoch();

  Model<float>& model_;
  const Dataset& train_;
  const Dataset* val_;
  TrainConfig config_;
  SgdState<float> sgd_;
  TrainerState state_;
};

}  // namespace chrnn
