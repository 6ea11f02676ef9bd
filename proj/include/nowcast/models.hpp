#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nowcast/grid.hpp"
#include "nowcast/nn/loss.hpp"
#include "nowcast/pipeline.hpp"
#include "nowcast/unet.hpp"

namespace nowcast {

struct TrainSchedule {
  int epochs = 50;
  double lr = 1e-4;
  std::vector<int> milestones{10, 30, 40};
  double decay = 0.1;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  nn::LossKind loss = nn::LossKind::LogCosh;

  /// Throws ValidationError unless milestones are strictly increasing and
  /// below `epochs`, and the scalars are positive.
  void validate() const;
  double lr_at(int epoch) const;

  friend bool operator==(const TrainSchedule&, const TrainSchedule&) = default;
};

std::string format_train_schedule(const TrainSchedule& s);
/// key=value lines (epochs, lr, milestones as comma list, decay, batch_size,
/// seed, loss). Validates the result.
TrainSchedule parse_train_schedule(std::string_view text);

/// A sample ready for the network: normalized input stack and target.
struct TrainingExample {
  Timestamp target_time{};
  nn::Array5<float> input;   // 1 x 6 x H x W x C
  nn::Array5<float> target;  // 1 x 1 x H x W x 1, normalized
};

/// Raw frames of one sequence sample, as read from disk.
struct LoadedSample {
  SequenceSample sample;
  std::vector<RainGrid> radar;     // 6 input frames, oldest first
  std::vector<SatScene> satellite;  // empty unless multimodal
  RainGrid target;
};

/// Reads and caches RFG1 frames; satellite scenes are cached after
/// resampling to the radar grid.
class FrameStore {
 public:
  const RainGrid& radar(const std::filesystem::path& path);
  const SatScene& satellite(const std::filesystem::path& path, std::size_t rows, std::size_t cols);
  LoadedSample load(const SequenceSample& s);

 private:
  std::map<std::filesystem::path, RainGrid> radar_;
  std::map<std::filesystem::path, SatScene> sat_;
};

/// Channel 0 is normalized radar; channels 1..11 are the normalized
/// satellite bands when the sample carries them.
TrainingExample make_example(const LoadedSample& s, const BandStats* stats);

/// Stacks examples along the batch axis.
nn::Array5<float> stack_inputs(std::span<const TrainingExample* const> items);
nn::Array5<float> stack_targets(std::span<const TrainingExample* const> items);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when there is no validation set
  double lr = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Seeded shuffling each epoch, loss in normalized space, Adam with step
/// decay. If a validation set is given the parameters of the best
/// validation epoch are restored at the end. Throws TrainingError on a
/// non-finite loss.
TrainResult train(UNet3D<float>& model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch = {});

/// Mean loss over a set, evaluated in batches.
double evaluate_loss(const UNet3D<float>& model, std::span<const TrainingExample> set, nn::LossKind loss,
                     std::size_t batch_size);

std::string format_history_csv(std::span<const EpochRecord> history);

/// Network output clamped to [0, 1], denormalized to mm/h, clamped to [0, 200].
RainGrid predict(const UNet3D<float>& model, const TrainingExample& example);

/// The most recent input radar frame, unchanged.
RainGrid persistence_forecast(const LoadedSample& sample);

}  // namespace nowcast
