#include "nowcast/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "nowcast/error.hpp"
#include "nowcast/nn/adam.hpp"

namespace nowcast {

void TrainSchedule::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be positive");
  if (!(decay > 0.0)) throw ValidationError("decay factor must be positive");
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || milestones[i] >= epochs)
      throw ValidationError("milestone " + std::to_string(milestones[i]) + " outside [0, epochs)");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ValidationError("milestones must be strictly increasing");
  }
}

double TrainSchedule::lr_at(int epoch) const { return nn::step_decay_lr(lr, milestones, decay, epoch); }

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_train_schedule(const TrainSchedule& s) {
  std::ostringstream os;
  os << "epochs=" << s.epochs << '\n' << "lr=" << fmt_double(s.lr) << '\n' << "milestones=";
  for (std::size_t i = 0; i < s.milestones.size(); ++i) os << (i ? "," : "") << s.milestones[i];
  os << '\n'
     << "decay=" << fmt_double(s.decay) << '\n'
     << "batch_size=" << s.batch_size << '\n'
     << "seed=" << s.seed << '\n'
     << "loss=" << nn::loss_name(s.loss) << '\n';
  return os.str();
}

TrainSchedule parse_train_schedule(std::string_view text) {
  TrainSchedule s;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("schedule line without '=': " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "epochs") s.epochs = std::stoi(val);
      else if (key == "lr") s.lr = std::stod(val);
      else if (key == "decay") s.decay = std::stod(val);
      else if (key == "batch_size") s.batch_size = std::stoull(val);
      else if (key == "seed") s.seed = std::stoull(val);
      else if (key == "loss") s.loss = nn::parse_loss(val);
      else if (key == "milestones") {
        s.milestones.clear();
        std::istringstream items(val);
        std::string item;
        while (std::getline(items, item, ','))
          if (!item.empty()) s.milestones.push_back(std::stoi(item));
      } else throw ValidationError("unknown schedule key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ValidationError("bad value for schedule key '" + key + "': " + val);
    }
  }
  s.validate();
  return s;
}

const RainGrid& FrameStore::radar(const std::filesystem::path& path) {
  auto it = radar_.find(path);
  if (it == radar_.end()) it = radar_.emplace(path, read_grid(path)).first;
  return it->second;
}

const SatScene& FrameStore::satellite(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  auto it = sat_.find(path);
  if (it == sat_.end()) {
    SatScene raw = read_scene(path);
    if (raw.rows() != rows || raw.cols() != cols) raw = resample_scene(raw, rows, cols);
    it = sat_.emplace(path, std::move(raw)).first;
  }
  return it->second;
}

LoadedSample FrameStore::load(const SequenceSample& s) {
  LoadedSample out;
  out.sample = s;
  out.target = radar(s.target.radar);
  for (const auto& rec : s.inputs) {
    const RainGrid& g = radar(rec.radar);
    if (g.rows() != out.target.rows() || g.cols() != out.target.cols())
      throw ShapeError("radar frame " + rec.radar.string() + " does not match the target grid");
    out.radar.push_back(g);
    if (s.multimodal) {
      if (!rec.satellite) throw ValidationError("multimodal sample lacks satellite data at " + format_iso8601(rec.time));
      out.satellite.push_back(satellite(*rec.satellite, g.rows(), g.cols()));
    }
  }
  return out;
}

TrainingExample make_example(const LoadedSample& s, const BandStats* stats) {
  const std::size_t T = s.radar.size();
  if (T == 0) throw ValidationError("sample has no input frames");
  const bool multi = !s.satellite.empty();
  if (multi && !stats) throw ValidationError("multimodal sample needs band statistics");
  const std::size_t R = s.target.rows(), C = s.target.cols();
  const std::size_t ch = multi ? 1 + kSatBands : 1;
  TrainingExample ex;
  ex.target_time = s.sample.target_time;
  ex.input = nn::Array5<float>({1, T, R, C, ch});
  for (std::size_t t = 0; t < T; ++t) {
    const Field radar = normalize_radar(s.radar[t]);
    for (std::size_t i = 0; i < R * C; ++i) ex.input.data()[(t * R * C + i) * ch] = radar.values[i];
    if (!multi) continue;
    const SatScene sat = normalize_satellite(s.satellite[t], *stats);
    if (sat.rows() != R || sat.cols() != C) throw ShapeError("satellite scene is not on the radar grid");
    for (std::size_t b = 0; b < kSatBands; ++b)
      for (std::size_t i = 0; i < R * C; ++i) ex.input.data()[(t * R * C + i) * ch + 1 + b] = sat.band(b).values[i];
  }
  const Field target = normalize_radar(s.target);
  ex.target = nn::Array5<float>({1, 1, R, C, 1}, target.values);
  return ex;
}

namespace {

nn::Array5<float> stack(std::span<const TrainingExample* const> items, bool inputs) {
  if (items.empty()) throw ValidationError("cannot stack an empty batch");
  const auto& first = inputs ? items[0]->input : items[0]->target;
  nn::Dims5 d = first.dims();
  d.batch = items.size();
  std::vector<float> values;
  values.reserve(d.size());
  for (const auto* ex : items) {
    const auto& a = inputs ? ex->input : ex->target;
    if (a.dims().voxels() != first.dims().voxels() || a.dims().channels != first.dims().channels ||
        a.dims().batch != 1)
      throw ShapeError("batch members have different shapes");
    values.insert(values.end(), a.values().begin(), a.values().end());
  }
  return nn::Array5<float>(d, std::move(values));
}

}  // namespace

nn::Array5<float> stack_inputs(std::span<const TrainingExample* const> items) { return stack(items, true); }
nn::Array5<float> stack_targets(std::span<const TrainingExample* const> items) { return stack(items, false); }

double evaluate_loss(const UNet3D<float>& model, std::span<const TrainingExample> set, nn::LossKind loss,
                     std::size_t batch_size) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); i += batch_size) {
    std::vector<const TrainingExample*> batch;
    for (std::size_t j = i; j < std::min(set.size(), i + batch_size); ++j) batch.push_back(&set[j]);
    const auto out = model.forward(stack_inputs(batch));
    total += nn::compute_loss(loss, out, stack_targets(batch)).value * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(set.size());
}

TrainResult train(UNet3D<float>& model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch) {
  schedule.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");

  nn::AdamState<float> adam(nn::AdamConfig{schedule.lr}, model.block_sizes());
  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<nn::NamedTensor> best;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    // Fisher-Yates with our own draws so the order is the same on every
    // standard library.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    const double lr = schedule.lr_at(epoch);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += schedule.batch_size, ++batch_index) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + schedule.batch_size); ++j)
        batch.push_back(&train_set[order[j]]);
      UNet3D<float>::Cache cache;
      const auto out = model.forward(stack_inputs(batch), &cache);
      const auto loss = nn::compute_loss(schedule.loss, out, stack_targets(batch));
      if (!std::isfinite(loss.value)) throw TrainingError("loss is not finite", epoch, batch_index);
      auto grads = model.backward(loss.grad, cache);
      auto blocks = model.param_blocks(grads);
      try {
        nn::adam_step<float>(blocks, adam, lr);
      } catch (const ValidationError& e) {
        throw TrainingError(e.what(), epoch, batch_index);
      }
      epoch_loss += loss.value * static_cast<double>(batch.size());
    }

    EpochRecord rec{epoch, epoch_loss / static_cast<double>(train_set.size()),
                    evaluate_loss(model, val_set, schedule.loss, schedule.batch_size), lr};
    if (!val_set.empty() && rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = model.to_tensors();
    }
    result.history.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  if (!best.empty()) model.load_tensors(best);
  if (val_set.empty()) {
    result.best_epoch = result.history.back().epoch;
    result.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

std::string format_history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : history)
    os << r.epoch << ',' << fmt_double(r.train_loss) << ',' << (std::isnan(r.val_loss) ? "" : fmt_double(r.val_loss))
       << ',' << fmt_double(r.lr) << '\n';
  return os.str();
}

RainGrid predict(const UNet3D<float>& model, const TrainingExample& example) {
  const auto& cfg = model.config();
  const auto d = example.input.dims();
  if (d.batch != 1 || d.time != cfg.time_steps || d.rows != cfg.rows || d.cols != cfg.cols ||
      d.channels != cfg.input_channels)
    throw ShapeError("input " + nn::to_string(d) + " does not match the model configuration");
  const auto out = model.forward(example.input);
  std::vector<float> mm(cfg.rows * cfg.cols);
  for (std::size_t i = 0; i < mm.size(); ++i) {
    const double n = std::clamp(static_cast<double>(out.data()[i]), 0.0, 1.0);
    mm[i] = static_cast<float>(std::clamp(denormalize_rate(n), 0.0, kMaxRate));
  }
  return RainGrid(cfg.rows, cfg.cols, std::move(mm), example.target_time);
}

RainGrid persistence_forecast(const LoadedSample& sample) {
  if (sample.radar.empty()) throw ValidationError("persistence needs at least one input frame");
  return sample.radar.back().with_time(sample.sample.target_time);
}

}  // namespace nowcast
