#include "rulkit/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rulkit/common.hpp"

namespace rulkit {

namespace {

constexpr std::uint64_t kNoiseSalt = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kValPairSalt = 0x94d049bb133111ebull;

int subset_index(const std::string& subset) {
  if (subset == "FD002") return 1;
  if (subset == "FD003") return 2;
  if (subset == "FD004") return 3;
  return 0;  // FD001 and everything else
}

void check_finite(double value, const char* what, int epoch, const char* trainer) {
  if (!std::isfinite(value)) {
    std::ostringstream oss;
    oss << trainer << ": " << what << " diverged (non-finite) at epoch " << epoch;
    throw Error(oss.str());
  }
}

// Minibatch index ranges over n shuffled items. A trailing remainder of one
// would break batch normalization, so the final two batches are rebalanced
// to sizes (batch-1, 2); the batch count stays ceil(n / batch).
std::vector<std::pair<int, int>> batch_ranges(int n, int batch) {
  std::vector<std::pair<int, int>> ranges;
  for (int start = 0; start < n; start += batch) ranges.emplace_back(start, std::min(n, start + batch));
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first == 1) {
    --ranges[ranges.size() - 2].second;
    --ranges.back().first;
  }
  return ranges;
}

std::vector<Frame> gather(const std::vector<Frame>& frames, const std::vector<int>& order,
                          std::pair<int, int> range) {
  std::vector<Frame> out;
  out.reserve(range.second - range.first);
  for (int i = range.first; i < range.second; ++i) out.push_back(frames[order[i]]);
  return out;
}

std::vector<Frame> windows_of_split(const ScenarioSplit& split, int w) {
  std::vector<Frame> frames = make_windows(split.labeled, w);
  std::vector<Frame> more = make_windows(split.unlabeled, w);
  frames.insert(frames.end(), more.begin(), more.end());
  RULKIT_CHECK(!frames.empty(), "trainer: the scenario split yields no frames at window " << w);
  return frames;
}

std::vector<Frame> windows_of_validation(const SeriesSet& validation, int w) {
  std::vector<Frame> frames = make_windows(validation, w);
  RULKIT_CHECK(!frames.empty(), "trainer: the validation set yields no frames at window " << w);
  return frames;
}

class HistoryWriter {
 public:
  explicit HistoryWriter(const std::filesystem::path& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot open history file '" + path.string() + "' for writing");
  }

  void record(std::vector<EpochRecord>& history, int epoch, double train_loss, double val) {
    EpochRecord rec{epoch, train_loss, val, iso_timestamp()};
    history.push_back(rec);
    if (out_.is_open()) out_ << epoch_to_json(rec).dump() << "\n" << std::flush;
  }

 private:
  std::ofstream out_;
};

// Sum of squared errors of the reconstruction of every frame, accumulated in
// eval mode over bounded chunks.
double reconstruction_mse(const ModelState& state, const std::vector<Frame>& frames,
                          int batch_size) {
  NoGradGuard guard;
  double sse = 0.0;
  long long count = 0;
  for (auto [lo, hi] : batch_ranges(static_cast<int>(frames.size()), batch_size)) {
    std::vector<Frame> chunk(frames.begin() + lo, frames.begin() + hi);
    Tensor x = frames_to_tensor(chunk);
    Tensor recon = decoder_forward(feature_extractor_forward(x, state, Mode::eval), state, Mode::eval);
    sse += (recon.value() - x.value()).squaredNorm();
    count += x.size();
  }
  return sse / static_cast<double>(count);
}

// Mean squared error between siamese distances and pair targets, eval mode.
double pair_mse(const ModelState& state, const PairBatch& pairs, int batch_size) {
  NoGradGuard guard;
  double sse = 0.0;
  const int n = pairs.size();
  const int c = pairs.anchors.dim(1);
  const int w = pairs.anchors.dim(2);
  for (auto [lo, hi] : batch_ranges(n, batch_size)) {
    const int m = hi - lo;
    Tensor a = Tensor::from({m, c, w}, pairs.anchors.value().segment(
                                           static_cast<Eigen::Index>(lo) * c * w,
                                           static_cast<Eigen::Index>(m) * c * w));
    Tensor b = Tensor::from({m, c, w}, pairs.partners.value().segment(
                                           static_cast<Eigen::Index>(lo) * c * w,
                                           static_cast<Eigen::Index>(m) * c * w));
    Tensor d = siamese_distance(feature_extractor_forward(a, state, Mode::eval),
                                feature_extractor_forward(b, state, Mode::eval));
    sse += (d.value() - pairs.targets.segment(lo, m)).squaredNorm();
  }
  return sse / static_cast<double>(n);
}

void drop_auxiliaries(ModelState& state) {
  for (auto it = state.params.begin(); it != state.params.end();) {
    if (it->first.rfind("dec.", 0) == 0 || it->first.rfind("rbm.", 0) == 0)
      it = state.params.erase(it);
    else
      ++it;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration tables
// ---------------------------------------------------------------------------

const char* method_name(TrainMethod method) {
  switch (method) {
    case TrainMethod::supervised: return "supervised";
    case TrainMethod::self_supervised: return "self";
    case TrainMethod::autoencoder: return "ae";
    case TrainMethod::rbm: return "rbm";
  }
  throw ValueError("method_name: unknown method");
}

TrainMethod method_from_name(const std::string& name) {
  if (name == "supervised" || name == "baseline") return TrainMethod::supervised;
  if (name == "self" || name == "self-supervised") return TrainMethod::self_supervised;
  if (name == "ae" || name == "autoencoder") return TrainMethod::autoencoder;
  if (name == "rbm") return TrainMethod::rbm;
  throw ValueError("unknown training method '" + name +
                   "' (expected supervised, self, ae, or rbm)");
}

TrainConfig default_train_config(TrainMethod method, const std::string& subset) {
  const int i = subset_index(subset);
  TrainConfig cfg;
  switch (method) {
    case TrainMethod::supervised: {
      constexpr double lr[] = {0.0056, 0.0903, 0.095, 0.06635};
      constexpr double drop[] = {0.4, 0.3, 0.2, 0.0};
      constexpr int batch[] = {128, 512, 64, 64};
      cfg.learning_rate = lr[i];
      cfg.dropout = drop[i];
      cfg.batch_size = batch[i];
      cfg.epochs = 200;
      break;
    }
    case TrainMethod::self_supervised: {
      constexpr double lr[] = {0.00015, 0.01155, 0.00615, 0.07455};
      constexpr double drop[] = {0.2, 0.4, 0.1, 0.1};
      constexpr int dist[] = {10, 15, 15, 10};
      cfg.learning_rate = lr[i];
      cfg.dropout = drop[i];
      cfg.batch_size = 64;
      cfg.min_distance = dist[i];
      cfg.epochs = 100;
      break;
    }
    case TrainMethod::autoencoder: {
      constexpr double lr[] = {0.0001, 0.0248, 0.015, 0.0006};
      constexpr double drop[] = {0.1, 0.4, 0.0, 0.0};
      constexpr int batch[] = {64, 256, 64, 64};
      constexpr int dist[] = {1, 15, 1, 10};
      cfg.learning_rate = lr[i];
      cfg.dropout = drop[i];
      cfg.batch_size = batch[i];
      cfg.min_distance = dist[i];
      cfg.epochs = 100;
      break;
    }
    case TrainMethod::rbm: {
      cfg.learning_rate = 1e-4;
      cfg.dropout = 0.0;
      cfg.batch_size = 64;
      cfg.epochs = 5;
      cfg.patience = 0;  // the budget is exact, not a minimum
      break;
    }
  }
  return cfg;
}

nlohmann::json epoch_to_json(const EpochRecord& rec) {
  return {{"epoch", rec.epoch},
          {"train_loss", rec.train_loss},
          {"val_metric", rec.val_metric},
          {"timestamp", rec.timestamp}};
}

// ---------------------------------------------------------------------------
// early stopping
// ---------------------------------------------------------------------------

EarlyStopMonitor::EarlyStopMonitor(int min_epochs, int patience)
    : min_epochs_(min_epochs), patience_(patience) {
  RULKIT_CHECK(min_epochs >= 1, "early stopping: epoch budget must be >= 1, got " << min_epochs);
  RULKIT_CHECK(patience >= 0, "early stopping: patience must be >= 0, got " << patience);
}

bool EarlyStopMonitor::observe(int epoch, double value, const ModelState& state) {
  if (value < best_) {
    best_ = value;
    best_epoch_ = epoch;
    since_best_ = 0;
    snapshot_.clear();
    for (const auto& [name, tensor] : state.params) snapshot_.emplace(name, tensor.value());
  } else {
    ++since_best_;
  }
  if (epoch < min_epochs_) return true;
  return since_best_ < patience_;
}

void EarlyStopMonitor::restore(ModelState& state) const {
  RULKIT_CHECK(!snapshot_.empty(), "early stopping: no epoch was ever observed");
  for (auto& [name, tensor] : state.params) {
    auto it = snapshot_.find(name);
    RULKIT_CHECK(it != snapshot_.end(), "early stopping: snapshot lacks parameter '" << name << "'");
    tensor.value() = it->second;
  }
}

// ---------------------------------------------------------------------------
// siamese pre-training
// ---------------------------------------------------------------------------

TrainResult pretrain_self_supervised(const ScenarioSplit& split, const SeriesSet& validation,
                                     FeatureExtractorConfig model, const TrainConfig& config) {
  model.dropout = config.dropout;
  std::vector<Frame> frames = windows_of_split(split, model.window);
  std::vector<Frame> val_frames = windows_of_validation(validation, model.window);

  PairSampler sampler(frames, config.min_distance, config.rul_max);
  PairBatch frozen = validation_pairs(val_frames, config.validation_pair_count,
                                      config.min_distance, config.rul_max,
                                      config.seed ^ kValPairSalt);

  TrainResult result;
  result.state = init_model(model, config.seed);
  result.state.normalize_before_head = true;
  Adam opt(trainable_params(result.state, "f."), {config.learning_rate});

  std::mt19937_64 data_rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ kNoiseSalt);
  const int batches = static_cast<int>((frames.size() + config.batch_size - 1) / config.batch_size);
  EarlyStopMonitor monitor(config.epochs, config.patience);
  HistoryWriter writer(config.history_path);

  for (int epoch = 1;; ++epoch) {
    double loss_sum = 0.0;
    for (int b = 0; b < batches; ++b) {
      PairBatch pb = sampler.sample(config.batch_size, data_rng);
      Tensor ea = feature_extractor_forward(pb.anchors, result.state, Mode::train, &noise_rng);
      Tensor eb = feature_extractor_forward(pb.partners, result.state, Mode::train, &noise_rng);
      Tensor dist = siamese_distance(ea, eb);
      Tensor loss = mse_loss(dist, Tensor::from({pb.size()}, pb.targets));
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
    }
    const double train_loss = loss_sum / batches;
    check_finite(train_loss, "train loss", epoch, "pretrain_self_supervised");
    const double val = pair_mse(result.state, frozen, config.batch_size);
    check_finite(val, "validation pair error", epoch, "pretrain_self_supervised");
    writer.record(result.history, epoch, train_loss, val);
    if (!monitor.observe(epoch, val, result.state)) break;
  }

  monitor.restore(result.state);
  result.best_metric = monitor.best_value();
  result.best_epoch = monitor.best_epoch();
  drop_auxiliaries(result.state);
  return result;
}

// ---------------------------------------------------------------------------
// autoencoder pre-training
// ---------------------------------------------------------------------------

TrainResult pretrain_autoencoder(const ScenarioSplit& split, const SeriesSet& validation,
                                 FeatureExtractorConfig model, const TrainConfig& config) {
  model.dropout = config.dropout;
  std::vector<Frame> frames = windows_of_split(split, model.window);
  std::vector<Frame> val_frames = windows_of_validation(validation, model.window);
  RULKIT_CHECK(frames.size() >= 2, "pretrain_autoencoder: need at least two frames, got "
                                       << frames.size());

  TrainResult result;
  result.state = init_model(model, config.seed);
  ParamMap learned = trainable_params(result.state, "f.");
  for (auto& [name, t] : trainable_params(result.state, "dec.")) learned.emplace(name, t);
  Adam opt(learned, {config.learning_rate});

  std::mt19937_64 data_rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ kNoiseSalt);
  std::vector<int> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  EarlyStopMonitor monitor(config.epochs, config.patience);
  HistoryWriter writer(config.history_path);

  for (int epoch = 1;; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double loss_sum = 0.0;
    const auto ranges = batch_ranges(static_cast<int>(frames.size()), config.batch_size);
    for (const auto& range : ranges) {
      Tensor x = frames_to_tensor(gather(frames, order, range));
      Tensor e = feature_extractor_forward(x, result.state, Mode::train, &noise_rng);
      Tensor recon = decoder_forward(e, result.state, Mode::train);
      Tensor loss = mse_loss(recon, x.detach());
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
    }
    const double train_loss = loss_sum / static_cast<double>(ranges.size());
    check_finite(train_loss, "train loss", epoch, "pretrain_autoencoder");
    const double val = reconstruction_mse(result.state, val_frames, config.batch_size);
    check_finite(val, "validation reconstruction error", epoch, "pretrain_autoencoder");
    writer.record(result.history, epoch, train_loss, val);
    if (!monitor.observe(epoch, val, result.state)) break;
  }

  monitor.restore(result.state);
  result.best_metric = monitor.best_value();
  result.best_epoch = monitor.best_epoch();
  drop_auxiliaries(result.state);
  return result;
}

// ---------------------------------------------------------------------------
// RBM pre-training
// ---------------------------------------------------------------------------

TrainResult pretrain_rbm(const ScenarioSplit& split, const SeriesSet& validation,
                         FeatureExtractorConfig model, const TrainConfig& config) {
  model.dropout = config.dropout;
  Mat patches = rbm_patches(windows_of_split(split, model.window));
  Mat val_patches = rbm_patches(windows_of_validation(validation, model.window));

  TrainResult result;
  result.state = init_model(model, config.seed);
  Adam opt(trainable_params(result.state, "rbm."), {config.learning_rate});

  auto recon_error = [&](const Mat& v) {
    RbmStep step = rbm_energy_step(v, result.state, nullptr);
    return (step.visible - v).squaredNorm() / static_cast<double>(v.size());
  };

  std::mt19937_64 data_rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ kNoiseSalt);
  std::vector<int> order(patches.rows());
  std::iota(order.begin(), order.end(), 0);
  EarlyStopMonitor monitor(config.epochs, config.patience);
  HistoryWriter writer(config.history_path);

  for (int epoch = 1;; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double loss_sum = 0.0;
    const auto ranges = batch_ranges(static_cast<int>(patches.rows()), config.batch_size);
    for (const auto& range : ranges) {
      Mat batch(range.second - range.first, patches.cols());
      for (int i = range.first; i < range.second; ++i) batch.row(i - range.first) = patches.row(order[i]);
      loss_sum += recon_error(batch);
      opt.zero_grad();
      rbm_cd1_gradients(batch, result.state, noise_rng);
      opt.step();
    }
    const double train_loss = loss_sum / static_cast<double>(ranges.size());
    check_finite(train_loss, "train reconstruction error", epoch, "pretrain_rbm");
    const double val = recon_error(val_patches);
    check_finite(val, "validation reconstruction error", epoch, "pretrain_rbm");
    writer.record(result.history, epoch, train_loss, val);
    if (!monitor.observe(epoch, val, result.state)) break;
  }

  monitor.restore(result.state);
  result.best_metric = monitor.best_value();
  result.best_epoch = monitor.best_epoch();

  // The learned filters become the first conv block; everything else keeps
  // its seeded initialization.
  result.state.params.at("f.conv1.weight").value() = param(result.state, "rbm.weight").value();
  result.state.params.at("f.conv1.bias").value() = param(result.state, "rbm.hbias").value();
  drop_auxiliaries(result.state);
  return result;
}

// ---------------------------------------------------------------------------
// supervised fine-tuning
// ---------------------------------------------------------------------------

double evaluate_rmse(const ModelState& state, const std::vector<Frame>& frames, int batch_size) {
  RULKIT_CHECK(!frames.empty(), "evaluate_rmse: no frames to evaluate");
  NoGradGuard guard;
  double sse = 0.0;
  for (auto [lo, hi] : batch_ranges(static_cast<int>(frames.size()), batch_size)) {
    std::vector<Frame> chunk(frames.begin() + lo, frames.begin() + hi);
    Tensor pred = predict_rul(frames_to_tensor(chunk), state, Mode::eval);
    sse += (pred.value() - frame_labels(chunk).value()).squaredNorm();
  }
  return std::sqrt(sse / static_cast<double>(frames.size()));
}

std::vector<Frame> last_windows(const SeriesSet& set, int w, double rul_max) {
  std::vector<Frame> frames;
  for (const auto& s : set.series) {
    std::vector<Frame> all = make_windows(s, w);
    if (all.empty()) continue;
    Frame f = all.back();
    if (set.role == SetRole::test) {
      auto it = set.test_rul.find(s.id);
      RULKIT_CHECK(it != set.test_rul.end(),
                   "last_windows: test engine " << s.id << " has no true RUL attached");
      f.label = std::min(rul_max, it->second);
      f.has_label = true;
    }
    frames.push_back(f);
  }
  RULKIT_CHECK(!frames.empty(), "last_windows: no engine is at least " << w << " steps long");
  return frames;
}

TrainResult finetune_supervised(ModelState init, const SeriesSet& labeled,
                                const SeriesSet& validation, const TrainConfig& config) {
  RULKIT_CHECK(!labeled.series.empty(), "finetune_supervised: the labeled set is empty");
  init.config.dropout = config.dropout;
  std::vector<Frame> frames = make_windows(labeled, init.config.window);
  RULKIT_CHECK(!frames.empty(), "finetune_supervised: the labeled set yields no frames at window "
                                    << init.config.window);
  std::vector<Frame> val_frames = windows_of_validation(validation, init.config.window);
  for (const Frame& f : frames)
    RULKIT_CHECK(f.has_label, "finetune_supervised: engine " << f.engine_id
                                                             << " has frames without labels");
  for (const Frame& f : val_frames)
    RULKIT_CHECK(f.has_label, "finetune_supervised: validation engine "
                                  << f.engine_id << " has frames without labels");

  TrainResult result;
  result.state = std::move(init);
  ParamMap learned = trainable_params(result.state, "f.");
  for (auto& [name, t] : trainable_params(result.state, "g.")) learned.emplace(name, t);
  Adam opt(learned, {config.learning_rate});

  std::mt19937_64 data_rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ kNoiseSalt);
  std::vector<int> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  EarlyStopMonitor monitor(config.epochs, config.patience);
  HistoryWriter writer(config.history_path);

  for (int epoch = 1;; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double loss_sum = 0.0;
    const auto ranges = batch_ranges(static_cast<int>(frames.size()), config.batch_size);
    for (const auto& range : ranges) {
      std::vector<Frame> chunk = gather(frames, order, range);
      Tensor pred = predict_rul(frames_to_tensor(chunk), result.state, Mode::train, &noise_rng);
      Tensor loss = rmse_loss(pred, frame_labels(chunk));
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
    }
    const double train_loss = loss_sum / static_cast<double>(ranges.size());
    check_finite(train_loss, "train loss", epoch, "finetune_supervised");
    const double val = evaluate_rmse(result.state, val_frames, config.batch_size);
    check_finite(val, "validation error", epoch, "finetune_supervised");
    writer.record(result.history, epoch, train_loss, val);
    if (!monitor.observe(epoch, val, result.state)) break;
  }

  monitor.restore(result.state);
  result.best_metric = monitor.best_value();
  result.best_epoch = monitor.best_epoch();
  drop_auxiliaries(result.state);
  return result;
}

}  // namespace rulkit
