#pragma once

#include <filesystem>
#include <vector>

#include "rulkit/models.hpp"
#include "rulkit/scenarios.hpp"

namespace rulkit {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

// A run trains `epochs` epochs unconditionally, then keeps going until
// `patience` consecutive epochs fail to improve the validation metric.
// patience 0 stops exactly at `epochs`.
struct TrainConfig {
  double learning_rate = 1e-3;
  double dropout = 0.0;  // time-step dropout in the extractor
  int batch_size = 64;
  int min_distance = 1;  // pair sampling horizon (siamese pre-training)
  int epochs = 100;
  int patience = 20;
  std::uint64_t seed = 0;
  int validation_pair_count = 512;  // frozen pairs monitored by siamese runs
  double rul_max = kRulMax;
  std::filesystem::path history_path;  // when set, epochs stream there as JSON lines
};

enum class TrainMethod { supervised, self_supervised, autoencoder, rbm };

const char* method_name(TrainMethod method);
TrainMethod method_from_name(const std::string& name);

// Tuned per-subset defaults (FD001..FD004); other subset names borrow the
// FD001 column.
TrainConfig default_train_config(TrainMethod method, const std::string& subset);

// ---------------------------------------------------------------------------
// results
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_metric = 0.0;
  std::string timestamp;
};

nlohmann::json epoch_to_json(const EpochRecord& rec);

struct TrainResult {
  ModelState state;  // parameters restored to the best validation epoch
  std::vector<EpochRecord> history;
  double best_metric = 0.0;
  int best_epoch = 0;
};

// Tracks the minimum validation value and snapshots parameters at each
// improvement so the winning epoch can be restored exactly.
class EarlyStopMonitor {
 public:
  EarlyStopMonitor(int min_epochs, int patience);

  // Record epoch `epoch`'s metric; returns true if training should continue.
  bool observe(int epoch, double value, const ModelState& state);
  void restore(ModelState& state) const;

  double best_value() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int min_epochs_;
  int patience_;
  int since_best_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  std::map<std::string, Vec> snapshot_;
};

// ---------------------------------------------------------------------------
// training procedures
// ---------------------------------------------------------------------------
// All four consume windowed frames derived from the given series at
// model.window. Randomness is split into two streams derived from
// config.seed: one orders data (shuffles, pair draws), one drives noise
// (dropout masks, RBM sampling), so data order is reproducible in isolation.
// A non-finite train loss or validation metric aborts with an error.

// Siamese training of the extractor on relative-RUL pair targets, monitored
// on a frozen set of validation pairs. The returned extractor expects
// normalized embeddings at the head.
TrainResult pretrain_self_supervised(const ScenarioSplit& split, const SeriesSet& validation,
                                     FeatureExtractorConfig model, const TrainConfig& config);

// Reconstruction training of extractor + decoder; monitors validation
// reconstruction error. The decoder is dropped from the returned state.
TrainResult pretrain_autoencoder(const ScenarioSplit& split, const SeriesSet& validation,
                                 FeatureExtractorConfig model, const TrainConfig& config);

// CD-1 training of the patch-level RBM; the learned filters land in the
// first conv block and every other parameter keeps its seeded init.
TrainResult pretrain_rbm(const ScenarioSplit& split, const SeriesSet& validation,
                         FeatureExtractorConfig model, const TrainConfig& config);

// Supervised training of f and g on labeled frames with an RMSE objective,
// early-stopped on validation RMSE. `init` comes from init_model (baseline)
// or transfer_for_finetune (pre-trained extractor).
TrainResult finetune_supervised(ModelState init, const SeriesSet& labeled,
                                const SeriesSet& validation, const TrainConfig& config);

// Validation RMSE of a trained predictor over all frames of `series` at the
// model's window, in eval mode (also the fine-tune monitoring quantity).
double evaluate_rmse(const ModelState& state, const std::vector<Frame>& frames,
                     int batch_size = 256);

// Test-set evaluation uses only each engine's final window; true RUL values
// from the set (clamped to rul_max) become the frame labels.
std::vector<Frame> last_windows(const SeriesSet& set, int w, double rul_max = kRulMax);

}  // namespace rulkit
