#pragma once

#include <functional>
#include <iosfwd>
#include <map>

#include "rulkit/trainers.hpp"

namespace rulkit {

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

// Root mean squared RUL error, in cycles.
double rmse_metric(const Vec& predictions, const Vec& truths);

// Asymmetric scoring sum: for each delta = predicted - true, the penalty is
// exp(-delta/13) - 1 when the estimate is low (delta < 0) and exp(delta/10) - 1
// when it is high. Overestimates cost more per cycle.
double rul_score(const Vec& predictions, const Vec& truths);

struct MetricReport {
  double rmse = 0.0;
  double score = 0.0;
  Vec deltas;  // predicted - true, one per scored engine
  int count = 0;
};

// One prediction per test engine (its final window) against the true RUL.
MetricReport score_model(const ModelState& state, const std::vector<Frame>& test_frames,
                         int batch_size = 256);

// ---------------------------------------------------------------------------
// experiment cells
// ---------------------------------------------------------------------------

// Cell identity within the replicated grid. Method "none" is the supervised
// baseline; it ignores unlabeled data, so its grade is fixed at 0.
struct CellSpec {
  std::string subset;
  std::string method;  // none | self | ae | rbm
  int percent = 100;
  int grade = 0;
  int rep = 0;
};

std::string cell_key(const CellSpec& spec);  // stable filename stem

// The scenario seed deliberately excludes grade and method: one (subset,
// percent, rep) always selects the same labeled engines.
std::uint64_t scenario_seed(const CellSpec& spec);
std::uint64_t training_seed(const CellSpec& spec);

// Desk-scale knobs for smoke tests; negative values keep method defaults.
struct BenchOverrides {
  int pretrain_epochs = -1;
  int finetune_epochs = -1;
  int patience = -1;
  int filters = -1;
  int window = -1;
  int validation_pair_count = -1;
};

struct CellResult {
  CellSpec spec;
  std::uint64_t split_seed = 0;
  std::uint64_t train_seed = 0;
  bool ok = false;
  std::string error;
  double rmse = 0.0;
  double score = 0.0;
  double best_val = 0.0;  // fine-tune validation RMSE at the kept epoch
  int best_epoch = 0;
  int n_test = 0;
};

nlohmann::json cell_to_json(const CellResult& result);
CellResult cell_from_json(const nlohmann::json& j);

// Train and score one cell; trainer failures land in the result, they do not
// propagate.
CellResult run_cell(const DatasetArchive& data, const CellSpec& spec,
                    const BenchOverrides& overrides = {});

// The replicated default grid: percents {2,10,20,40,100} x grades
// {40,60,70,80,90} for each pre-training method, plus a per-percent baseline.
std::vector<CellSpec> default_grid(const std::vector<std::string>& subsets, int reps = 10);

// ---------------------------------------------------------------------------
// resumable grid runner
// ---------------------------------------------------------------------------

struct GridProgress {
  int total = 0;
  int computed = 0;
  int resumed = 0;  // cells whose finished records were reused
  int failed = 0;   // cells recorded with an error
};

// One JSON file per cell under out_dir; existing parseable records are kept
// as-is, so interrupted runs pick up where they stopped. `workers` bounds the
// number of cells in flight.
GridProgress run_grid(const std::map<std::string, DatasetArchive>& archives,
                      const std::vector<CellSpec>& cells, const std::filesystem::path& out_dir,
                      int workers = 1, const BenchOverrides& overrides = {});

// ---------------------------------------------------------------------------
// aggregation and reporting
// ---------------------------------------------------------------------------

struct AggregateRow {
  std::string subset;
  std::string method;
  int percent = 0;
  int grade = 0;
  int n = 0;  // replications that finished
  double rmse_mean = 0.0, rmse_std = 0.0;
  double score_mean = 0.0, score_std = 0.0;
  bool rmse_best = false;   // best mean among the scenario's methods
  bool score_best = false;
};

std::vector<CellResult> load_cells(const std::filesystem::path& dir);

// Mean and sample standard deviation (n - 1; a single replication reports 0)
// per (subset, method, percent, grade), ordered by subset, grade, percent,
// method. Best-mean flags are computed within each (subset, percent, grade).
std::vector<AggregateRow> aggregate(const std::vector<CellResult>& cells);

void write_report_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
void write_report_markdown(std::ostream& out, const std::vector<AggregateRow>& rows);

// ---------------------------------------------------------------------------
// random hyperparameter search
// ---------------------------------------------------------------------------

// Log-uniform draw quantized to multiples of `quantum`, clamped to [lo, hi].
struct QLogUniform {
  double lo, hi, quantum;
  double sample(std::mt19937_64& rng) const;
};

// Uniform draw quantized to multiples of `quantum`, clamped to [lo, hi].
struct QUniform {
  double lo, hi, quantum;
  double sample(std::mt19937_64& rng) const;
};

struct SearchSpace {
  QLogUniform learning_rate{1e-4, 1e-1, 5e-5};
  QUniform dropout{0.0, 0.5, 0.1};
  std::vector<int> batch_sizes{64, 128, 256, 512};
  std::vector<int> min_distances{1, 10, 15, 30};
};

struct SearchTrial {
  double learning_rate = 0.0;
  double dropout = 0.0;
  int batch_size = 0;
  int min_distance = 0;
  double value = 0.0;  // objective; lower is better
};

struct SearchResult {
  SearchTrial best;
  std::vector<SearchTrial> trials;
};

SearchResult random_search(const SearchSpace& space, int trials,
                           const std::function<double(const SearchTrial&)>& objective,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// embedding export
// ---------------------------------------------------------------------------

// One CSV row per frame: engine,end_index,e0..e{latent-1},rul.
void export_embeddings(const ModelState& state, const std::vector<Frame>& frames,
                       std::ostream& out, int batch_size = 256);

}  // namespace rulkit
