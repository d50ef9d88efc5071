#include "rulkit/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <thread>
#include <tuple>

namespace rulkit {

namespace {

// Eval-mode batching: plain chunks, no batch-size floor (running stats serve
// any N).
std::vector<std::pair<int, int>> chunks(int n, int size) {
  std::vector<std::pair<int, int>> out;
  for (int lo = 0; lo < n; lo += size) out.emplace_back(lo, std::min(n, lo + size));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std_of(const std::vector<double>& v) {
  const std::size_t n = v.size();
  if (n <= 1) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

double rmse_metric(const Vec& predictions, const Vec& truths) {
  RULKIT_CHECK(predictions.size() == truths.size(), "rmse_metric: " << predictions.size()
                                                                    << " predictions vs "
                                                                    << truths.size() << " truths");
  RULKIT_CHECK(predictions.size() > 0, "rmse_metric: nothing to score");
  return std::sqrt((predictions - truths).squaredNorm() /
                   static_cast<double>(predictions.size()));
}

double rul_score(const Vec& predictions, const Vec& truths) {
  RULKIT_CHECK(predictions.size() == truths.size(), "rul_score: " << predictions.size()
                                                                  << " predictions vs "
                                                                  << truths.size() << " truths");
  RULKIT_CHECK(predictions.size() > 0, "rul_score: nothing to score");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < predictions.size(); ++i) {
    const double delta = predictions(i) - truths(i);
    sum += delta < 0.0 ? std::exp(-delta / 13.0) - 1.0 : std::exp(delta / 10.0) - 1.0;
  }
  return sum;
}

MetricReport score_model(const ModelState& state, const std::vector<Frame>& test_frames,
                         int batch_size) {
  RULKIT_CHECK(!test_frames.empty(), "score_model: no frames to score");
  RULKIT_CHECK(batch_size >= 1, "score_model: batch size must be positive, got " << batch_size);
  NoGradGuard guard;
  const int n = static_cast<int>(test_frames.size());
  Vec predictions(n), truths(n);
  for (auto [lo, hi] : chunks(n, batch_size)) {
    std::vector<Frame> chunk(test_frames.begin() + lo, test_frames.begin() + hi);
    Tensor pred = predict_rul(frames_to_tensor(chunk), state, Mode::eval);
    for (int r = 0; r < hi - lo; ++r) {
      const Frame& f = chunk[static_cast<std::size_t>(r)];
      RULKIT_CHECK(f.has_label,
                   "score_model: engine " << f.engine_id << " carries no true RUL");
      predictions(lo + r) = pred.value()(r);
      truths(lo + r) = f.label;
    }
  }
  MetricReport report;
  report.deltas = predictions - truths;
  report.count = n;
  report.rmse = rmse_metric(predictions, truths);
  report.score = rul_score(predictions, truths);
  return report;
}

// ---------------------------------------------------------------------------
// experiment cells
// ---------------------------------------------------------------------------

namespace {

// Model init draws from a stream distinct from the training stream.
constexpr std::uint64_t kInitSalt = 0xa0761d6478bd642full;
// Baseline cells ignore unlabeled data but apply_scenario still wants a valid
// grade; the labeled half of the split never depends on it.
constexpr int kProbeGrade = 90;

int method_rank(const std::string& method) {
  if (method == "none") return 0;
  if (method == "self") return 1;
  if (method == "ae") return 2;
  if (method == "rbm") return 3;
  throw ValueError("unknown cell method '" + method + "' (expected none, self, ae, or rbm)");
}

}  // namespace

std::string cell_key(const CellSpec& spec) {
  method_rank(spec.method);  // validates
  std::ostringstream oss;
  oss << spec.subset << '_' << spec.method << "_p" << std::setw(3) << std::setfill('0')
      << spec.percent << "_g" << std::setw(2) << std::setfill('0') << spec.grade << "_r"
      << std::setw(2) << std::setfill('0') << spec.rep;
  return oss.str();
}

// Grade is deliberately absent: one (subset, percent, rep) selects one set of
// labeled engines, shared by every method and grade.
std::uint64_t scenario_seed(const CellSpec& spec) {
  return fnv1a(spec.subset + "|p" + std::to_string(spec.percent) + "|r" +
               std::to_string(spec.rep));
}

std::uint64_t training_seed(const CellSpec& spec) {
  return fnv1a(spec.subset + "|p" + std::to_string(spec.percent) + "|g" +
               std::to_string(spec.grade) + "|r" + std::to_string(spec.rep));
}

nlohmann::json cell_to_json(const CellResult& result) {
  nlohmann::json j;
  j["subset"] = result.spec.subset;
  j["method"] = result.spec.method;
  j["percent"] = result.spec.percent;
  j["grade"] = result.spec.grade;
  j["rep"] = result.spec.rep;
  j["split_seed"] = result.split_seed;
  j["train_seed"] = result.train_seed;
  j["ok"] = result.ok;
  j["error"] = result.error;
  j["rmse"] = result.rmse;
  j["score"] = result.score;
  j["best_val"] = result.best_val;
  j["best_epoch"] = result.best_epoch;
  j["n_test"] = result.n_test;
  return j;
}

CellResult cell_from_json(const nlohmann::json& j) {
  CellResult result;
  result.spec.subset = j.at("subset").get<std::string>();
  result.spec.method = j.at("method").get<std::string>();
  result.spec.percent = j.at("percent").get<int>();
  result.spec.grade = j.at("grade").get<int>();
  result.spec.rep = j.at("rep").get<int>();
  result.split_seed = j.at("split_seed").get<std::uint64_t>();
  result.train_seed = j.at("train_seed").get<std::uint64_t>();
  result.ok = j.at("ok").get<bool>();
  result.error = j.at("error").get<std::string>();
  result.rmse = j.at("rmse").get<double>();
  result.score = j.at("score").get<double>();
  result.best_val = j.at("best_val").get<double>();
  result.best_epoch = j.at("best_epoch").get<int>();
  result.n_test = j.at("n_test").get<int>();
  method_rank(result.spec.method);  // validates
  return result;
}

CellResult run_cell(const DatasetArchive& data, const CellSpec& spec,
                    const BenchOverrides& overrides) {
  CellResult result;
  result.spec = spec;
  result.split_seed = scenario_seed(spec);
  result.train_seed = training_seed(spec);
  try {
    const bool baseline = spec.method == "none";
    method_rank(spec.method);  // validates
    RULKIT_CHECK(!baseline || spec.grade == 0,
                 "run_cell: baseline cells carry grade 0, got " << spec.grade);

    FeatureExtractorConfig model;
    model.window = overrides.window > 0 ? overrides.window : data.window;
    if (overrides.filters > 0) model.filters = overrides.filters;

    DataScenario scenario;
    scenario.percent_labeled = spec.percent;
    scenario.grade = baseline ? kProbeGrade : spec.grade;
    scenario.seed = result.split_seed;
    ScenarioSplit split = apply_scenario(data.train, scenario);

    ModelState init;
    if (baseline) {
      init = init_model(model, result.train_seed ^ kInitSalt);
    } else {
      const TrainMethod method = method_from_name(spec.method);
      TrainConfig pre_cfg = default_train_config(method, spec.subset);
      pre_cfg.seed = result.train_seed;
      pre_cfg.rul_max = data.rul_max;
      if (overrides.pretrain_epochs >= 0) pre_cfg.epochs = overrides.pretrain_epochs;
      if (overrides.patience >= 0) pre_cfg.patience = overrides.patience;
      if (overrides.validation_pair_count > 0)
        pre_cfg.validation_pair_count = overrides.validation_pair_count;
      TrainResult pre;
      switch (method) {
        case TrainMethod::self_supervised:
          pre = pretrain_self_supervised(split, data.validation, model, pre_cfg);
          break;
        case TrainMethod::autoencoder:
          pre = pretrain_autoencoder(split, data.validation, model, pre_cfg);
          break;
        case TrainMethod::rbm:
          pre = pretrain_rbm(split, data.validation, model, pre_cfg);
          break;
        default:
          throw ValueError("run_cell: '" + spec.method + "' is not a pre-training method");
      }
      init = transfer_for_finetune(pre.state, result.train_seed ^ kInitSalt);
    }

    TrainConfig ft_cfg = default_train_config(TrainMethod::supervised, spec.subset);
    ft_cfg.seed = result.train_seed;
    ft_cfg.rul_max = data.rul_max;
    if (overrides.finetune_epochs >= 0) ft_cfg.epochs = overrides.finetune_epochs;
    if (overrides.patience >= 0) ft_cfg.patience = overrides.patience;
    TrainResult fine = finetune_supervised(std::move(init), split.labeled, data.validation, ft_cfg);

    std::vector<Frame> test_frames = last_windows(data.test, model.window, data.rul_max);
    MetricReport report = score_model(fine.state, test_frames);
    result.ok = true;
    result.rmse = report.rmse;
    result.score = report.score;
    result.best_val = fine.best_metric;
    result.best_epoch = fine.best_epoch;
    result.n_test = report.count;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  return result;
}

std::vector<CellSpec> default_grid(const std::vector<std::string>& subsets, int reps) {
  RULKIT_CHECK(reps >= 1, "default_grid: reps must be >= 1, got " << reps);
  constexpr int percents[] = {2, 10, 20, 40, 100};
  constexpr int grades[] = {40, 60, 70, 80, 90};
  constexpr const char* methods[] = {"self", "ae", "rbm"};
  std::vector<CellSpec> cells;
  for (const std::string& subset : subsets)
    for (int rep = 0; rep < reps; ++rep) {
      for (int percent : percents) cells.push_back({subset, "none", percent, 0, rep});
      for (const char* method : methods)
        for (int percent : percents)
          for (int grade : grades) cells.push_back({subset, method, percent, grade, rep});
    }
  return cells;
}

// ---------------------------------------------------------------------------
// resumable grid runner
// ---------------------------------------------------------------------------

GridProgress run_grid(const std::map<std::string, DatasetArchive>& archives,
                      const std::vector<CellSpec>& cells, const std::filesystem::path& out_dir,
                      int workers, const BenchOverrides& overrides) {
  for (const CellSpec& spec : cells)
    RULKIT_CHECK(archives.count(spec.subset) > 0,
                 "run_grid: no archive loaded for subset '" << spec.subset << "'");
  std::filesystem::create_directories(out_dir);

  GridProgress progress;
  progress.total = static_cast<int>(cells.size());
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first_error;

  auto work = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= static_cast<int>(cells.size())) return;
      const CellSpec& spec = cells[static_cast<std::size_t>(i)];
      const std::string key = cell_key(spec);
      const std::filesystem::path path = out_dir / (key + ".json");
      try {
        if (std::filesystem::exists(path)) {
          try {
            std::ifstream in(path);
            nlohmann::json j;
            in >> j;
            const CellResult prior = cell_from_json(j);
            std::lock_guard<std::mutex> lock(mu);
            ++progress.resumed;
            if (!prior.ok) ++progress.failed;
            continue;
          } catch (const std::exception&) {
            // damaged record: fall through and recompute
          }
        }
        const auto t0 = std::chrono::steady_clock::now();
        const CellResult result = run_cell(archives.at(spec.subset), spec, overrides);
        const auto secs =
            std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0)
                .count();
        const std::filesystem::path tmp = path.string() + ".tmp";
        {
          std::ofstream out(tmp, std::ios::trunc);
          if (!out) throw IoError("run_grid: cannot write " + tmp.string());
          out << cell_to_json(result).dump(2) << "\n";
          if (!out) throw IoError("run_grid: short write to " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
        std::ostringstream msg;
        msg << "bench: " << key << (result.ok ? " rmse " : " FAILED: ")
            << (result.ok ? std::to_string(result.rmse) : result.error) << " (" << secs << "s)\n";
        std::lock_guard<std::mutex> lock(mu);
        std::cerr << msg.str();
        ++progress.computed;
        if (!result.ok) ++progress.failed;
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int n_workers =
      std::max(1, std::min(workers, static_cast<int>(cells.size())));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return progress;
}

// ---------------------------------------------------------------------------
// aggregation and reporting
// ---------------------------------------------------------------------------

std::vector<CellResult> load_cells(const std::filesystem::path& dir) {
  RULKIT_CHECK(std::filesystem::is_directory(dir), "load_cells: " << dir << " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<CellResult> cells;
  cells.reserve(files.size());
  for (const auto& file : files) {
    try {
      std::ifstream in(file);
      nlohmann::json j;
      in >> j;
      cells.push_back(cell_from_json(j));
    } catch (const std::exception& e) {
      warn("load_cells: skipping " + file.string() + ": " + e.what());
    }
  }
  return cells;
}

std::vector<AggregateRow> aggregate(const std::vector<CellResult>& cells) {
  // Key order gives the row order: subset, grade, percent, method rank.
  std::map<std::tuple<std::string, int, int, int>,
           std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const CellResult& cell : cells) {
    if (!cell.ok) continue;
    auto& [rmses, scores] = groups[{cell.spec.subset, cell.spec.grade, cell.spec.percent,
                                    method_rank(cell.spec.method)}];
    rmses.push_back(cell.rmse);
    scores.push_back(cell.score);
  }

  constexpr const char* kMethods[] = {"none", "self", "ae", "rbm"};
  std::vector<AggregateRow> rows;
  rows.reserve(groups.size());
  for (const auto& [key, values] : groups) {
    const auto& [subset, grade, percent, rank] = key;
    AggregateRow row;
    row.subset = subset;
    row.method = kMethods[rank];
    row.percent = percent;
    row.grade = grade;
    row.n = static_cast<int>(values.first.size());
    row.rmse_mean = mean_of(values.first);
    row.rmse_std = sample_std_of(values.first);
    row.score_mean = mean_of(values.second);
    row.score_std = sample_std_of(values.second);
    rows.push_back(std::move(row));
  }

  // Best-mean flags within each (subset, grade, percent) block; rows of a
  // block are adjacent by construction.
  for (std::size_t lo = 0; lo < rows.size();) {
    std::size_t hi = lo + 1;
    while (hi < rows.size() && rows[hi].subset == rows[lo].subset &&
           rows[hi].grade == rows[lo].grade && rows[hi].percent == rows[lo].percent)
      ++hi;
    double best_rmse = rows[lo].rmse_mean, best_score = rows[lo].score_mean;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      best_rmse = std::min(best_rmse, rows[i].rmse_mean);
      best_score = std::min(best_score, rows[i].score_mean);
    }
    for (std::size_t i = lo; i < hi; ++i) {
      rows[i].rmse_best = rows[i].rmse_mean == best_rmse;
      rows[i].score_best = rows[i].score_mean == best_score;
    }
    lo = hi;
  }
  return rows;
}

void write_report_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "subset,method,percent,grade,n,rmse_mean,rmse_std,score_mean,score_std,"
         "rmse_best,score_best\n";
  out << std::setprecision(10);
  for (const AggregateRow& r : rows)
    out << r.subset << ',' << r.method << ',' << r.percent << ',' << r.grade << ',' << r.n << ','
        << r.rmse_mean << ',' << r.rmse_std << ',' << r.score_mean << ',' << r.score_std << ','
        << (r.rmse_best ? 1 : 0) << ',' << (r.score_best ? 1 : 0) << '\n';
}

void write_report_markdown(std::ostream& out, const std::vector<AggregateRow>& rows) {
  auto entry = [](double mean, double sd, bool best) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, sd);
    return best ? "**" + std::string(buf) + "**" : std::string(buf);
  };
  std::string current;
  for (const AggregateRow& r : rows) {
    if (r.subset != current) {
      if (!current.empty()) out << '\n';
      out << "## " << r.subset << "\n\n"
          << "| method | labeled % | grade % | n | rmse | score |\n"
          << "|---|---|---|---|---|---|\n";
      current = r.subset;
    }
    out << "| " << r.method << " | " << r.percent << " | "
        << (r.grade == 0 ? std::string("-") : std::to_string(r.grade)) << " | " << r.n << " | "
        << entry(r.rmse_mean, r.rmse_std, r.rmse_best) << " | "
        << entry(r.score_mean, r.score_std, r.score_best) << " |\n";
  }
}

// ---------------------------------------------------------------------------
// random hyperparameter search
// ---------------------------------------------------------------------------

namespace {

// Round to the quantum's grid, then clamp to the on-grid ends of [lo, hi].
// The trailing + 0.0 turns a negative zero (ceil of a tiny negative) positive.
double quantize(double v, double lo, double hi, double q) {
  const double lo_q = std::ceil(lo / q - 1e-9) * q;
  const double hi_q = std::floor(hi / q + 1e-9) * q;
  return std::min(hi_q, std::max(lo_q, std::round(v / q) * q)) + 0.0;
}

}  // namespace

double QLogUniform::sample(std::mt19937_64& rng) const {
  RULKIT_CHECK(lo > 0.0 && hi > lo && quantum > 0.0,
               "qlogu: need 0 < lo < hi and a positive quantum");
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return quantize(std::exp(u(rng)), lo, hi, quantum);
}

double QUniform::sample(std::mt19937_64& rng) const {
  RULKIT_CHECK(hi > lo && quantum > 0.0, "qu: need lo < hi and a positive quantum");
  std::uniform_real_distribution<double> u(lo, hi);
  return quantize(u(rng), lo, hi, quantum);
}

SearchResult random_search(const SearchSpace& space, int trials,
                           const std::function<double(const SearchTrial&)>& objective,
                           std::uint64_t seed) {
  RULKIT_CHECK(trials >= 1, "random_search: trials must be >= 1, got " << trials);
  RULKIT_CHECK(!space.batch_sizes.empty() && !space.min_distances.empty(),
               "random_search: empty categorical set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_batch(0, space.batch_sizes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_dist(0, space.min_distances.size() - 1);

  SearchResult result;
  result.best.value = std::numeric_limits<double>::infinity();
  result.trials.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    SearchTrial trial;
    trial.learning_rate = space.learning_rate.sample(rng);
    trial.dropout = space.dropout.sample(rng);
    trial.batch_size = space.batch_sizes[pick_batch(rng)];
    trial.min_distance = space.min_distances[pick_dist(rng)];
    trial.value = objective(trial);
    result.trials.push_back(trial);
    if (trial.value < result.best.value) result.best = trial;
  }
  return result;
}

// ---------------------------------------------------------------------------
// embedding export
// ---------------------------------------------------------------------------

void export_embeddings(const ModelState& state, const std::vector<Frame>& frames,
                       std::ostream& out, int batch_size) {
  RULKIT_CHECK(batch_size >= 1,
               "export_embeddings: batch size must be positive, got " << batch_size);
  NoGradGuard guard;
  const int latent = state.config.latent;
  out << "engine,end_index";
  for (int k = 0; k < latent; ++k) out << ",e" << k;
  out << ",rul\n";
  out << std::setprecision(9);
  const int n = static_cast<int>(frames.size());
  for (auto [lo, hi] : chunks(n, batch_size)) {
    std::vector<Frame> chunk(frames.begin() + lo, frames.begin() + hi);
    Tensor emb = feature_extractor_forward(frames_to_tensor(chunk), state, Mode::eval);
    for (int r = 0; r < hi - lo; ++r) {
      const Frame& f = chunk[static_cast<std::size_t>(r)];
      out << f.engine_id << ',' << f.end_index;
      for (int k = 0; k < latent; ++k) out << ',' << emb.value()(r * latent + k);
      out << ',';
      if (f.has_label) out << f.label;
      out << '\n';
    }
  }
}

}  // namespace rulkit
