// rulkit command line: dataset preparation, pre-training and fine-tuning,
// the replicated experiment grid, hyperparameter search, reporting, and
// embedding export.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rulkit/bench.hpp"
#include "rulkit/synthetic.hpp"

using namespace rulkit;

namespace {

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

std::filesystem::path resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("RULKIT_DATA_DIR")) return env;
  throw ValueError("no data directory given: pass --data-dir or set RULKIT_DATA_DIR");
}

// Canonical preparation order: split first, then fit the scaler on the
// training remainder only, then label what has labels.
DatasetArchive build_archive(const SeriesSet& train, SeriesSet test, int window,
                             double val_fraction, std::uint64_t seed) {
  auto [core, val] = split_validation(train, val_fraction, seed);
  const Scaler scaler = fit_scaler(core);
  DatasetArchive archive;
  archive.subset = core.subset;
  archive.window = window;
  archive.scaler = scaler;
  archive.train = apply_scaler(core, scaler);
  archive.validation = apply_scaler(val, scaler);
  archive.test = apply_scaler(test, scaler);
  label_series(archive.train);
  label_series(archive.validation);
  return archive;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

nlohmann::json trial_to_json(const SearchTrial& t) {
  return {{"learning_rate", t.learning_rate},
          {"dropout", t.dropout},
          {"batch_size", t.batch_size},
          {"min_distance", t.min_distance},
          {"value", t.value}};
}

// ---------------------------------------------------------------------------
// prepare / synth
// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string subset = "FD001";
  std::string data_dir;
  std::string out;
  double val_fraction = 0.2;
  int window = 0;  // 0: per-subset default
  std::uint64_t seed = 42;
};

void run_prepare(const PrepareArgs& a) {
  const auto dir = resolve_data_dir(a.data_dir);
  SeriesSet train =
      select_channels(parse_cmapss_file(dir / ("train_" + a.subset + ".txt"), a.subset,
                                        SetRole::train));
  SeriesSet test = select_channels(
      parse_cmapss_file(dir / ("test_" + a.subset + ".txt"), a.subset, SetRole::test));
  attach_test_rul(test, parse_rul_file(dir / ("RUL_" + a.subset + ".txt")));

  const int window = a.window > 0 ? a.window : default_window(a.subset);
  DatasetArchive archive = build_archive(train, std::move(test), window, a.val_fraction, a.seed);
  save_archive(a.out, archive);
  std::cout << "prepared " << a.subset << ": " << archive.train.series.size() << " train / "
            << archive.validation.series.size() << " validation / " << archive.test.series.size()
            << " test engines, window " << window << " -> " << a.out << "\n";
}

struct SynthArgs {
  SynthConfig cfg;
  int test_engines = 20;
  std::string out;
  int window = 30;
  double val_fraction = 0.2;
};

void run_synth(const SynthArgs& a) {
  SeriesSet train = select_channels(synthesize_fleet(a.cfg, SetRole::train));
  SynthConfig test_cfg = a.cfg;
  test_cfg.engines = a.test_engines;
  test_cfg.seed = a.cfg.seed ^ fnv1a("synth-test");
  SeriesSet test = select_channels(synthesize_fleet(test_cfg, SetRole::test));

  DatasetArchive archive = build_archive(train, std::move(test), a.window, a.val_fraction,
                                         a.cfg.seed ^ fnv1a("synth-split"));
  save_archive(a.out, archive);
  std::cout << "synthesized " << a.cfg.subset << ": " << archive.train.series.size()
            << " train / " << archive.validation.series.size() << " validation / "
            << archive.test.series.size() << " test engines, window " << a.window << " -> "
            << a.out << "\n";
}

// ---------------------------------------------------------------------------
// pretrain / finetune
// ---------------------------------------------------------------------------

struct StageArgs {
  std::string archive;
  std::string out;
  std::string history;
  std::uint64_t seed = 0;
  int epochs = -1;
  int patience = -1;
  double lr = -1.0;
  double dropout = -1.0;
  int batch_size = -1;
  int filters = -1;
  int latent = -1;
};

void apply_stage_overrides(TrainConfig& cfg, const StageArgs& a) {
  cfg.seed = a.seed;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.patience >= 0) cfg.patience = a.patience;
  if (a.lr > 0) cfg.learning_rate = a.lr;
  if (a.dropout >= 0) cfg.dropout = a.dropout;
  if (a.batch_size > 0) cfg.batch_size = a.batch_size;
  if (!a.history.empty()) cfg.history_path = a.history;
}

FeatureExtractorConfig stage_model(const DatasetArchive& data, const StageArgs& a) {
  FeatureExtractorConfig model;
  model.window = data.window;
  if (a.filters > 0) model.filters = a.filters;
  if (a.latent > 0) model.latent = a.latent;
  return model;
}

struct PretrainArgs : StageArgs {
  std::string method = "self";
  int percent = 2;
  int grade = 80;
  int min_distance = -1;
  int pairs = -1;
};

void run_pretrain(const PretrainArgs& a) {
  const DatasetArchive data = load_archive(a.archive);
  const TrainMethod method = method_from_name(a.method);
  RULKIT_CHECK(method != TrainMethod::supervised,
               "pretrain: '" << a.method << "' is the fine-tuning stage, not a pre-training method");

  TrainConfig cfg = default_train_config(method, data.subset);
  apply_stage_overrides(cfg, a);
  cfg.rul_max = data.rul_max;
  if (a.min_distance > 0) cfg.min_distance = a.min_distance;
  if (a.pairs > 0) cfg.validation_pair_count = a.pairs;

  const FeatureExtractorConfig model = stage_model(data, a);
  const ScenarioSplit split = apply_scenario(data.train, {a.percent, a.grade, a.seed});

  TrainResult result;
  switch (method) {
    case TrainMethod::self_supervised:
      result = pretrain_self_supervised(split, data.validation, model, cfg);
      break;
    case TrainMethod::autoencoder:
      result = pretrain_autoencoder(split, data.validation, model, cfg);
      break;
    default:
      result = pretrain_rbm(split, data.validation, model, cfg);
      break;
  }

  save_model_state(a.out, result.state,
                   {{"stage", "pretrain"},
                    {"method", a.method},
                    {"subset", data.subset},
                    {"percent", a.percent},
                    {"grade", a.grade},
                    {"seed", a.seed},
                    {"best_metric", result.best_metric},
                    {"best_epoch", result.best_epoch}});
  std::cout << a.method << " pre-training on " << data.subset << ": best validation loss "
            << result.best_metric << " at epoch " << result.best_epoch << " -> " << a.out << "\n";
}

struct FinetuneArgs : StageArgs {
  std::string init = "random";
  std::string report;
  int percent = 100;
  int grade = 90;
};

void run_finetune(const FinetuneArgs& a) {
  const DatasetArchive data = load_archive(a.archive);
  TrainConfig cfg = default_train_config(TrainMethod::supervised, data.subset);
  apply_stage_overrides(cfg, a);
  cfg.rul_max = data.rul_max;

  const ScenarioSplit split = apply_scenario(data.train, {a.percent, a.grade, a.seed});
  ModelState init;
  if (a.init == "random") {
    init = init_model(stage_model(data, a), a.seed);
  } else {
    init = transfer_for_finetune(load_model_state(a.init), a.seed);
    RULKIT_CHECK(init.config.window == data.window,
                 "finetune: checkpoint expects window " << init.config.window
                                                        << " but the archive provides "
                                                        << data.window);
  }

  TrainResult result = finetune_supervised(std::move(init), split.labeled, data.validation, cfg);
  save_model_state(a.out, result.state,
                   {{"stage", "finetune"},
                    {"init", a.init},
                    {"subset", data.subset},
                    {"percent", a.percent},
                    {"seed", a.seed},
                    {"best_metric", result.best_metric},
                    {"best_epoch", result.best_epoch}});

  const std::vector<Frame> tests = last_windows(data.test, result.state.config.window,
                                                data.rul_max);
  const MetricReport report = score_model(result.state, tests);
  if (!a.report.empty()) {
    std::ofstream out = open_out(a.report);
    out << "engine,end_index,true_rul,predicted_rul,delta\n" << std::setprecision(9);
    for (int i = 0; i < report.count; ++i)
      out << tests[static_cast<std::size_t>(i)].engine_id << ','
          << tests[static_cast<std::size_t>(i)].end_index << ','
          << tests[static_cast<std::size_t>(i)].label << ','
          << tests[static_cast<std::size_t>(i)].label + report.deltas(i) << ','
          << report.deltas(i) << '\n';
  }
  std::cout << "fine-tuned on " << data.subset << " (" << a.percent
            << "% labeled): validation rmse " << result.best_metric << " at epoch "
            << result.best_epoch << "; test rmse " << report.rmse << ", score " << report.score
            << " over " << report.count << " engines -> " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// experiment / report
// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::vector<std::string> archives;
  std::string grid = "default";
  std::string out = "cells";
  int workers = 1;
  int reps = 10;
  BenchOverrides overrides;
};

std::vector<CellSpec> parse_grid_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read grid file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("grid file '" + path.string() + "': " + e.what());
  }
  RULKIT_CHECK(j.is_array(), "grid file '" << path.string() << "' must hold an array of cells");
  std::vector<CellSpec> cells;
  cells.reserve(j.size());
  for (const auto& item : j) {
    CellSpec spec;
    try {
      spec.subset = item.at("subset").get<std::string>();
      spec.method = item.at("method").get<std::string>();
      spec.percent = item.at("percent").get<int>();
      spec.grade = item.value("grade", 0);
      spec.rep = item.value("rep", 0);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("grid file '" + path.string() + "': " + e.what());
    }
    cell_key(spec);  // validates the method name
    cells.push_back(std::move(spec));
  }
  return cells;
}

void run_experiment(const ExperimentArgs& a) {
  std::map<std::string, DatasetArchive> archives;
  for (const std::string& path : a.archives) {
    DatasetArchive data = load_archive(path);
    const std::string subset = data.subset;
    RULKIT_CHECK(archives.emplace(subset, std::move(data)).second,
                 "experiment: archive for subset '" << subset << "' given twice");
  }
  RULKIT_CHECK(!archives.empty(), "experiment: no archives given");

  std::vector<CellSpec> cells;
  if (a.grid == "default") {
    std::vector<std::string> subsets;
    for (const auto& [subset, data] : archives) subsets.push_back(subset);
    cells = default_grid(subsets, a.reps);
  } else {
    cells = parse_grid_file(a.grid);
  }

  const GridProgress progress = run_grid(archives, cells, a.out, a.workers, a.overrides);
  std::cout << "grid finished: " << progress.computed << " computed, " << progress.resumed
            << " resumed, " << progress.failed << " failed, " << progress.total << " total -> "
            << a.out << "\n";
}

struct ReportArgs {
  std::string cells;
  std::string out = "tables.csv";
  bool markdown = false;
};

void run_report(const ReportArgs& a) {
  const std::vector<CellResult> cells = load_cells(a.cells);
  RULKIT_CHECK(!cells.empty(), "report: no readable cell records under '" << a.cells << "'");
  int failed = 0;
  for (const CellResult& c : cells) failed += c.ok ? 0 : 1;

  const std::vector<AggregateRow> rows = aggregate(cells);
  {
    std::ofstream out = open_out(a.out);
    write_report_csv(out, rows);
  }
  std::string md_note;
  if (a.markdown) {
    std::filesystem::path md_path = a.out;
    md_path.replace_extension(".md");
    std::ofstream out = open_out(md_path);
    write_report_markdown(out, rows);
    md_note = " and " + md_path.string();
  }
  std::cout << "aggregated " << cells.size() << " cells (" << failed << " failed) into "
            << rows.size() << " rows -> " << a.out << md_note << "\n";
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string archive;
  std::string stage = "supervised";
  std::string method = "self";
  std::string out;
  int trials = 100;
  std::uint64_t seed = 0;
  int epochs = -1;
  int patience = -1;
  int replications = 5;
  int grade = 80;
  int pairs = -1;
};

void run_search(const SearchArgs& a) {
  const DatasetArchive data = load_archive(a.archive);
  RULKIT_CHECK(a.stage == "supervised" || a.stage == "pretrain",
               "search: stage must be supervised or pretrain, got '" << a.stage << "'");
  FeatureExtractorConfig model;
  model.window = data.window;

  int call = 0;
  std::function<double(const SearchTrial&)> objective;
  if (a.stage == "supervised") {
    // One supervised run per trial on fully labeled data; the monitored
    // validation rmse is the objective.
    objective = [&](const SearchTrial& t) {
      const int trial_index = call++;
      TrainConfig cfg = default_train_config(TrainMethod::supervised, data.subset);
      cfg.learning_rate = t.learning_rate;
      cfg.dropout = t.dropout;
      cfg.batch_size = t.batch_size;
      cfg.rul_max = data.rul_max;
      if (a.epochs >= 0) cfg.epochs = a.epochs;
      if (a.patience >= 0) cfg.patience = a.patience;
      cfg.seed = fnv1a(data.subset + "|search|supervised|t" + std::to_string(trial_index));
      const ScenarioSplit split = apply_scenario(data.train, {100, 0, cfg.seed});
      ModelState init = init_model(model, cfg.seed);
      const double value =
          finetune_supervised(std::move(init), split.labeled, data.validation, cfg).best_metric;
      std::cerr << "search: trial " << trial_index + 1 << "/" << a.trials << " value " << value
                << "\n";
      return value;
    };
  } else {
    const TrainMethod method = method_from_name(a.method);
    RULKIT_CHECK(method == TrainMethod::self_supervised || method == TrainMethod::autoencoder,
                 "search: pre-training search covers self and ae only; rbm settings are fixed");
    // Label-free objective: pre-train on engines truncated at the given
    // grade (one engine stays full-length; scenarios keep at least one) and
    // average the monitored validation loss over several replications.
    objective = [&, method](const SearchTrial& t) {
      const int trial_index = call++;
      double sum = 0.0;
      for (int k = 0; k < a.replications; ++k) {
        TrainConfig cfg = default_train_config(method, data.subset);
        cfg.learning_rate = t.learning_rate;
        cfg.dropout = t.dropout;
        cfg.batch_size = t.batch_size;
        cfg.min_distance = t.min_distance;
        cfg.rul_max = data.rul_max;
        if (a.epochs >= 0) cfg.epochs = a.epochs;
        if (a.patience >= 0) cfg.patience = a.patience;
        if (a.pairs > 0) cfg.validation_pair_count = a.pairs;
        cfg.seed = fnv1a(data.subset + "|search|" + a.method + "|t" +
                         std::to_string(trial_index) + "|k" + std::to_string(k));
        const ScenarioSplit split = apply_scenario(data.train, {1, a.grade, cfg.seed});
        const TrainResult result =
            method == TrainMethod::self_supervised
                ? pretrain_self_supervised(split, data.validation, model, cfg)
                : pretrain_autoencoder(split, data.validation, model, cfg);
        sum += result.best_metric;
      }
      const double value = sum / static_cast<double>(a.replications);
      std::cerr << "search: trial " << trial_index + 1 << "/" << a.trials << " value " << value
                << "\n";
      return value;
    };
  }

  const SearchResult result = random_search(SearchSpace{}, a.trials, objective, a.seed);

  if (!a.out.empty()) {
    nlohmann::json j;
    j["subset"] = data.subset;
    j["stage"] = a.stage;
    if (a.stage == "pretrain") j["method"] = a.method;
    j["seed"] = a.seed;
    j["best"] = trial_to_json(result.best);
    j["trials"] = nlohmann::json::array();
    for (const SearchTrial& t : result.trials) j["trials"].push_back(trial_to_json(t));
    open_out(a.out) << j.dump(2) << "\n";
  }
  std::cout << "best of " << a.trials << " trials: learning rate " << result.best.learning_rate
            << ", dropout " << result.best.dropout << ", batch size " << result.best.batch_size;
  if (a.stage == "pretrain") std::cout << ", min distance " << result.best.min_distance;
  std::cout << " (objective " << result.best.value << ")\n";
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string ckpt;
  std::string archive;
  std::string split = "validation";
  std::string out;
  int batch_size = 256;
};

void run_export(const ExportArgs& a) {
  const ModelState state = load_model_state(a.ckpt);
  const DatasetArchive data = load_archive(a.archive);
  std::vector<Frame> frames;
  if (a.split == "train")
    frames = make_windows(data.train, state.config.window);
  else if (a.split == "validation")
    frames = make_windows(data.validation, state.config.window);
  else if (a.split == "test")
    frames = last_windows(data.test, state.config.window, data.rul_max);
  else
    throw ValueError("export-embeddings: split must be train, validation, or test, got '" +
                     a.split + "'");
  RULKIT_CHECK(!frames.empty(), "export-embeddings: the " << a.split << " split yields no frames");

  std::ofstream out = open_out(a.out);
  export_embeddings(state, frames, out, a.batch_size);
  std::cout << "exported " << frames.size() << " embeddings (" << a.split << " split) -> "
            << a.out << "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// wiring
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised remaining-useful-life estimation on CMAPSS-style fleets"};
  app.require_subcommand(1);

  PrepareArgs prep;
  CLI::App* prepare = app.add_subcommand("prepare", "Parse, split, scale, and label a subset");
  prepare->add_option("--subset", prep.subset, "Subset name (FD001..FD004)");
  prepare->add_option("--data-dir", prep.data_dir,
                      "Directory with train_/test_/RUL_ files (default: $RULKIT_DATA_DIR)");
  prepare->add_option("--out", prep.out, "Archive file to write")->required();
  prepare->add_option("--val-fraction", prep.val_fraction, "Validation engine fraction");
  prepare->add_option("--window", prep.window, "Window width (0: per-subset default)");
  prepare->add_option("--seed", prep.seed, "Validation split seed");

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate and prepare a synthetic fleet");
  synth_cmd->add_option("--out", synth.out, "Archive file to write")->required();
  synth_cmd->add_option("--engines", synth.cfg.engines, "Training fleet size");
  synth_cmd->add_option("--test-engines", synth.test_engines, "Test fleet size");
  synth_cmd->add_option("--min-length", synth.cfg.min_length, "Shortest run-to-failure life");
  synth_cmd->add_option("--max-length", synth.cfg.max_length, "Longest run-to-failure life");
  synth_cmd->add_option("--trend", synth.cfg.trend, "Degradation amplitude");
  synth_cmd->add_option("--offset", synth.cfg.offset, "Per-engine offset scale");
  synth_cmd->add_option("--noise", synth.cfg.noise, "Sensor noise sigma");
  synth_cmd->add_option("--subset", synth.cfg.subset, "Corpus name stored in the archive");
  synth_cmd->add_option("--window", synth.window, "Window width");
  synth_cmd->add_option("--val-fraction", synth.val_fraction, "Validation engine fraction");
  synth_cmd->add_option("--seed", synth.cfg.seed, "Generator seed");

  auto add_stage_options = [](CLI::App* cmd, StageArgs& a) {
    cmd->add_option("--archive", a.archive, "Prepared dataset archive")->required();
    cmd->add_option("--out", a.out, "Checkpoint file to write")->required();
    cmd->add_option("--history", a.history, "Stream per-epoch records to this JSONL file");
    cmd->add_option("--seed", a.seed, "Seed for the scenario and all training randomness");
    cmd->add_option("--epochs", a.epochs, "Epoch budget override");
    cmd->add_option("--patience", a.patience, "Early-stopping patience override");
    cmd->add_option("--lr", a.lr, "Learning rate override");
    cmd->add_option("--dropout", a.dropout, "Time-step dropout override");
    cmd->add_option("--batch-size", a.batch_size, "Batch size override");
    cmd->add_option("--filters", a.filters, "Convolution filter count override");
    cmd->add_option("--latent", a.latent, "Embedding width override");
  };

  PretrainArgs pre;
  CLI::App* pretrain = app.add_subcommand("pretrain", "Pre-train a feature extractor");
  add_stage_options(pretrain, pre);
  pretrain->add_option("--method", pre.method, "Pre-training method: self, ae, or rbm");
  pretrain->add_option("--percent", pre.percent, "Percent of engines kept labeled (full length)");
  pretrain->add_option("--grade", pre.grade, "Degradation grade of the unlabeled engines");
  pretrain->add_option("--min-distance", pre.min_distance, "Minimum pair distance override");
  pretrain->add_option("--pairs", pre.pairs, "Frozen validation pair count override");

  FinetuneArgs fine;
  CLI::App* finetune = app.add_subcommand("finetune", "Train the RUL predictor");
  add_stage_options(finetune, fine);
  finetune->add_option("--init", fine.init, "Pre-trained checkpoint path, or 'random'");
  finetune->add_option("--percent", fine.percent, "Percent of engines kept labeled");
  finetune->add_option("--grade", fine.grade,
                       "Degradation grade of the unlabeled remainder (unused by training)");
  finetune->add_option("--report", fine.report, "Write a per-engine test CSV here");

  ExperimentArgs exp;
  CLI::App* experiment = app.add_subcommand("experiment", "Run the replicated cell grid");
  experiment->add_option("--archive", exp.archives, "Prepared archive (repeatable)")->required();
  experiment->add_option("--grid", exp.grid, "'default' or a JSON cell list");
  experiment->add_option("--out", exp.out, "Directory for per-cell records");
  experiment->add_option("--workers", exp.workers, "Cells trained in parallel")
      ->check(CLI::PositiveNumber);
  experiment->add_option("--reps", exp.reps, "Replications per scenario (default grid)");
  experiment->add_option("--pretrain-epochs", exp.overrides.pretrain_epochs,
                         "Pre-training epoch budget override");
  experiment->add_option("--finetune-epochs", exp.overrides.finetune_epochs,
                         "Fine-tuning epoch budget override");
  experiment->add_option("--patience", exp.overrides.patience, "Early-stopping patience override");
  experiment->add_option("--filters", exp.overrides.filters, "Convolution filter count override");
  experiment->add_option("--window", exp.overrides.window, "Window width override");
  experiment->add_option("--pairs", exp.overrides.validation_pair_count,
                         "Frozen validation pair count override");

  SearchArgs search;
  CLI::App* search_cmd = app.add_subcommand("search", "Random hyperparameter search");
  search_cmd->add_option("--archive", search.archive, "Prepared dataset archive")->required();
  search_cmd->add_option("--stage", search.stage, "supervised or pretrain");
  search_cmd->add_option("--method", search.method, "Pre-training method (pretrain stage)");
  search_cmd->add_option("--trials", search.trials, "Trial count")->check(CLI::PositiveNumber);
  search_cmd->add_option("--seed", search.seed, "Sampler seed");
  search_cmd->add_option("--out", search.out, "Write the trial log to this JSON file");
  search_cmd->add_option("--epochs", search.epochs, "Epoch budget override");
  search_cmd->add_option("--patience", search.patience, "Early-stopping patience override");
  search_cmd->add_option("--replications", search.replications,
                         "Training runs averaged per pretrain trial");
  search_cmd->add_option("--grade", search.grade, "Degradation grade for the pretrain stage");
  search_cmd->add_option("--pairs", search.pairs, "Frozen validation pair count override");

  ReportArgs rep;
  CLI::App* report = app.add_subcommand("report", "Aggregate cell records into tables");
  report->add_option("--cells", rep.cells, "Directory of per-cell records")->required();
  report->add_option("--out", rep.out, "Summary CSV to write");
  report->add_flag("--markdown", rep.markdown, "Also write the same table as markdown");

  ExportArgs exp_emb;
  CLI::App* export_cmd =
      app.add_subcommand("export-embeddings", "Dump extractor embeddings as CSV");
  export_cmd->add_option("--ckpt", exp_emb.ckpt, "Model checkpoint")->required();
  export_cmd->add_option("--archive", exp_emb.archive, "Prepared dataset archive")->required();
  export_cmd->add_option("--split", exp_emb.split, "train, validation, or test");
  export_cmd->add_option("--out", exp_emb.out, "CSV file to write")->required();
  export_cmd->add_option("--batch-size", exp_emb.batch_size, "Forward batch size")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*prepare) run_prepare(prep);
    if (*synth_cmd) run_synth(synth);
    if (*pretrain) run_pretrain(pre);
    if (*finetune) run_finetune(fine);
    if (*experiment) run_experiment(exp);
    if (*search_cmd) run_search(search);
    if (*report) run_report(rep);
    if (*export_cmd) run_export(exp_emb);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
