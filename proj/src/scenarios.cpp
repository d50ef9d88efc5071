#include "rulkit/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace rulkit {

ScenarioSplit apply_scenario(const SeriesSet& train, const DataScenario& scenario) {
  RULKIT_CHECK(train.role == SetRole::train, "apply_scenario: expected a training set, got role "
                                                 << role_name(train.role));
  RULKIT_CHECK(!train.series.empty(), "apply_scenario: empty training set");
  RULKIT_CHECK(scenario.percent_labeled >= 1 && scenario.percent_labeled <= 100,
               "apply_scenario: percent labeled must be in [1,100], got "
                   << scenario.percent_labeled);
  const bool wants_unlabeled = scenario.percent_labeled < 100;
  if (wants_unlabeled) {
    RULKIT_CHECK(scenario.grade != 100,
                 "apply_scenario: grade 100 is rejected; a fully degraded series runs to "
                 "failure and belongs in the labeled set");
    RULKIT_CHECK(scenario.grade >= 1 && scenario.grade <= 99,
                 "apply_scenario: grade must be in [1,99] when percent labeled < 100, got "
                     << scenario.grade);
  }

  const int n = static_cast<int>(train.series.size());
  const int n_labeled =
      std::max(1, static_cast<int>(std::floor(n * scenario.percent_labeled / 100.0)));

  // The labeled choice must be a function of (set, percent, seed) only, so
  // grade never enters before this point.
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(scenario.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_labeled(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_labeled; ++i)
    is_labeled[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;

  ScenarioSplit split;
  split.scenario = scenario;
  split.labeled.subset = split.unlabeled.subset = train.subset;
  split.labeled.role = split.unlabeled.role = SetRole::train;
  for (int i = 0; i < n; ++i) {
    const EngineSeries& src = train.series[static_cast<std::size_t>(i)];
    if (is_labeled[static_cast<std::size_t>(i)]) {
      split.labeled.series.push_back(src);
      continue;
    }
    if (!wants_unlabeled) continue;
    const int keep = static_cast<int>(std::floor(src.length() * scenario.grade / 100.0));
    if (keep < 1) {
      warn("apply_scenario: engine " + std::to_string(src.id) + " of length " +
           std::to_string(src.length()) + " truncates to nothing at grade " +
           std::to_string(scenario.grade) + "%; dropped");
      continue;
    }
    EngineSeries cut;
    cut.id = src.id;
    cut.readings = src.readings.topRows(keep);
    cut.op_settings = src.op_settings.topRows(keep);
    // labels stay empty: this engine has not failed yet.
    split.unlabeled.series.push_back(std::move(cut));
  }
  return split;
}

double relative_rul_target(int i, int j, double rul_max) {
  RULKIT_CHECK(rul_max > 0.0, "relative_rul_target: rul_max must be positive");
  RULKIT_CHECK(i < j, "relative_rul_target: need i < j, got i=" << i << ", j=" << j);
  RULKIT_CHECK(static_cast<double>(j - i) <= rul_max,
               "relative_rul_target: gap " << (j - i) << " exceeds rul_max " << rul_max);
  return static_cast<double>(j - i) / rul_max;
}

// ---------------------------------------------------------------------------
// pair sampling
// ---------------------------------------------------------------------------

PairSampler::PairSampler(std::vector<Frame> frames, int min_distance, double rul_max)
    : frames_(std::move(frames)), min_distance_(min_distance), rul_max_(rul_max) {
  RULKIT_CHECK(min_distance_ >= 1, "pair sampler: min_distance must be >= 1, got "
                                       << min_distance_);
  RULKIT_CHECK(rul_max_ >= min_distance_,
               "pair sampler: rul_max " << rul_max_ << " below min_distance " << min_distance_);
  RULKIT_CHECK(!frames_.empty(), "pair sampler: no frames");

  std::stable_sort(frames_.begin(), frames_.end(), [](const Frame& a, const Frame& b) {
    return a.engine_id != b.engine_id ? a.engine_id < b.engine_id : a.end_index < b.end_index;
  });

  const int gap_cap = static_cast<int>(std::floor(rul_max_));
  int longest_span = 0;
  std::size_t k = 0;
  while (k < frames_.size()) {
    Engine e;
    e.id = frames_[k].engine_id;
    e.first_end = frames_[k].end_index;
    while (k < frames_.size() && frames_[k].engine_id == e.id) {
      const int expect = e.first_end + static_cast<int>(e.frames.size());
      RULKIT_CHECK(frames_[k].end_index == expect,
                   "pair sampler: engine " << e.id << " has a gap in window end indices at "
                                           << frames_[k].end_index);
      e.frames.push_back(&frames_[k]);
      ++k;
    }
    const int span = static_cast<int>(e.frames.size()) - 1;
    longest_span = std::max(longest_span, span);
    if (span < min_distance_) continue;  // no admissible pair
    e.max_gap = std::min(span, gap_cap);
    engines_.push_back(std::move(e));
  }
  if (engines_.empty())
    throw ValueError("pair sampler: no engine admits a pair at min_distance " +
                     std::to_string(min_distance_) + "; longest usable index span is " +
                     std::to_string(longest_span) + " (need at least " +
                     std::to_string(min_distance_ + 1) + " consecutive windows)");
}

long long PairSampler::admissible_pairs(int engine_id) const {
  for (const auto& e : engines_) {
    if (e.id != engine_id) continue;
    const long long count = static_cast<long long>(e.frames.size());
    long long total = 0;
    for (int g = min_distance_; g <= e.max_gap; ++g) total += count - g;
    return total;
  }
  return 0;
}

PairBatch PairSampler::sample(int batch_size, std::mt19937_64& rng) const {
  RULKIT_CHECK(batch_size >= 1, "pair sampler: batch size must be >= 1, got " << batch_size);
  std::uniform_int_distribution<std::size_t> pick_engine(0, engines_.size() - 1);

  PairBatch batch;
  batch.pairs.reserve(static_cast<std::size_t>(batch_size));
  std::vector<const Frame*> anchors, partners;
  anchors.reserve(static_cast<std::size_t>(batch_size));
  partners.reserve(static_cast<std::size_t>(batch_size));
  batch.targets.resize(batch_size);

  for (int b = 0; b < batch_size; ++b) {
    const Engine& e = engines_[pick_engine(rng)];
    const long long count = static_cast<long long>(e.frames.size());
    // Draw the gap g with weight (count - g) — the number of (i, j) pairs at
    // that gap — then the anchor uniformly; the result is uniform over all
    // admissible pairs of this engine.
    long long total = 0;
    for (int g = min_distance_; g <= e.max_gap; ++g) total += count - g;
    std::uniform_int_distribution<long long> pick(0, total - 1);
    long long ticket = pick(rng);
    int gap = min_distance_;
    while (ticket >= count - gap) {
      ticket -= count - gap;
      ++gap;
    }
    const int a = static_cast<int>(ticket);  // anchor offset within the engine
    const Frame* fi = e.frames[static_cast<std::size_t>(a)];
    const Frame* fj = e.frames[static_cast<std::size_t>(a + gap)];
    anchors.push_back(fi);
    partners.push_back(fj);
    batch.targets(b) = relative_rul_target(fi->end_index, fj->end_index, rul_max_);
    batch.pairs.push_back({e.id, fi->end_index, fj->end_index});
  }

  auto stack = [](const std::vector<const Frame*>& fs) {
    std::vector<Frame> copies;
    copies.reserve(fs.size());
    for (const Frame* f : fs) copies.push_back(*f);
    return frames_to_tensor(copies);
  };
  batch.anchors = stack(anchors);
  batch.partners = stack(partners);
  return batch;
}

PairBatch validation_pairs(const std::vector<Frame>& validation_frames, int count,
                           int min_distance, double rul_max, std::uint64_t seed) {
  RULKIT_CHECK(count >= 1, "validation_pairs: count must be >= 1, got " << count);
  PairSampler sampler(validation_frames, min_distance, rul_max);
  std::mt19937_64 rng(seed);
  return sampler.sample(count, rng);
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

void write_scenario_manifest(const std::filesystem::path& path, const ScenarioSplit& split,
                             const SeriesSet& source) {
  nlohmann::json j;
  j["subset"] = source.subset;
  j["percent_labeled"] = split.scenario.percent_labeled;
  j["grade"] = split.scenario.grade;
  j["seed"] = split.scenario.seed;
  std::vector<int> labeled_ids;
  for (const auto& s : split.labeled.series) labeled_ids.push_back(s.id);
  j["labeled_engines"] = labeled_ids;
  nlohmann::json trunc = nlohmann::json::object();
  for (const auto& s : split.unlabeled.series) {
    const EngineSeries* src = source.find(s.id);
    nlohmann::json t;
    t["kept"] = s.length();
    t["source_length"] = src ? src->length() : -1;
    trunc[std::to_string(s.id)] = std::move(t);
  }
  j["truncations"] = std::move(trunc);

  std::ofstream out(path);
  if (!out) throw IoError("write_scenario_manifest: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace rulkit
