#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "rulkit/cmapss.hpp"

namespace rulkit {

// A semi-supervised data scenario: how many engines keep their labels, and
// how far the remaining (unlabeled) engines are allowed to degrade before
// their series are cut off.
struct DataScenario {
  int percent_labeled = 100;  // grid default {2,10,20,40,100}; any 1..100 accepted
  int grade = 0;              // grid default {40,60,70,80,90}; ignored at 100% labeled
  std::uint64_t seed = 0;     // controls which engines keep labels
};

struct ScenarioSplit {
  SeriesSet labeled;    // full run-to-failure series, labels kept
  SeriesSet unlabeled;  // strict prefixes, labels withheld
  DataScenario scenario;
};

// Selects max(1, floor(percent*n/100)) labeled engines under the scenario
// seed, then truncates every other engine to floor(grade*|k|/100) steps.
// Labeled selection depends only on (input set, percent, seed) — never on
// grade — so one seed yields one split across methods and grades.
ScenarioSplit apply_scenario(const SeriesSet& train, const DataScenario& scenario);

// r = (j - i) / rul_max for two end indices of the same engine.
// Requires i < j and j - i <= rul_max.
double relative_rul_target(int i, int j, double rul_max = kRulMax);

// One siamese training batch: paired windows and their relative-RUL targets.
struct PairBatch {
  Tensor anchors;   // [N, C, w]
  Tensor partners;  // [N, C, w]
  Vec targets;      // r in (0, 1]

  struct Pair {
    int engine_id;
    int i, j;  // end indices, i < j
  };
  std::vector<Pair> pairs;

  int size() const { return static_cast<int>(pairs.size()); }
};

// Samples pairs (i, j) of window end indices within one engine, uniformly
// over all admissible pairs with min_distance <= j - i <= rul_max, after a
// uniform choice among engines that admit at least one pair.
class PairSampler {
 public:
  PairSampler(std::vector<Frame> frames, int min_distance, double rul_max = kRulMax);

  int eligible_engines() const { return static_cast<int>(engines_.size()); }
  // Total admissible pairs for one engine (enumeration-oracle surface).
  long long admissible_pairs(int engine_id) const;

  PairBatch sample(int batch_size, std::mt19937_64& rng) const;

 private:
  struct Engine {
    int id = 0;
    int first_end = 0;                  // smallest window end index
    std::vector<const Frame*> frames;   // contiguous by end index
    int max_gap = 0;                    // min(count - 1, floor(rul_max))
  };
  std::vector<Frame> frames_;
  std::vector<Engine> engines_;
  int min_distance_;
  double rul_max_;
};

// Frozen-seed pair batch over the validation engines, so the monitored
// pre-training loss is computed on the same pairs every epoch.
PairBatch validation_pairs(const std::vector<Frame>& validation_frames, int count,
                           int min_distance, double rul_max, std::uint64_t seed);

// Audit record: scenario parameters, chosen labeled engines, and per-engine
// truncation lengths. Written alongside experiment results.
void write_scenario_manifest(const std::filesystem::path& path, const ScenarioSplit& split,
                             const SeriesSet& source);

}  // namespace rulkit
