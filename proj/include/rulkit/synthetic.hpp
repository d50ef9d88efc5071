#pragma once

#include "rulkit/cmapss.hpp"

namespace rulkit {

// Synthetic run-to-failure fleets in the 21-sensor layout. Each selected
// sensor channel carries a monotone degradation trend (per-engine exponent),
// shifted by a per-engine nuisance offset and iid Gaussian noise; the
// remaining channels stay constant. With offsets on, a model fit to very few
// engines latches onto their offsets, while features learned across the
// whole fleet transfer — the regime semi-supervision exploits.
struct SynthConfig {
  int engines = 60;
  int min_length = 60;
  int max_length = 120;
  std::uint64_t seed = 0;
  double trend = 2.0;    // degradation amplitude
  double offset = 1.0;   // per-engine channel offset scale (0: identical engines)
  double noise = 0.05;   // sensor noise sigma (0: clean ramps)
  std::string subset = "SYNTH";
};

SeriesSet synthesize_fleet(const SynthConfig& config, SetRole role = SetRole::train);

}  // namespace rulkit
