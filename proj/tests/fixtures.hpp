#pragma once

#include <random>

#include "rulkit/cmapss.hpp"

// Small synthetic series builders shared across test suites.
namespace testutil {

inline rulkit::EngineSeries random_engine(std::mt19937_64& rng, int id, int length,
                                          int channels = 21) {
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  rulkit::EngineSeries s;
  s.id = id;
  s.readings.resize(length, channels);
  s.op_settings.resize(length, 3);
  for (int r = 0; r < length; ++r) {
    for (int c = 0; c < channels; ++c) s.readings(r, c) = dist(rng);
    for (int c = 0; c < 3; ++c) s.op_settings(r, c) = dist(rng);
  }
  return s;
}

inline rulkit::SeriesSet random_series_set(std::mt19937_64& rng, int engines, int min_len,
                                           int max_len, int channels = 21,
                                           rulkit::SetRole role = rulkit::SetRole::train) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  rulkit::SeriesSet set;
  set.subset = "SYNTH";
  set.role = role;
  for (int i = 1; i <= engines; ++i)
    set.series.push_back(random_engine(rng, i, len(rng), channels));
  return set;
}

}  // namespace testutil
