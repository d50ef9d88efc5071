#include "rulkit/synthetic.hpp"

#include <random>

#include "rulkit/common.hpp"

namespace rulkit {

SeriesSet synthesize_fleet(const SynthConfig& config, SetRole role) {
  RULKIT_CHECK(config.engines >= 1, "synthesize_fleet: need at least one engine");
  RULKIT_CHECK(config.min_length >= 2 && config.min_length <= config.max_length,
               "synthesize_fleet: bad length range [" << config.min_length << ", "
                                                      << config.max_length << "]");
  RULKIT_CHECK(config.noise >= 0.0 && config.offset >= 0.0,
               "synthesize_fleet: noise and offset scales must be non-negative");

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> length_dist(config.min_length, config.max_length);
  std::uniform_real_distribution<double> exponent_dist(0.7, 1.4);
  std::uniform_real_distribution<double> offset_dist(-config.offset, config.offset);
  std::uniform_real_distribution<double> cut_dist(0.3, 0.8);
  std::normal_distribution<double> gauss(0.0, 1.0);

  constexpr int kChannels = 21;
  // 0-based columns of the informative sensors.
  std::vector<bool> informative(kChannels, false);
  for (int s : kSelectedSensors) informative[s - 1] = true;

  SeriesSet set;
  set.subset = config.subset;
  set.role = role;

  for (int e = 0; e < config.engines; ++e) {
    const int length = length_dist(rng);
    const double exponent = exponent_dist(rng);
    Vec offsets(kChannels);
    for (int c = 0; c < kChannels; ++c) offsets[c] = config.offset > 0 ? offset_dist(rng) : 0.0;

    EngineSeries s;
    s.id = e + 1;
    s.readings = Mat(length, kChannels);
    s.op_settings = Mat::Zero(length, 3);
    for (int t = 0; t < length; ++t) {
      const double health = std::pow(static_cast<double>(t) / (length - 1), exponent);
      for (int c = 0; c < kChannels; ++c) {
        double v = 10.0 + c;  // distinct per-channel operating point
        if (informative[c]) {
          const double sign = c % 2 == 0 ? 1.0 : -1.0;
          v += offsets[c] + sign * config.trend * health;
          if (config.noise > 0) v += config.noise * gauss(rng);
        }
        s.readings(t, c) = v;
      }
    }

    // Test fleets stop mid-life; the remaining cycles are the answer key.
    if (role == SetRole::test) {
      const int cut = std::max(2, static_cast<int>(cut_dist(rng) * length));
      set.test_rul[s.id] = static_cast<double>(length - cut);
      s.readings.conservativeResize(cut, kChannels);
      s.op_settings.conservativeResize(cut, 3);
    }
    set.series.push_back(std::move(s));
  }
  return set;
}

}  // namespace rulkit
