#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rulkit/tensor.hpp"

namespace rulkit {

// Label cap of the piecewise-linear degradation model, in cycles.
inline constexpr double kRulMax = 125.0;

// 1-based sensor numbers retained after channel selection, in this order.
inline constexpr std::array<int, 14> kSelectedSensors = {2,  3,  4,  7,  8,  9,  11,
                                                         12, 13, 14, 15, 17, 20, 21};

enum class SetRole { train, test, validation };

std::string role_name(SetRole role);

// One run-to-failure (or truncated) engine recording. Rows are time steps.
struct EngineSeries {
  int id = 0;
  Mat readings;             // [T, C] sensor values
  Mat op_settings;          // [T, 3], retained for provenance
  std::vector<double> labels;  // per-step RUL; empty when withheld/unknown

  int length() const { return static_cast<int>(readings.rows()); }
  int channels() const { return static_cast<int>(readings.cols()); }
};

struct SeriesSet {
  std::string subset;  // FD001..FD004 or a synthetic corpus name
  SetRole role = SetRole::train;
  std::vector<EngineSeries> series;
  std::map<int, double> test_rul;  // true RUL at last step; test role only

  const EngineSeries* find(int engine_id) const;
};

// Per-channel min/max fitted on a training set.
struct Scaler {
  Vec ch_min, ch_max;
  std::vector<bool> constant;  // channels with max == min map to 0

  int channels() const { return static_cast<int>(ch_min.size()); }
};

// A sliding window ending at step `end_index` (1-based, inclusive).
struct Frame {
  int engine_id = 0;
  int end_index = 0;
  Mat values;  // [w, C]
  double label = 0.0;
  bool has_label = false;
};

// ---------------------------------------------------------------------------
// parsing / writing (public CMAPSS space-separated layout)
// ---------------------------------------------------------------------------

// Rows: engine-id, cycle, 3 op-settings, 21 sensors. Rows are grouped per
// engine, ordered by cycle; cycles must be contiguous from 1.
SeriesSet parse_cmapss(std::istream& in, std::string subset, SetRole role);
SeriesSet parse_cmapss_file(const std::filesystem::path& path, std::string subset, SetRole role);

// One true-RUL value per line, ordered like the test file's engines.
std::vector<double> parse_rul(std::istream& in);
std::vector<double> parse_rul_file(const std::filesystem::path& path);

void attach_test_rul(SeriesSet& test, const std::vector<double>& ruls);

// Inverse of parse_cmapss, full double precision. Requires 21 sensor
// channels (pre-selection layout).
void write_cmapss(std::ostream& out, const SeriesSet& set);

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

SeriesSet select_channels(const SeriesSet& set);

// Fit on the post-split training portion only.
Scaler fit_scaler(const SeriesSet& train);
// (v - min) / (max - min); values outside the fitted range are NOT clipped.
SeriesSet apply_scaler(const SeriesSet& set, const Scaler& scaler);

// label(i) = min(rul_max, length - i) for i = 1..length; last step labels 0.
std::vector<double> piecewise_rul_labels(int length, double rul_max = kRulMax);
void label_series(SeriesSet& set, double rul_max = kRulMax);

// All windows of width w at stride `step`; |k| - w + 1 frames for step 1.
// Series shorter than w are skipped with a warning.
std::vector<Frame> make_windows(const EngineSeries& series, int w, int step = 1);
std::vector<Frame> make_windows(const SeriesSet& set, int w, int step = 1);

// Engine-level split; floor(n * fraction) series go to validation.
std::pair<SeriesSet, SeriesSet> split_validation(const SeriesSet& train, double fraction,
                                                 std::uint64_t seed);

// Per-subset window widths (FD001..FD004); other names default to 30.
int default_window(const std::string& subset);

// ---------------------------------------------------------------------------
// dataset archive
// ---------------------------------------------------------------------------

// Canonical prepared dataset: selected, split, scaled, and labeled, with the
// scaler and window configuration that produced it.
struct DatasetArchive {
  int version = 1;
  std::string subset;
  int window = 30;
  double rul_max = kRulMax;
  Scaler scaler;
  SeriesSet train;       // train' (post validation split), labeled
  SeriesSet validation;  // labeled
  SeriesSet test;        // with test_rul attached
};

void save_archive(const std::filesystem::path& path, const DatasetArchive& archive);
DatasetArchive load_archive(const std::filesystem::path& path);

// Batched network input [N, C, w] from frames (transposes [w, C] values).
Tensor frames_to_tensor(const std::vector<Frame>& frames);
// Per-frame labels [N]; throws if any frame is unlabeled.
Tensor frame_labels(const std::vector<Frame>& frames);

}  // namespace rulkit
