#include "rulkit/cmapss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace rulkit {

using nlohmann::json;

std::string role_name(SetRole role) {
  switch (role) {
    case SetRole::train: return "train";
    case SetRole::test: return "test";
    case SetRole::validation: return "validation";
  }
  throw ValueError("unknown set role");
}

namespace {

SetRole role_from_name(const std::string& name) {
  if (name == "train") return SetRole::train;
  if (name == "test") return SetRole::test;
  if (name == "validation") return SetRole::validation;
  throw ParseError("unknown set role '" + name + "'");
}

}  // namespace

const EngineSeries* SeriesSet::find(int engine_id) const {
  for (const auto& s : series)
    if (s.id == engine_id) return &s;
  return nullptr;
}

// ---------------------------------------------------------------------------
// parsing / writing
// ---------------------------------------------------------------------------

SeriesSet parse_cmapss(std::istream& in, std::string subset, SetRole role) {
  constexpr int kColumns = 26;  // id, cycle, 3 settings, 21 sensors
  struct Row {
    int cycle;
    std::array<double, 3> settings;
    std::array<double, 21> sensors;
  };
  std::map<int, std::vector<Row>> engines;
  std::vector<int> id_order;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> cols;
    double v;
    while (ls >> v) cols.push_back(v);
    if (cols.empty()) continue;  // blank line
    if (static_cast<int>(cols.size()) != kColumns)
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(kColumns) + " columns, got " +
                       std::to_string(cols.size()));
    const int id = static_cast<int>(cols[0]);
    Row row;
    row.cycle = static_cast<int>(cols[1]);
    for (int i = 0; i < 3; ++i) row.settings[static_cast<std::size_t>(i)] = cols[2 + i];
    for (int i = 0; i < 21; ++i) row.sensors[static_cast<std::size_t>(i)] = cols[5 + i];
    auto [it, fresh] = engines.try_emplace(id);
    if (fresh) id_order.push_back(id);
    it->second.push_back(row);
  }

  SeriesSet set;
  set.subset = std::move(subset);
  set.role = role;
  for (int id : id_order) {
    auto& rows = engines.at(id);
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return a.cycle < b.cycle;
    });
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].cycle != static_cast<int>(i) + 1)
        throw ParseError("engine " + std::to_string(id) + ": cycles are not contiguous from 1 (" +
                         "found cycle " + std::to_string(rows[i].cycle) + " at position " +
                         std::to_string(i + 1) + ")");
    EngineSeries s;
    s.id = id;
    const int t = static_cast<int>(rows.size());
    s.readings.resize(t, 21);
    s.op_settings.resize(t, 3);
    for (int r = 0; r < t; ++r) {
      for (int c = 0; c < 3; ++c) s.op_settings(r, c) = rows[static_cast<std::size_t>(r)].settings[static_cast<std::size_t>(c)];
      for (int c = 0; c < 21; ++c) s.readings(r, c) = rows[static_cast<std::size_t>(r)].sensors[static_cast<std::size_t>(c)];
    }
    set.series.push_back(std::move(s));
  }
  return set;
}

SeriesSet parse_cmapss_file(const std::filesystem::path& path, std::string subset, SetRole role) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_cmapss(in, std::move(subset), role);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<double> parse_rul(std::istream& in) {
  std::vector<double> ruls;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    double v;
    if (!(ls >> v)) {
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      throw ParseError("line " + std::to_string(line_no) + ": expected one numeric RUL value");
    }
    ruls.push_back(v);
  }
  return ruls;
}

std::vector<double> parse_rul_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_rul(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void attach_test_rul(SeriesSet& test, const std::vector<double>& ruls) {
  RULKIT_CHECK(test.role == SetRole::test, "attach_test_rul: set role must be test");
  RULKIT_CHECK(ruls.size() == test.series.size(),
               "attach_test_rul: " << ruls.size() << " RUL values for " << test.series.size()
                                   << " test engines");
  test.test_rul.clear();
  for (std::size_t i = 0; i < ruls.size(); ++i) {
    RULKIT_CHECK(ruls[i] >= 0.0, "attach_test_rul: negative RUL " << ruls[i] << " at entry "
                                                                  << (i + 1));
    test.test_rul[test.series[i].id] = ruls[i];
  }
}

void write_cmapss(std::ostream& out, const SeriesSet& set) {
  out << std::setprecision(17);
  for (const auto& s : set.series) {
    RULKIT_CHECK(s.channels() == 21,
                 "write_cmapss: engine " << s.id << " has " << s.channels()
                                         << " channels, expected the 21-sensor layout");
    for (int r = 0; r < s.length(); ++r) {
      out << s.id << ' ' << (r + 1);
      for (int c = 0; c < 3; ++c) out << ' ' << s.op_settings(r, c);
      for (int c = 0; c < 21; ++c) out << ' ' << s.readings(r, c);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

SeriesSet select_channels(const SeriesSet& set) {
  SeriesSet out;
  out.subset = set.subset;
  out.role = set.role;
  out.test_rul = set.test_rul;
  out.series.reserve(set.series.size());
  for (const auto& s : set.series) {
    RULKIT_CHECK(s.channels() == 21, "select_channels: engine "
                                         << s.id << " has " << s.channels()
                                         << " channels, expected 21 sensors");
    EngineSeries sel;
    sel.id = s.id;
    sel.op_settings = s.op_settings;
    sel.labels = s.labels;
    sel.readings.resize(s.length(), static_cast<int>(kSelectedSensors.size()));
    for (std::size_t c = 0; c < kSelectedSensors.size(); ++c)
      sel.readings.col(static_cast<int>(c)) = s.readings.col(kSelectedSensors[c] - 1);
    out.series.push_back(std::move(sel));
  }
  return out;
}

Scaler fit_scaler(const SeriesSet& train) {
  RULKIT_CHECK(train.role == SetRole::train, "fit_scaler: expected a training set, got role "
                                                 << role_name(train.role));
  RULKIT_CHECK(!train.series.empty(), "fit_scaler: empty set");
  const int c = train.series.front().channels();
  Scaler scaler;
  scaler.ch_min = Vec::Constant(c, std::numeric_limits<double>::infinity());
  scaler.ch_max = Vec::Constant(c, -std::numeric_limits<double>::infinity());
  for (const auto& s : train.series) {
    RULKIT_CHECK_SHAPE(s.channels() == c, "fit_scaler: engine " << s.id << " has "
                                              << s.channels() << " channels, expected " << c);
    scaler.ch_min = scaler.ch_min.cwiseMin(s.readings.colwise().minCoeff().transpose());
    scaler.ch_max = scaler.ch_max.cwiseMax(s.readings.colwise().maxCoeff().transpose());
  }
  scaler.constant.resize(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    scaler.constant[static_cast<std::size_t>(i)] = scaler.ch_max(i) == scaler.ch_min(i);
    if (scaler.constant[static_cast<std::size_t>(i)])
      warn("fit_scaler: channel " + std::to_string(i) + " is constant (" +
           std::to_string(scaler.ch_min(i)) + "); it will map to 0");
  }
  return scaler;
}

SeriesSet apply_scaler(const SeriesSet& set, const Scaler& scaler) {
  SeriesSet out;
  out.subset = set.subset;
  out.role = set.role;
  out.test_rul = set.test_rul;
  out.series.reserve(set.series.size());
  for (const auto& s : set.series) {
    RULKIT_CHECK_SHAPE(s.channels() == scaler.channels(),
                       "apply_scaler: engine " << s.id << " has " << s.channels()
                                               << " channels, scaler expects "
                                               << scaler.channels());
    EngineSeries scaled = s;
    for (int c = 0; c < scaler.channels(); ++c) {
      if (scaler.constant[static_cast<std::size_t>(c)]) {
        scaled.readings.col(c).setZero();
      } else {
        const double lo = scaler.ch_min(c), hi = scaler.ch_max(c);
        scaled.readings.col(c) = (s.readings.col(c).array() - lo) / (hi - lo);
      }
    }
    out.series.push_back(std::move(scaled));
  }
  return out;
}

std::vector<double> piecewise_rul_labels(int length, double rul_max) {
  RULKIT_CHECK(length >= 1, "piecewise_rul_labels: length must be >= 1, got " << length);
  RULKIT_CHECK(rul_max > 0.0, "piecewise_rul_labels: rul_max must be positive");
  std::vector<double> labels(static_cast<std::size_t>(length));
  for (int i = 1; i <= length; ++i)
    labels[static_cast<std::size_t>(i - 1)] = std::min(rul_max, static_cast<double>(length - i));
  return labels;
}

void label_series(SeriesSet& set, double rul_max) {
  for (auto& s : set.series) s.labels = piecewise_rul_labels(s.length(), rul_max);
}

std::vector<Frame> make_windows(const EngineSeries& series, int w, int step) {
  RULKIT_CHECK(w >= 1, "make_windows: window must be >= 1, got " << w);
  RULKIT_CHECK(step >= 1, "make_windows: step must be >= 1, got " << step);
  std::vector<Frame> frames;
  if (series.length() < w) {
    warn("make_windows: engine " + std::to_string(series.id) + " has " +
         std::to_string(series.length()) + " steps, shorter than window " + std::to_string(w) +
         "; skipped");
    return frames;
  }
  const bool labeled = !series.labels.empty();
  for (int end = w; end <= series.length(); end += step) {
    Frame f;
    f.engine_id = series.id;
    f.end_index = end;
    f.values = series.readings.middleRows(end - w, w);
    if (labeled) {
      f.label = series.labels[static_cast<std::size_t>(end - 1)];
      f.has_label = true;
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<Frame> make_windows(const SeriesSet& set, int w, int step) {
  std::vector<Frame> frames;
  for (const auto& s : set.series) {
    auto fs = make_windows(s, w, step);
    frames.insert(frames.end(), std::make_move_iterator(fs.begin()),
                  std::make_move_iterator(fs.end()));
  }
  return frames;
}

std::pair<SeriesSet, SeriesSet> split_validation(const SeriesSet& train, double fraction,
                                                 std::uint64_t seed) {
  RULKIT_CHECK(train.role == SetRole::train, "split_validation: expected a training set");
  RULKIT_CHECK(fraction > 0.0 && fraction < 1.0,
               "split_validation: fraction must be in (0,1), got " << fraction);
  const int n = static_cast<int>(train.series.size());
  RULKIT_CHECK(n >= 2, "split_validation: need at least 2 series, got " << n);
  const int n_val = static_cast<int>(std::floor(n * fraction));
  RULKIT_CHECK(n_val >= 1, "split_validation: fraction " << fraction << " of " << n
                                                         << " series leaves an empty validation set");

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_val(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_val; ++i) is_val[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;

  SeriesSet rest, val;
  rest.subset = val.subset = train.subset;
  rest.role = SetRole::train;
  val.role = SetRole::validation;
  for (int i = 0; i < n; ++i) {
    (is_val[static_cast<std::size_t>(i)] ? val : rest)
        .series.push_back(train.series[static_cast<std::size_t>(i)]);
  }
  return {std::move(rest), std::move(val)};
}

int default_window(const std::string& subset) {
  if (subset == "FD001") return 30;
  if (subset == "FD002") return 20;
  if (subset == "FD003") return 30;
  if (subset == "FD004") return 15;
  return 30;
}

// ---------------------------------------------------------------------------
// dataset archive
// ---------------------------------------------------------------------------

namespace {

json mat_to_json(const Mat& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  j["data"] = std::move(flat);
  return j;
}

Mat mat_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw ParseError("matrix data length " + std::to_string(flat.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json set_to_json(const SeriesSet& set) {
  json j;
  j["subset"] = set.subset;
  j["role"] = role_name(set.role);
  json series = json::array();
  for (const auto& s : set.series) {
    json e;
    e["id"] = s.id;
    e["readings"] = mat_to_json(s.readings);
    e["op_settings"] = mat_to_json(s.op_settings);
    if (!s.labels.empty()) e["labels"] = s.labels;
    series.push_back(std::move(e));
  }
  j["series"] = std::move(series);
  if (!set.test_rul.empty()) {
    json rul = json::object();
    for (const auto& [id, v] : set.test_rul) rul[std::to_string(id)] = v;
    j["test_rul"] = std::move(rul);
  }
  return j;
}

SeriesSet set_from_json(const json& j) {
  SeriesSet set;
  set.subset = j.at("subset").get<std::string>();
  set.role = role_from_name(j.at("role").get<std::string>());
  for (const auto& e : j.at("series")) {
    EngineSeries s;
    s.id = e.at("id").get<int>();
    s.readings = mat_from_json(e.at("readings"));
    s.op_settings = mat_from_json(e.at("op_settings"));
    if (e.contains("labels")) s.labels = e["labels"].get<std::vector<double>>();
    set.series.push_back(std::move(s));
  }
  if (j.contains("test_rul"))
    for (const auto& [key, v] : j["test_rul"].items())
      set.test_rul[std::stoi(key)] = v.get<double>();
  return set;
}

}  // namespace

void save_archive(const std::filesystem::path& path, const DatasetArchive& archive) {
  json j;
  j["version"] = archive.version;
  j["subset"] = archive.subset;
  j["window"] = archive.window;
  j["rul_max"] = archive.rul_max;
  j["scaler"]["min"] = std::vector<double>(archive.scaler.ch_min.data(),
                                           archive.scaler.ch_min.data() + archive.scaler.channels());
  j["scaler"]["max"] = std::vector<double>(archive.scaler.ch_max.data(),
                                           archive.scaler.ch_max.data() + archive.scaler.channels());
  j["scaler"]["constant"] = archive.scaler.constant;
  j["train"] = set_to_json(archive.train);
  j["validation"] = set_to_json(archive.validation);
  j["test"] = set_to_json(archive.test);

  std::ofstream out(path);
  if (!out) throw IoError("save_archive: cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("save_archive: write to " + path.string() + " failed");
}

DatasetArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_archive: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("load_archive: " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    DatasetArchive a;
    a.version = j.at("version").get<int>();
    if (a.version != 1)
      throw ParseError("load_archive: unsupported archive version " + std::to_string(a.version));
    a.subset = j.at("subset").get<std::string>();
    a.window = j.at("window").get<int>();
    a.rul_max = j.at("rul_max").get<double>();
    const auto mins = j.at("scaler").at("min").get<std::vector<double>>();
    const auto maxs = j.at("scaler").at("max").get<std::vector<double>>();
    a.scaler.ch_min = Eigen::Map<const Vec>(mins.data(), static_cast<Eigen::Index>(mins.size()));
    a.scaler.ch_max = Eigen::Map<const Vec>(maxs.data(), static_cast<Eigen::Index>(maxs.size()));
    a.scaler.constant = j.at("scaler").at("constant").get<std::vector<bool>>();
    a.train = set_from_json(j.at("train"));
    a.validation = set_from_json(j.at("validation"));
    a.test = set_from_json(j.at("test"));
    return a;
  } catch (const json::exception& e) {
    throw ParseError("load_archive: " + path.string() + ": " + e.what());
  }
}

Tensor frames_to_tensor(const std::vector<Frame>& frames) {
  RULKIT_CHECK(!frames.empty(), "frames_to_tensor: no frames");
  const int w = static_cast<int>(frames.front().values.rows());
  const int c = static_cast<int>(frames.front().values.cols());
  const int n = static_cast<int>(frames.size());
  Vec data(static_cast<Eigen::Index>(n) * c * w);
  for (int ni = 0; ni < n; ++ni) {
    const Mat& v = frames[static_cast<std::size_t>(ni)].values;
    RULKIT_CHECK_SHAPE(v.rows() == w && v.cols() == c,
                       "frames_to_tensor: frame " << ni << " is " << v.rows() << "x" << v.cols()
                                                  << ", expected " << w << "x" << c);
    for (int ci = 0; ci < c; ++ci)
      for (int t = 0; t < w; ++t)
        data((static_cast<Eigen::Index>(ni) * c + ci) * w + t) = v(t, ci);
  }
  return Tensor::from({n, c, w}, std::move(data));
}

Tensor frame_labels(const std::vector<Frame>& frames) {
  RULKIT_CHECK(!frames.empty(), "frame_labels: no frames");
  Vec labels(static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    RULKIT_CHECK(frames[i].has_label, "frame_labels: frame " << i << " (engine "
                                                             << frames[i].engine_id
                                                             << ") has no label");
    labels(static_cast<Eigen::Index>(i)) = frames[i].label;
  }
  return Tensor::from({static_cast<int>(frames.size())}, std::move(labels));
}

}  // namespace rulkit
