#include "rulkit/checkpoint.hpp"

#include <fstream>

namespace rulkit {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json j;
  j["version"] = ckpt.version;
  j["meta"] = ckpt.meta;
  json params = json::object();
  for (const auto& [name, p] : ckpt.params) {
    RULKIT_CHECK(p.defined(), "save_checkpoint: parameter '" << name << "' is undefined");
    json entry;
    entry["shape"] = p.shape();
    entry["trainable"] = p.requires_grad();
    entry["data"] = std::vector<double>(p.value().data(), p.value().data() + p.size());
    params[name] = std::move(entry);
  }
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open " + path.string() + " for writing");
  out << j.dump();
  out << '\n';
  if (!out) throw IoError("save_checkpoint: write to " + path.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("load_checkpoint: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.contains("version"))
    throw ParseError("load_checkpoint: " + path.string() + " has no version field");
  Checkpoint ckpt;
  ckpt.version = j["version"].get<int>();
  if (ckpt.version != kCheckpointVersion)
    throw ParseError("load_checkpoint: unsupported checkpoint version " +
                     std::to_string(ckpt.version) + " in " + path.string());
  ckpt.meta = j.value("meta", json::object());
  if (!j.contains("params") || !j["params"].is_object())
    throw ParseError("load_checkpoint: " + path.string() + " has no params object");
  for (const auto& [name, entry] : j["params"].items()) {
    if (!entry.contains("shape") || !entry.contains("data"))
      throw ParseError("load_checkpoint: parameter '" + name + "' is missing shape or data");
    Shape shape = entry["shape"].get<Shape>();
    auto data = entry["data"].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != shape_size(shape))
      throw ParseError("load_checkpoint: parameter '" + name + "' has " +
                       std::to_string(data.size()) + " values but shape " + shape_str(shape));
    Vec v = Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
    ckpt.params[name] = Tensor::from(std::move(shape), std::move(v), entry.value("trainable", true));
  }
  return ckpt;
}

}  // namespace rulkit
