#pragma once

#include <map>
#include <string>

#include "rulkit/tensor.hpp"

namespace rulkit {

// Named parameter collection. std::map keeps iteration order stable, which
// makes optimizer updates and checkpoints deterministic.
using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters are shared handles: step() writes
// through to the tensors the model holds.
class Adam {
 public:
  explicit Adam(ParamMap params, AdamConfig cfg = {});

  // One update from the gradients currently in the parameter buffers.
  // Throws if a parameter has never received a gradient.
  void step();

  void zero_grad();

  long long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamMap params_;
  AdamConfig cfg_;
  std::map<std::string, Vec> m_, v_;
  long long t_ = 0;
};

}  // namespace rulkit
