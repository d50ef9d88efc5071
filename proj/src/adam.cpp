#include "rulkit/adam.hpp"

#include <cmath>

namespace rulkit {

Adam::Adam(ParamMap params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  RULKIT_CHECK(!params_.empty(), "Adam: no parameters to optimize");
  RULKIT_CHECK(cfg_.lr > 0.0, "Adam: learning rate must be positive, got " << cfg_.lr);
  RULKIT_CHECK(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0,
               "Adam: beta1 must be in [0,1), got " << cfg_.beta1);
  RULKIT_CHECK(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0,
               "Adam: beta2 must be in [0,1), got " << cfg_.beta2);
  for (auto& [name, p] : params_) {
    RULKIT_CHECK(p.defined() && p.requires_grad(),
                 "Adam: parameter '" << name << "' does not require gradients");
    m_[name] = Vec::Zero(p.size());
    v_[name] = Vec::Zero(p.size());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params_) {
    if (!p.has_grad())
      throw ValueError("Adam: parameter '" + name + "' has no gradient; run backward() first");
    const Vec& g = p.grad();
    Vec& m = m_[name];
    Vec& v = v_[name];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Vec m_hat = m / bc1;
    const Vec v_hat = v / bc2;
    p.value() -= cfg_.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace rulkit
