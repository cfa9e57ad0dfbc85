#include "pipefold/optim.hpp"

#include <cmath>

#include "pipefold/errors.hpp"

namespace pipefold {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (cfg.lr <= 0.f || cfg.beta1 < 0.f || cfg.beta1 >= 1.f || cfg.beta2 < 0.f ||
      cfg.beta2 >= 1.f || cfg.eps <= 0.f)
    throw ValueError("Adam: invalid hyperparameters");
}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i].second.size()), 0.f);
      v_[i].assign(static_cast<std::size_t>(params[i].second.size()), 0.f);
    }
  } else if (m_.size() != params.size()) {
    throw OptimError("Adam: parameter list size changed between steps");
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    if (m_[i].size() != static_cast<std::size_t>(p.size()))
      throw OptimError("Adam: shape of parameter '" + name + "' changed between steps");
    if (!p.has_grad()) throw OptimError("Adam: missing gradient for parameter '" + name + "'");
    auto g = p.grad();
    auto data = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.f - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.f - cfg_.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      data[j] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
    p.zero_grad();
  }
}

void zero_grads(std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace pipefold
