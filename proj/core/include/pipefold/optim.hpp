#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pipefold/tensor.hpp"

namespace pipefold {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers are keyed by position in the
// parameter list, which must stay stable across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  // One update over named parameters. Every parameter must carry a gradient;
  // a missing one raises OptimError naming the parameter. Gradients are
  // cleared after the update.
  void step(std::vector<std::pair<std::string, Tensor>>& params);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

// Clears gradients on a parameter list.
void zero_grads(std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace pipefold
