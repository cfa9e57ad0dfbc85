#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pipefold/rng.hpp"
#include "pipefold/tensor.hpp"

namespace pipefold::test {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& gen, float scale = 0.5f,
                            float min_abs = 0.f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) {
    float x = normal_float(gen) * scale;
    if (min_abs > 0.f && std::fabs(x) < min_abs) x += x >= 0.f ? min_abs : -min_abs;
    v = x;
  }
  return t;
}

// Central finite differences against the analytic gradient of a scalar
// function of the listed inputs. The function runs tape-free for the
// numeric evaluations, so the oracle never exercises the backward path it
// is checking.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckResult grad_check(const std::function<Tensor(Tape*)>& fn,
                                  std::vector<Tensor> inputs, double h = 1e-3,
                                  double atol = 1e-4) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape tape;
  Tensor loss = fn(&tape);
  tape.backward(loss);

  GradCheckResult result;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    Tensor& input = inputs[which];
    auto grad = input.grad();
    for (std::int64_t i = 0; i < input.size(); ++i) {
      const float orig = input.data()[static_cast<std::size_t>(i)];
      input.mutable_data()[static_cast<std::size_t>(i)] = orig + static_cast<float>(h);
      const double f_plus = static_cast<double>(fn(nullptr).item());
      input.mutable_data()[static_cast<std::size_t>(i)] = orig - static_cast<float>(h);
      const double f_minus = static_cast<double>(fn(nullptr).item());
      input.mutable_data()[static_cast<std::size_t>(i)] = orig;

      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double an = grad[static_cast<std::size_t>(i)];
      const double err = std::fabs(an - fd);
      const double rel = err / std::max({atol, std::fabs(an), std::fabs(fd)});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = "input " + std::to_string(which) + " element " + std::to_string(i) +
                       ": analytic " + std::to_string(an) + " vs fd " + std::to_string(fd);
      }
    }
  }
  return result;
}

// Exhaustive minimal edit distance by recursion, for cross-checking the DP
// alignment on short sequences.
inline int brute_force_edits(const std::vector<int>& ref, const std::vector<int>& hyp,
                             std::size_t i = 0, std::size_t j = 0) {
  if (i == ref.size()) return static_cast<int>(hyp.size() - j);
  if (j == hyp.size()) return static_cast<int>(ref.size() - i);
  int best = (ref[i] == hyp[j] ? 0 : 1) + brute_force_edits(ref, hyp, i + 1, j + 1);
  best = std::min(best, 1 + brute_force_edits(ref, hyp, i + 1, j));
  best = std::min(best, 1 + brute_force_edits(ref, hyp, i, j + 1));
  return best;
}

}  // namespace pipefold::test
