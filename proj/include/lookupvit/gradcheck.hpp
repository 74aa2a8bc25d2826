#pragma once

// Central finite-difference gradient checking for tape-built losses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lookupvit/tape.hpp"

namespace lookupvit {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_tensor = 1000;
  /// Gradients smaller than this are compared absolutely rather than relatively.
  double magnitude_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "<tensor>[<index>] analytic=... numeric=..."

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>*>>;

/// `loss_fn` builds a scalar loss on the tape it is given, binding every tensor in
/// `inputs` with tape.param(). Each tensor is perturbed in place (and restored).
inline GradCheckResult check_gradients(const NamedTensors& inputs,
                                       const std::function<Var<double>(Tape<double>&)>& loss_fn,
                                       const GradCheckOptions& opts = {}) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    Var<double> loss = loss_fn(tape);
    tape.backward(loss);
    for (const auto& [name, t] : inputs) analytic.push_back(tape.param_grad(*t));
  }
  auto eval = [&] {
    Tape<double> tape;
    return loss_fn(tape).value()[0];
  };

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& [name, tensor] = inputs[ti];
    std::vector<std::size_t> coords(tensor->numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_tensor);
    }
    for (std::size_t idx : coords) {
      double& x = (*tensor)[idx];
      const double saved = x;
      x = saved + opts.step;
      const double up = eval();
      x = saved - opts.step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[ti][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = name + "[" + std::to_string(idx) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace lookupvit
