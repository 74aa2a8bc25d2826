#pragma once

// Adam, the learning-rate schedule, and the batched training step.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lookupvit/model.hpp"

namespace lookupvit {

template <typename T>
struct Example {
  Tensor<T> x;  // [h x w x c] or [t x h x w x c]
  std::size_t label = 0;
};

/// Linear warmup to `base_lr`, then cosine decay to `min_lr` at `total_steps`.
struct LrSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.05;

  std::size_t warmup_steps() const {
    return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  }

  double at(std::size_t step) const {
    const std::size_t warm = warmup_steps();
    if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    const std::size_t span = total_steps > warm ? total_steps - warm : 1;
    const double progress = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;
};

template <typename T>
std::vector<Tensor<T>*> parameter_list(ModelParams<T>& params) {
  std::vector<Tensor<T>*> out;
  params.visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
AdamState<T> init_adam(const ModelParams<T>& params) {
  AdamState<T> s;
  params.visit([&](const std::string&, const Tensor<T>& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

/// One bias-corrected Adam update of every parameter.
template <typename T>
void adam_update(ModelParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
                 double lr, const AdamOptions& opt = {}) {
  auto list = parameter_list(params);
  if (grads.size() != list.size() || state.m.size() != list.size()) {
    throw ContractError("optimizer state does not match the parameter list");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto p = list[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
      const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps));
    }
  }
}

/// Compressed grid for the next batch: uniform over the configured grids.
inline Grid draw_grid(const ModelConfig& cfg, Rng& rng) {
  if (cfg.compressed_grids.size() == 1) return cfg.compressed_grids.front();
  std::uniform_int_distribution<std::size_t> pick(0, cfg.compressed_grids.size() - 1);
  return cfg.compressed_grids[pick(rng)];
}

struct StepMetrics {
  double loss = 0.0;
  double lr = 0.0;
  std::size_t count = 0;
  std::size_t correct_p = 0, correct_l = 0, correct_avg = 0;
  Grid grid;

  double acc_p() const { return static_cast<double>(correct_p) / static_cast<double>(count); }
  double acc_l() const { return static_cast<double>(correct_l) / static_cast<double>(count); }
  double acc_avg() const { return static_cast<double>(correct_avg) / static_cast<double>(count); }
};

/// Mean joint loss over the batch, then one Adam step. The grid is drawn once per batch.
template <typename T>
StepMetrics train_step(std::span<const Example<T>> batch, ModelParams<T>& params,
                       const ModelConfig& cfg, AdamState<T>& state, Rng& rng, double lr,
                       const AdamOptions& opt = {}) {
  if (batch.empty()) throw ContractError("train_step needs a nonempty batch");
  StepMetrics m;
  m.grid = draw_grid(cfg, rng);
  m.lr = lr;
  auto list = parameter_list(params);
  std::vector<Tensor<T>> grads;
  grads.reserve(list.size());
  for (auto* p : list) grads.emplace_back(p->shape());

  const T inv = T{1} / static_cast<T>(batch.size());
  for (const auto& ex : batch) {
    Tape<T> tape;
    auto out = forward(tape, ex.x, params, cfg, m.grid);
    Var<T> l = loss(out.logits_p, out.logits_l, ex.label, cfg);
    const double lv = l.value()[0];
    if (!std::isfinite(lv)) {
      throw NumericError("non-finite loss at optimizer step " + std::to_string(state.step) +
                         " (grid " + m.grid.str() + ", label " + std::to_string(ex.label) + ")");
    }
    m.loss += lv / static_cast<double>(batch.size());
    tape.backward(l);
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!tape.has_param(*list[i])) continue;
      const Tensor<T> g = tape.param_grad(*list[i]);
      auto acc = grads[i].data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += inv * g[j];
    }
    const auto& lp = out.logits_p.value();
    const auto& ll = out.logits_l.value();
    m.correct_p += argmax(lp) == ex.label;
    m.correct_l += argmax(ll) == ex.label;
    m.correct_avg += predict(lp, ll) == ex.label;
    ++m.count;
  }
  adam_update(params, grads, state, lr, opt);
  return m;
}

struct EvalMetrics {
  Grid grid;
  double loss = 0.0;
  double acc_p = 0.0, acc_l = 0.0, acc_avg = 0.0;
  std::size_t count = 0;
};

template <typename T>
EvalMetrics evaluate(std::span<const Example<T>> data, const ModelParams<T>& params,
                     const ModelConfig& cfg, const Grid& grid) {
  if (data.empty()) throw ContractError("evaluate needs at least one example");
  EvalMetrics e;
  e.grid = grid;
  std::size_t cp = 0, cl = 0, ca = 0;
  for (const auto& ex : data) {
    Tape<T> tape;
    auto out = forward(tape, ex.x, params, cfg, grid);
    e.loss += loss(out.logits_p, out.logits_l, ex.label, cfg).value()[0];
    const auto& lp = out.logits_p.value();
    const auto& ll = out.logits_l.value();
    cp += argmax(lp) == ex.label;
    cl += argmax(ll) == ex.label;
    ca += predict(lp, ll) == ex.label;
  }
  const double n = static_cast<double>(data.size());
  e.count = data.size();
  e.loss /= n;
  e.acc_p = static_cast<double>(cp) / n;
  e.acc_l = static_cast<double>(cl) / n;
  e.acc_avg = static_cast<double>(ca) / n;
  return e;
}

}  // namespace lookupvit
