#pragma once

// Library side of the command-line tool: training loop, evaluation sweeps,
// attention-map export and the noise-robustness table.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lookupvit/checkpoint.hpp"
#include "lookupvit/config.hpp"
#include "lookupvit/dataset.hpp"
#include "lookupvit/flops.hpp"
#include "lookupvit/optim.hpp"
#include "lookupvit/pgm.hpp"

namespace lookupvit::harness {

inline std::string fmt(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void check_dataset_fits(const Dataset& ds, const ModelConfig& cfg) {
  if (ds.channels != cfg.channels) {
    throw ConfigError("dataset has " + std::to_string(ds.channels) + " channels, model expects " +
                      std::to_string(cfg.channels));
  }
  if (ds.classes != cfg.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.classes) + " classes, model expects " +
                      std::to_string(cfg.num_classes));
  }
  if (cfg.input != Grid{1, ds.height, ds.width}) {
    throw ConfigError("dataset images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                      ", model.input is " + cfg.input.str());
  }
}

struct TrainRow {
  std::size_t step;
  StepMetrics metrics;
};

struct TrainResult {
  std::vector<TrainRow> rows;
  std::vector<std::vector<EvalMetrics>> evals;  // one entry per evaluation, one metric per grid
  std::size_t steps_run = 0;
  bool reached_target = false;
};

inline std::string metrics_csv_header() { return "step,loss,acc_p,acc_l,acc_avg,grid\n"; }

inline std::string metrics_csv_row(const TrainRow& r) {
  return std::to_string(r.step) + ',' + fmt(r.metrics.loss) + ',' + fmt(r.metrics.acc_p(), 4) + ',' +
         fmt(r.metrics.acc_l(), 4) + ',' + fmt(r.metrics.acc_avg(), 4) + ',' + r.metrics.grid.str() +
         '\n';
}

/// Evaluates the model on `data` at every grid.
template <typename T>
std::vector<EvalMetrics> evaluate_grids(std::span<const Example<T>> data, const ModelParams<T>& params,
                                        const ModelConfig& cfg, const std::vector<Grid>& grids) {
  std::vector<EvalMetrics> out;
  for (const Grid& g : grids) out.push_back(evaluate(data, params, cfg, g));
  return out;
}

/// Runs up to train.steps optimizer steps over shuffled minibatches. Every eval_every steps
/// the whole training set is scored at every compressed grid, and training stops once the
/// averaged-head accuracy reaches train.target_accuracy at all of them.
template <typename T>
TrainResult train(const RunConfig& rc, const std::vector<Example<T>>& data, ModelParams<T>& params,
                  const std::function<void(const TrainRow&)>& on_step = {},
                  const std::function<void(std::size_t, const std::vector<EvalMetrics>&)>& on_eval = {}) {
  if (data.empty()) throw ConfigError("training set is empty");
  const ModelConfig& cfg = rc.model;
  const TrainConfig& tc = rc.train;
  const LrSchedule schedule = tc.schedule();
  AdamState<T> state = init_adam(params);
  Rng order_rng(tc.seed);
  Rng grid_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<Example<T>> batch;

  TrainResult res;
  auto check = [&](std::size_t step) {
    auto ev = evaluate_grids<T>(data, params, cfg, cfg.compressed_grids);
    if (on_eval) on_eval(step, ev);
    res.evals.push_back(ev);
    bool ok = true;
    for (const auto& e : ev) ok = ok && e.acc_avg >= tc.target_accuracy;
    return ok;
  };

  for (std::size_t step = 0; step < tc.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(tc.batch_size, data.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    TrainRow row{step, train_step<T>(batch, params, cfg, state, grid_rng, schedule.at(step))};
    if (on_step) on_step(row);
    res.rows.push_back(row);
    res.steps_run = step + 1;
    if (tc.eval_every > 0 && tc.target_accuracy <= 1.0 && (step + 1) % tc.eval_every == 0) {
      if (check(step + 1)) {
        res.reached_target = true;
        break;
      }
    }
  }
  return res;
}

inline std::string eval_csv_header() { return "checkpoint,grid,count,loss,acc_p,acc_l,acc_avg\n"; }

inline std::string eval_csv_row(const std::string& hash, const EvalMetrics& e) {
  return hash + ',' + e.grid.str() + ',' + std::to_string(e.count) + ',' + fmt(e.loss) + ',' +
         fmt(e.acc_p, 4) + ',' + fmt(e.acc_l, 4) + ',' + fmt(e.acc_avg, 4) + '\n';
}

/// One P2 map per layer plus a CSV with one row per layer (layer, then h_l * w_l values).
struct AttentionExport {
  std::vector<std::string> pgm;
  std::string csv;
  Grid lookup;
};

template <typename T>
AttentionExport attention_maps(const ModelParams<T>& params, const ModelConfig& cfg,
                               const Tensor<T>& x, const Grid& grid) {
  if (cfg.ablations.no_lookup_tokens) throw ConfigError("no_lookup_tokens models have no cross-attention");
  Tape<T> tape;
  auto out = forward(tape, x, params, cfg, grid);
  AttentionExport ex;
  ex.lookup = lookup_grid_for(input_grid_of(x), cfg.patch);
  std::ostringstream csv;
  csv << "layer";
  for (std::size_t j = 0; j < ex.lookup.count(); ++j) csv << ",t" << j;
  csv << '\n';
  for (std::size_t layer = 0; layer < out.attention.size(); ++layer) {
    const GrayImage img = attention_map(out.attention[layer].weights.value(), ex.lookup);
    ex.pgm.push_back(write_pgm(img));
    csv << layer;
    for (double v : img.values) csv << ',' << fmt(v, 9);
    csv << '\n';
  }
  ex.csv = csv.str();
  return ex;
}

struct RobustRow {
  int severity;
  double sigma;
  double mean_deviation;
};

/// Mean feature deviation over the first `samples` images for severities 1..5. One
/// standard-normal draw per image is shared by every severity.
template <typename T>
std::vector<RobustRow> robustness(const ModelParams<T>& params, const ModelConfig& cfg,
                                  const std::vector<Example<T>>& data, std::size_t samples,
                                  const Grid& grid, std::uint64_t seed) {
  if (samples == 0 || samples > data.size()) {
    throw ConfigError("robust needs between 1 and " + std::to_string(data.size()) + " samples");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor<T>> clean, noise;
  for (std::size_t i = 0; i < samples; ++i) {
    clean.push_back(extract_features(params, cfg, data[i].x, grid));
    Tensor<T> z(data[i].x.shape());
    for (auto& v : z.data()) v = static_cast<T>(normal(rng));
    noise.push_back(std::move(z));
  }
  std::vector<RobustRow> rows;
  for (int severity = 1; severity <= 5; ++severity) {
    const double sigma = severity_sigma(severity);
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      total += feature_deviation(clean[i],
                                 extract_features(params, cfg, add_noise(data[i].x, noise[i], sigma), grid));
    }
    rows.push_back({severity, sigma, total / static_cast<double>(samples)});
  }
  return rows;
}

inline std::string robust_csv(const std::vector<RobustRow>& rows) {
  std::string s = "severity,sigma,mean_deviation\n";
  for (const auto& r : rows) s += std::to_string(r.severity) + ',' + fmt(r.sigma, 2) + ',' + fmt(r.mean_deviation, 9) + '\n';
  return s;
}

/// B/16 presets at the given image size with grids 3x3, 5x5, 7x7, 10x10.
inline ModelConfig b16_config(std::size_t size) {
  ModelConfig c;
  c.depth = 12;
  c.dim = 768;
  c.heads = 12;
  c.input = Grid{1, size, size};
  c.patch = Grid{1, 16, 16};
  c.compressed_grids = {Grid{1, 3, 3}, Grid{1, 5, 5}, Grid{1, 7, 7}, Grid{1, 10, 10}};
  c.num_classes = 1000;
  return c;
}

inline std::string empirical_csv_header() {
  return "grid,term,analytic_macs,measured_macs\n";
}

/// Per-term analytic vs instrumented MACs for the block stack, plus the neglected bucket.
inline std::string empirical_csv_rows(const flops::EmpiricalReport& rep, const Grid& g, std::uint64_t depth) {
  const auto& a = rep.analytic_per_block;
  const auto& m = rep.measured;
  const std::pair<const char*, std::pair<std::uint64_t, std::uint64_t>> terms[] = {
      {"attention_quadratic", {depth * a.attention_quadratic, m.attention_quadratic}},
      {"attention_cross", {depth * a.attention_cross, m.attention_cross}},
      {"projections", {depth * a.projections, m.projections}},
      {"mlp_compressed", {depth * a.mlp_compressed, m.mlp_compressed}},
      {"mlp_lookup", {depth * a.mlp_lookup, m.mlp_lookup}},
      {"neglected", {0, m.neglected}},
  };
  std::string s;
  for (const auto& [name, v] : terms) {
    s += g.str() + ',' + name + ',' + std::to_string(v.first) + ',' + std::to_string(v.second) + '\n';
  }
  return s;
}

}  // namespace lookupvit::harness
