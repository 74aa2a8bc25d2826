#pragma once

// Analytic cost model for ViT and LookupViT blocks plus an instrumented
// counterpart. Costs are in multiply-accumulates; one MAC is two FLOPs.

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "lookupvit/model.hpp"

namespace lookupvit::flops {

using u64 = std::uint64_t;

inline constexpr u64 kFlopsPerMac = 2;

/// Term-by-term MACs of one configuration (per block unless stated otherwise).
struct FlopsReport {
  u64 attention_quadratic = 0;  // compressed self-attention: 2 M^2 D
  u64 attention_cross = 0;      // gather logits, gather AV, infuse A^T V: 3 N M D
  u64 projections = 0;          // every D x D attention projection
  u64 mlp_compressed = 0;       // 2 p M D^2
  u64 mlp_lookup = 0;           // 2 N D (D/q)
  u64 neglected = 0;            // instrumented runs only: norms, softmax, GELU, biases, embed, heads

  u64 n = 0, m = 0, d = 0, depth = 1, p = 4, q = 2;

  u64 modeled_macs() const {
    return attention_quadratic + attention_cross + projections + mlp_compressed + mlp_lookup;
  }
  u64 total_macs() const { return modeled_macs() + neglected; }
  u64 flops() const { return kFlopsPerMac * total_macs(); }
};

/// 2 N^2 D + (4 + 2p) N D^2; the p = 4 case is 2N^2D + 12ND^2.
inline u64 vit_block_macs(u64 n, u64 d, u64 p = 4) {
  if (n == 0 || d == 0) throw ConfigError("vit_block_macs needs N, D >= 1");
  return 2 * n * n * d + (4 + 2 * p) * n * d * d;
}

inline FlopsReport lookup_block_report(u64 n, u64 m, u64 d, u64 p = 4, u64 q = 2) {
  if (m == 0 || n == 0 || d == 0) throw ConfigError("lookup_block_macs needs N, M, D >= 1");
  if (m > n) {
    throw ConfigError("compressed tokens (" + std::to_string(m) + ") exceed lookup tokens (" +
                      std::to_string(n) + ")");
  }
  if (q == 0 || d % q != 0) throw ConfigError("D must be divisible by q");
  FlopsReport r;
  r.n = n;
  r.m = m;
  r.d = d;
  r.p = p;
  r.q = q;
  r.attention_quadratic = 2 * m * m * d;
  r.attention_cross = 3 * n * m * d;
  // gather: Q (M), K (N), V (N), out (M); ViT: 4M; infuse: V (M), out (N)
  r.projections = (7 * m + 3 * n) * d * d;
  r.mlp_compressed = 2 * p * m * d * d;
  r.mlp_lookup = 2 * n * d * (d / q);
  return r;
}

/// (3NM + 2M^2) D + (4N + 15M) D^2 for (p, q) = (4, 2).
inline u64 lookup_block_macs(u64 n, u64 m, u64 d, u64 p = 4, u64 q = 2) {
  return lookup_block_report(n, m, d, p, q).modeled_macs();
}

/// MACs outside the blocks: patch embedding and the classifier heads.
inline u64 stem_and_head_macs(u64 n, u64 patch_inputs, u64 d, u64 classes, u64 heads_count) {
  return n * patch_inputs * d + heads_count * d * classes;
}

inline double giga(u64 v) { return static_cast<double>(v) / 1e9; }

struct SweepRow {
  u64 size = 0;
  Grid grid;  // 0x0 marks the ViT baseline
  u64 n = 0, m = 0, d = 0, depth = 0;
  u64 macs = 0;

  double gmacs() const { return giga(macs); }
  double gflops() const { return giga(kFlopsPerMac * macs); }
};

struct SweepOptions {
  u64 patch = 16;
  u64 channels = 3;
  u64 classes = 1000;
  bool include_vit = true;
  bool include_stem_and_heads = false;  // --all
};

/// Block-stack cost of square inputs across image sizes and compressed grids. Grids that
/// do not fit a size's lookup grid are skipped.
inline std::vector<SweepRow> scaling_sweep(const std::vector<u64>& sizes,
                                           const std::vector<Grid>& grids, u64 d, u64 depth,
                                           const SweepOptions& opt = {}) {
  std::vector<SweepRow> rows;
  for (u64 size : sizes) {
    if (opt.patch == 0 || size % opt.patch != 0) {
      throw DimensionError("image size " + std::to_string(size) + " is not divisible by patch " +
                           std::to_string(opt.patch));
    }
    const u64 side = size / opt.patch;
    const u64 n = side * side;
    auto extra = [&](u64 heads_count) {
      return opt.include_stem_and_heads
                 ? stem_and_head_macs(n, opt.patch * opt.patch * opt.channels, d, opt.classes,
                                      heads_count)
                 : 0;
    };
    if (opt.include_vit) {
      rows.push_back({size, Grid{1, 0, 0}, n, 0, d, depth, depth * vit_block_macs(n, d) + extra(1)});
    }
    for (const Grid& g : grids) {
      if (!g.fits_within(Grid{1, side, side})) continue;
      const u64 m = g.count();
      rows.push_back({size, g, n, m, d, depth, depth * lookup_block_macs(n, m, d) + extra(2)});
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "size,grid_h,grid_w,N,M,D,depth,gmacs,gflops\n";
  for (const auto& r : rows) {
    char buf[64];
    os << r.size << ',' << r.grid.height << ',' << r.grid.width << ',' << r.n << ',' << r.m << ','
       << r.d << ',' << r.depth << ',';
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", r.gmacs(), r.gflops());
    os << buf << '\n';
  }
}

/// Instrumented forward pass compared against the analytic per-block model.
struct EmpiricalReport {
  FlopsReport measured;                 // summed over all blocks, plus the neglected bucket
  FlopsReport analytic_per_block;
  std::vector<instrument::Counters> per_block;
  std::uint64_t softmax_calls_cross = 0;
  std::uint64_t softmax_calls_total = 0;

  bool modeled_terms_exact() const {
    for (const auto& c : per_block) {
      if (c[instrument::Term::attention_quadratic] != analytic_per_block.attention_quadratic ||
          c[instrument::Term::attention_cross] != analytic_per_block.attention_cross ||
          c[instrument::Term::projections] != analytic_per_block.projections ||
          c[instrument::Term::mlp_compressed] != analytic_per_block.mlp_compressed ||
          c[instrument::Term::mlp_lookup] != analytic_per_block.mlp_lookup) {
        return false;
      }
    }
    return !per_block.empty();
  }

  double neglected_fraction() const {
    return static_cast<double>(measured.neglected) / static_cast<double>(measured.total_macs());
  }
};

/// Runs one forward pass on a zero input of the configured shape with counters on.
template <typename T = float>
EmpiricalReport empirical_macs(const ModelConfig& cfg, const ModelParams<T>& params,
                               const Grid& compressed) {
  if (!instrument::enabled()) throw ContractError("empirical_macs needs instrumentation enabled");
  const Grid in = cfg.input;
  Tensor<T> x(in.is_video() ? Shape{in.frames, in.height, in.width, cfg.channels}
                            : Shape{in.height, in.width, cfg.channels});
  EmpiricalReport rep;
  instrument::Counters counters;
  {
    instrument::Recorder rec(counters);
    Tape<T> tape;
    forward(tape, x, params, cfg, compressed, &rep.per_block);
  }
  const u64 n = cfg.lookup_grid().count();
  const u64 m = compressed.count();
  rep.analytic_per_block = lookup_block_report(n, m, cfg.dim, cfg.p, cfg.q);
  auto& meas = rep.measured;
  meas.attention_quadratic = counters[instrument::Term::attention_quadratic];
  meas.attention_cross = counters[instrument::Term::attention_cross];
  meas.projections = counters[instrument::Term::projections];
  meas.mlp_compressed = counters[instrument::Term::mlp_compressed];
  meas.mlp_lookup = counters[instrument::Term::mlp_lookup];
  meas.neglected = counters[instrument::Term::neglected];
  meas.n = n;
  meas.m = m;
  meas.d = cfg.dim;
  meas.depth = cfg.depth;
  meas.p = cfg.p;
  meas.q = cfg.q;
  rep.softmax_calls_cross = counters.softmax(instrument::Term::attention_cross);
  rep.softmax_calls_total = counters.total_softmax();
  return rep;
}

template <typename T = float>
EmpiricalReport empirical_macs(const ModelConfig& cfg, const Grid& compressed) {
  return empirical_macs<T>(cfg, init_model<T>(cfg), compressed);
}

}  // namespace lookupvit::flops
