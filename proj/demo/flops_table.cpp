// Analytic GFLOPs for B/16 at 224 and 384, plus an instrumented check on a small model.

#include <cstdio>

#include "lookupvit/harness.hpp"

using namespace lookupvit;

int main() {
  for (flops::u64 size : {224, 384}) {
    const flops::u64 n = (size / 16) * (size / 16);
    std::printf("B/16 @ %llu (N = %llu)\n", static_cast<unsigned long long>(size), static_cast<unsigned long long>(n));
    std::printf("  ViT      %8.3f GFLOPs\n", flops::giga(12 * flops::kFlopsPerMac * flops::vit_block_macs(n, 768)));
    for (flops::u64 side : {3, 5, 7, 10}) {
      const double g = flops::giga(12 * flops::kFlopsPerMac * flops::lookup_block_macs(n, side * side, 768));
      std::printf("  %2llux%-2llu    %8.3f GFLOPs\n", static_cast<unsigned long long>(side),
                  static_cast<unsigned long long>(side), g);
    }
  }

  ModelConfig cfg;
  cfg.depth = 2;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.input = Grid{1, 32, 32};
  cfg.patch = Grid{1, 4, 4};
  cfg.compressed_grids = {Grid{1, 3, 3}};
  const auto rep = flops::empirical_macs<float>(cfg, Grid{1, 3, 3});
  std::printf("\ninstrumented vs analytic, D=32, depth 2, 3x3 grid\n%s%s",
              harness::empirical_csv_header().c_str(),
              harness::empirical_csv_rows(rep, Grid{1, 3, 3}, cfg.depth).c_str());
}
