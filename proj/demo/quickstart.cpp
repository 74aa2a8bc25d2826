// Train a small two-grid model on synthetic data, then score it at each grid.

#include <cstdio>

#include "lookupvit/harness.hpp"

using namespace lookupvit;

int main() {
  RunConfig rc;
  rc.model.depth = 2;
  rc.model.dim = 32;
  rc.model.heads = 4;
  rc.model.input = Grid{1, 32, 32};
  rc.model.patch = Grid{1, 4, 4};
  rc.model.compressed_grids = {Grid{1, 2, 2}, Grid{1, 4, 4}};
  rc.model.num_classes = 3;
  rc.train.steps = 400;
  rc.train.lr = 1e-3;
  rc.train.eval_every = 50;
  rc.train.target_accuracy = 0.95;

  const Dataset ds = gen_synthetic(3, 150, 32, 7);
  harness::check_dataset_fits(ds, rc.model);
  const auto data = to_examples<float>(ds);
  auto params = init_model<float>(rc.model);

  auto res = harness::train<float>(rc, data, params, {}, [](std::size_t step, const std::vector<EvalMetrics>& ev) {
    std::printf("step %4zu:", step);
    for (const auto& e : ev) std::printf("  %s loss %.4f acc %.3f", e.grid.str().c_str(), e.loss, e.acc_avg);
    std::printf("\n");
  });
  std::printf("stopped after %zu steps, target %s\n", res.steps_run, res.reached_target ? "reached" : "not reached");

  // One forward pass by hand.
  Tape<float> tape;
  auto out = forward(tape, data[0].x, params, rc.model, Grid{1, 4, 4});
  std::printf("example 0: label %zu, predicted %zu\n", data[0].label,
              predict(out.logits_p.value(), out.logits_l.value()));
}
