// lookupvit: data generation, training, evaluation, FLOP tables, attention maps
// and noise robustness for the LookupViT library.

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lookupvit/harness.hpp"

namespace fs = std::filesystem;
using namespace lookupvit;

namespace {

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_file_atomic(path, std::string_view(text));
  }
}

std::vector<Grid> parse_grid_list(const std::string& text) {
  std::vector<Grid> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_grid(item));
  if (out.empty()) throw ConfigError("empty grid list");
  return out;
}

struct GenDataArgs {
  std::uint32_t classes = 3;
  std::size_t n = 300;
  std::uint32_t size = 32;
  std::uint32_t channels = 3;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string config, data, out, metrics;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string checkpoint, data, grids, out;
};

struct FlopsArgs {
  std::string preset = "b16-224";
  std::string sizes, grids, out;
  std::size_t dim = 768, depth = 12, heads = 12;
  bool all = false, empirical = false;
};

struct AttnArgs {
  std::string checkpoint, data, grid, out_dir;
  std::size_t index = 0;
};

struct RobustArgs {
  std::string checkpoint, data, grid, out;
  std::size_t samples = 20;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenDataArgs& a) {
  save_dataset(a.out, gen_synthetic(a.classes, a.n, a.size, a.seed, a.channels));
  std::cerr << "wrote " << a.n << " images to " << a.out << '\n';
  return 0;
}

template <typename T>
int train_with(const RunConfig& rc, const Dataset& ds, const TrainArgs& a) {
  auto data = to_examples<T>(ds);
  auto params = init_model<T>(rc.model);
  std::string csv = harness::metrics_csv_header();
  auto res = harness::train<T>(
      rc, data, params, [&](const harness::TrainRow& r) { csv += harness::metrics_csv_row(r); },
      [&](std::size_t step, const std::vector<EvalMetrics>& ev) {
        std::cerr << "step " << step;
        for (const auto& e : ev) std::cerr << "  " << e.grid.str() << " acc " << harness::fmt(e.acc_avg, 4);
        std::cerr << '\n';
      });
  save_checkpoint(a.out, rc.model, params);
  if (!a.metrics.empty()) emit(a.metrics, csv);
  std::cerr << "trained " << res.steps_run << " steps"
            << (res.reached_target ? " (target accuracy reached)" : "") << ", checkpoint "
            << a.out << '\n';
  return 0;
}

int run_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) {
    rc.model.seed = *a.seed;
    rc.train.seed = *a.seed;
  }
  rc.model.validate();
  const Dataset ds = load_dataset(a.data);
  harness::check_dataset_fits(ds, rc.model);
  return rc.model.precision == Precision::f64 ? train_with<double>(rc, ds, a) : train_with<float>(rc, ds, a);
}

/// Loads a checkpoint at its stored precision and hands it to f.
template <typename F>
int with_checkpoint(const std::string& path, F&& f) {
  const io::Bytes bytes = io::read_file(path);
  const std::string hash = hex32(crc32_of(bytes.data(), bytes.size()));
  if (peek_checkpoint_config(bytes).precision == Precision::f64) {
    auto ck = deserialize_checkpoint<double>(bytes);
    return f(ck, hash);
  }
  auto ck = deserialize_checkpoint<float>(bytes);
  return f(ck, hash);
}

int run_eval(const EvalArgs& a) {
  const Dataset ds = load_dataset(a.data);
  return with_checkpoint(a.checkpoint, [&](auto& ck, const std::string& hash) {
    using T = typename std::decay_t<decltype(ck.params.head_p_w)>::value_type;
    harness::check_dataset_fits(ds, ck.config);
    const auto grids = a.grids.empty() ? ck.config.compressed_grids : parse_grid_list(a.grids);
    const auto data = to_examples<T>(ds);
    std::string csv = harness::eval_csv_header();
    for (const auto& e : harness::evaluate_grids<T>(data, ck.params, ck.config, grids)) {
      csv += harness::eval_csv_row(hash, e);
    }
    emit(a.out, csv);
    return 0;
  });
}

int run_flops(const FlopsArgs& a) {
  std::size_t preset_size = 0;
  if (a.preset == "b16-224") preset_size = 224;
  else if (a.preset == "b16-384") preset_size = 384;
  else throw ConfigError("unknown preset '" + a.preset + "' (b16-224 or b16-384)");

  std::vector<flops::u64> sizes{preset_size};
  if (!a.sizes.empty()) {
    sizes.clear();
    std::stringstream ss(a.sizes);
    for (std::string item; std::getline(ss, item, ',');) sizes.push_back(std::stoull(item));
  }
  const ModelConfig base = harness::b16_config(preset_size);
  const auto grids = a.grids.empty() ? base.compressed_grids : parse_grid_list(a.grids);

  if (a.empirical) {
    ModelConfig cfg = base;
    cfg.dim = a.dim;
    cfg.depth = a.depth;
    cfg.heads = a.heads;
    std::string csv = harness::empirical_csv_header();
    for (auto size : sizes) {
      cfg.input = Grid{1, size, size};
      cfg.compressed_grids = {grids.front()};
      const auto params = init_model<float>(cfg);
      for (const Grid& g : grids) {
        if (!g.fits_within(cfg.lookup_grid())) continue;
        csv += harness::empirical_csv_rows(flops::empirical_macs<float>(cfg, params, g), g, cfg.depth);
      }
    }
    emit(a.out, csv);
    return 0;
  }

  flops::SweepOptions opt;
  opt.include_stem_and_heads = a.all;
  std::ostringstream os;
  flops::write_sweep_csv(os, flops::scaling_sweep(sizes, grids, a.dim, a.depth, opt));
  emit(a.out, os.str());
  return 0;
}

int run_attnmap(const AttnArgs& a) {
  const Dataset ds = load_dataset(a.data);
  if (a.index >= ds.size()) throw ConfigError("--index out of range");
  return with_checkpoint(a.checkpoint, [&](auto& ck, const std::string&) {
    using T = typename std::decay_t<decltype(ck.params.head_p_w)>::value_type;
    harness::check_dataset_fits(ds, ck.config);
    const Grid grid = a.grid.empty() ? ck.config.compressed_grids.front() : parse_grid(a.grid);
    const auto ex = harness::attention_maps<T>(ck.params, ck.config, image_tensor<T>(ds, a.index), grid);
    fs::create_directories(a.out_dir);
    for (std::size_t l = 0; l < ex.pgm.size(); ++l) {
      io::write_file_atomic((fs::path(a.out_dir) / ("layer" + std::to_string(l) + ".pgm")).string(),
                            std::string_view(ex.pgm[l]));
    }
    io::write_file_atomic((fs::path(a.out_dir) / "attention.csv").string(), std::string_view(ex.csv));
    std::cerr << "wrote " << ex.pgm.size() << " maps of " << ex.lookup.str() << " to " << a.out_dir << '\n';
    return 0;
  });
}

int run_robust(const RobustArgs& a) {
  const Dataset ds = load_dataset(a.data);
  return with_checkpoint(a.checkpoint, [&](auto& ck, const std::string&) {
    using T = typename std::decay_t<decltype(ck.params.head_p_w)>::value_type;
    harness::check_dataset_fits(ds, ck.config);
    const Grid grid = a.grid.empty() ? ck.config.compressed_grids.front() : parse_grid(a.grid);
    emit(a.out, harness::robust_csv(harness::robustness<T>(ck.params, ck.config, to_examples<T>(ds),
                                                           a.samples, grid, a.seed)));
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LookupViT: train, evaluate and cost compressed-token vision transformers"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic pattern dataset");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Number of images")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  gen_cmd->add_option("--channels", gen.channels, "Channels per pixel")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output .lvds file")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", tr.config, "JSON run configuration");
  train_cmd->add_option("--data", tr.data, "Training .lvds file")->required();
  train_cmd->add_option("--out", tr.out, "Output checkpoint")->required();
  train_cmd->add_option("--metrics", tr.metrics, "Per-step metrics CSV");
  train_cmd->add_option("--seed", tr.seed, "Overrides model.seed and train.seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy per head and averaged, per compressed grid");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset .lvds file")->required();
  eval_cmd->add_option("--grids", ev.grids, "Comma-separated grids, e.g. 3x3,5x5 (default: trained grids)");
  eval_cmd->add_option("--out", ev.out, "Output CSV (default stdout)");

  FlopsArgs fl;
  auto* flops_cmd = app.add_subcommand("flops", "Analytic or instrumented MAC/FLOP tables");
  flops_cmd->add_option("--preset", fl.preset, "b16-224 or b16-384")->capture_default_str();
  flops_cmd->add_option("--sizes", fl.sizes, "Comma-separated image sizes (overrides the preset size)");
  flops_cmd->add_option("--grids", fl.grids, "Comma-separated compressed grids");
  flops_cmd->add_option("--dim", fl.dim, "Embedding width")->capture_default_str();
  flops_cmd->add_option("--depth", fl.depth, "Number of blocks")->capture_default_str();
  flops_cmd->add_option("--heads", fl.heads, "Attention heads (--empirical only)")->capture_default_str();
  flops_cmd->add_flag("--all", fl.all, "Include patch embedding and heads");
  flops_cmd->add_flag("--empirical", fl.empirical, "Count MACs in an instrumented forward pass");
  flops_cmd->add_option("--out", fl.out, "Output CSV (default stdout)");

  AttnArgs at;
  auto* attn_cmd = app.add_subcommand("attnmap", "Export per-layer cross-attention maps as PGM and CSV");
  attn_cmd->add_option("--checkpoint", at.checkpoint, "Checkpoint file")->required();
  attn_cmd->add_option("--data", at.data, "Dataset .lvds file")->required();
  attn_cmd->add_option("--index", at.index, "Image index")->capture_default_str();
  attn_cmd->add_option("--grid", at.grid, "Compressed grid (default: first trained grid)");
  attn_cmd->add_option("--out-dir", at.out_dir, "Output directory")->required();

  RobustArgs rb;
  auto* robust_cmd = app.add_subcommand("robust", "Mean feature deviation under Gaussian noise, severities 1-5");
  robust_cmd->add_option("--checkpoint", rb.checkpoint, "Checkpoint file")->required();
  robust_cmd->add_option("--data", rb.data, "Dataset .lvds file")->required();
  robust_cmd->add_option("--samples", rb.samples, "Images to average over")->capture_default_str();
  robust_cmd->add_option("--grid", rb.grid, "Compressed grid (default: first trained grid)");
  robust_cmd->add_option("--seed", rb.seed, "Noise seed")->capture_default_str();
  robust_cmd->add_option("--out", rb.out, "Output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (flops_cmd->parsed()) return run_flops(fl);
    if (attn_cmd->parsed()) return run_attnmap(at);
    if (robust_cmd->parsed()) return run_robust(rb);
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
