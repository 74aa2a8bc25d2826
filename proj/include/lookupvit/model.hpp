#pragma once

// A stack of LookupViT blocks with two classifier heads: one on the pooled
// compressed tokens, one on the pooled lookup tokens.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lookupvit/lookup_block.hpp"

namespace lookupvit {

enum class Precision { f32, f64 };

struct Ablations {
  bool no_lookup_tokens = false;  // ViT blocks only, on resized tokens; single head
  bool no_infuse = false;         // skip compressed -> lookup cross-attention
  bool no_lookup_loss = false;
  bool no_compressed_loss = false;
  bool random_compressed_init = false;  // learned first-layer compressed tokens instead of resize

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t p = 4;
  std::size_t q = 2;
  Grid input{1, 32, 32};  // frames x height x width
  std::size_t channels = 3;
  Grid patch{1, 4, 4};
  std::vector<Grid> compressed_grids{Grid{1, 2, 2}, Grid{1, 4, 4}};
  std::size_t num_classes = 3;
  Ablations ablations;
  bool scale_logits = true;
  bool output_projection = true;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  double layer_norm_eps = 1e-6;

  Grid lookup_grid() const { return lookup_grid_for(input, patch); }

  BlockOptions block_options() const {
    BlockOptions o;
    o.heads = heads;
    o.p = p;
    o.q = q;
    o.scale_logits = scale_logits;
    o.output_projection = output_projection;
    o.infuse = !ablations.no_infuse;
    o.eps = layer_norm_eps;
    return o;
  }

  void validate() const {
    if (depth < 1) throw ConfigError("depth must be at least 1");
    if (dim < 2) throw ConfigError("dim must be at least 2");
    validate_block_dims(dim, block_options());
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (channels < 1) throw ConfigError("channels must be at least 1");
    const Grid lookup = lookup_grid();
    if (compressed_grids.empty()) throw ConfigError("compressed_grids must not be empty");
    for (const Grid& g : compressed_grids) {
      if (g.count() == 0 || !g.fits_within(lookup)) {
        throw ConfigError("compressed grid " + g.str() + " does not fit lookup grid " +
                          lookup.str());
      }
    }
    if (ablations.no_lookup_loss && ablations.no_compressed_loss) {
      throw ConfigError("no_lookup_loss and no_compressed_loss together leave no objective");
    }
    if (ablations.random_compressed_init && compressed_grids.size() != 1) {
      throw ConfigError("random_compressed_init needs exactly one compressed grid");
    }
  }
};

template <typename T>
struct ModelParams {
  PatchEmbedParams<T> embed;
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> final_norm_p, final_norm_l;
  Tensor<T> head_p_w, head_p_b;  // [D x classes], [classes]
  Tensor<T> head_l_w, head_l_b;
  Tensor<T> initial_z_p;  // [M x D]; only with random_compressed_init

  /// Visits every parameter tensor in a fixed order with a stable dotted name.
  template <typename F>
  void visit(F&& f) {
    embed.visit("embed.", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit("blocks." + std::to_string(i) + ".", f);
    }
    final_norm_p.visit("final_norm_p.", f);
    final_norm_l.visit("final_norm_l.", f);
    f(std::string("head_p.w"), head_p_w);
    f(std::string("head_p.b"), head_p_b);
    f(std::string("head_l.w"), head_l_w);
    f(std::string("head_l.b"), head_l_b);
    if (!initial_z_p.empty()) f(std::string("initial_z_p"), initial_z_p);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams<T> m;
  m.embed = init_patch_embed<T>(cfg.patch, cfg.channels, cfg.lookup_grid(), cfg.dim, rng);
  const BlockOptions opt = cfg.block_options();
  for (std::size_t i = 0; i < cfg.depth; ++i) m.blocks.push_back(init_block<T>(cfg.dim, opt, rng));
  m.final_norm_p = LayerNormParams<T>::identity(cfg.dim);
  m.final_norm_l = LayerNormParams<T>::identity(cfg.dim);
  // Zero heads: every class starts equally likely, so the initial loss is ln(classes).
  m.head_p_w = Tensor<T>({cfg.dim, cfg.num_classes});
  m.head_p_b = Tensor<T>({cfg.num_classes});
  m.head_l_w = Tensor<T>({cfg.dim, cfg.num_classes});
  m.head_l_b = Tensor<T>({cfg.num_classes});
  if (cfg.ablations.random_compressed_init) {
    m.initial_z_p = normal_tensor<T>({cfg.compressed_grids.front().count(), cfg.dim}, 0.02, rng);
  }
  return m;
}

template <typename T>
struct ForwardOutput {
  Var<T> logits_p;  // [classes]
  Var<T> logits_l;  // [classes]; constant zeros under no_lookup_tokens
  Var<T> features;  // pooled pre-head features: [GAP(z_p), GAP(z_l)], or GAP(z_p) alone
  TokenPair<T> tokens;
  std::vector<AttentionWeights<T>> attention;  // one per block (empty under no_lookup_tokens)
};

/// Input volume extents of an image [h x w x c] or video [t x h x w x c].
template <typename T>
Grid input_grid_of(const Tensor<T>& volume) {
  if (volume.rank() == 3) return Grid{1, volume.dim(0), volume.dim(1)};
  if (volume.rank() == 4) return Grid{volume.dim(0), volume.dim(1), volume.dim(2)};
  throw DimensionError("expected [h x w x c] or [t x h x w x c], got " +
                       shape_str(volume.shape()));
}

/// Optional per-block MAC breakdown collected during forward().
using BlockCounters = std::vector<instrument::Counters>;

template <typename T>
ForwardOutput<T> forward(Tape<T>& tape, const Tensor<T>& volume, const ModelParams<T>& params,
                         const ModelConfig& cfg, const Grid& compressed,
                         BlockCounters* per_block = nullptr) {
  const Grid lookup = lookup_grid_for(input_grid_of(volume), cfg.patch);
  Var<T> features = embed_patches(tape, volume, params.embed, cfg.patch);
  TokenPair<T> tokens =
      build_token_pair(features, lookup_positions(tape, params.embed, lookup), lookup, compressed);
  if (cfg.ablations.random_compressed_init) {
    if (compressed.count() != params.initial_z_p.dim(0)) {
      throw ConfigError("learned compressed tokens were built for " +
                        std::to_string(params.initial_z_p.dim(0)) + " tokens, grid " +
                        compressed.str() + " has " + std::to_string(compressed.count()));
    }
    tokens.z_p = tape.param(params.initial_z_p);
  }

  const BlockOptions opt = cfg.block_options();
  ForwardOutput<T> out;
  for (const auto& block : params.blocks) {
    const instrument::Counters before = instrument::snapshot();
    if (cfg.ablations.no_lookup_tokens) {
      tokens.z_p = vit_block(tape, tokens.z_p, block.vit, opt);
    } else {
      auto res = lookup_block_forward(tape, tokens, block, opt);
      tokens = res.tokens;
      out.attention.push_back(res.attention);
    }
    if (per_block) per_block->push_back(instrument::snapshot() - before);
  }

  Var<T> pooled_p = ops::mean_rows(layer_norm(tape, tokens.z_p, params.final_norm_p, opt.eps));
  auto head = [&](Var<T> pooled, const Tensor<T>& w, const Tensor<T>& b) {
    Var<T> x = ops::reshape(pooled, {1, cfg.dim});
    return ops::reshape(ops::add_bias(ops::matmul(x, tape.param(w)), tape.param(b)),
                        {cfg.num_classes});
  };
  out.logits_p = head(pooled_p, params.head_p_w, params.head_p_b);
  if (cfg.ablations.no_lookup_tokens) {
    out.logits_l = tape.constant(Tensor<T>({cfg.num_classes}));
    out.features = pooled_p;
  } else {
    Var<T> pooled_l = ops::mean_rows(layer_norm(tape, tokens.z_l, params.final_norm_l, opt.eps));
    out.logits_l = head(pooled_l, params.head_l_w, params.head_l_b);
    out.features = ops::concat(pooled_p, pooled_l);
  }
  out.tokens = tokens;
  return out;
}

/// Equal-weight cross-entropy on both heads; an ablated term drops out and the other
/// keeps weight 1.
template <typename T>
Var<T> loss(Var<T> logits_p, Var<T> logits_l, std::size_t label, const ModelConfig& cfg) {
  const auto& ab = cfg.ablations;
  if (ab.no_lookup_loss && ab.no_compressed_loss) {
    throw ConfigError("no_lookup_loss and no_compressed_loss together leave no objective");
  }
  if (ab.no_lookup_loss || ab.no_lookup_tokens) return ops::cross_entropy(logits_p, label);
  if (ab.no_compressed_loss) return ops::cross_entropy(logits_l, label);
  return ops::scale(
      ops::add(ops::cross_entropy(logits_p, label), ops::cross_entropy(logits_l, label)), T{0.5});
}

/// argmax of the averaged head logits; ties go to the lowest index.
template <typename T>
std::size_t predict(const Tensor<T>& logits_p, const Tensor<T>& logits_l) {
  if (logits_p.numel() != logits_l.numel()) throw DimensionError("head logits differ in length");
  std::size_t best = 0;
  T best_v{};
  for (std::size_t i = 0; i < logits_p.numel(); ++i) {
    const T v = (logits_p[i] + logits_l[i]) / T{2};
    if (i == 0 || v > best_v) {
      best = i;
      best_v = v;
    }
  }
  return best;
}

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  return static_cast<std::size_t>(std::max_element(v.data().begin(), v.data().end()) -
                                  v.data().begin());
}

/// Pooled pre-head features of one input.
template <typename T>
Tensor<T> extract_features(const ModelParams<T>& params, const ModelConfig& cfg,
                           const Tensor<T>& x, const Grid& grid) {
  Tape<T> tape;
  return forward(tape, x, params, cfg, grid).features.value();
}

/// ||F(x) - F(x_c)|| / ||F(x)|| on pooled pre-head features.
template <typename T>
double feature_deviation(const Tensor<T>& clean_features, const Tensor<T>& corrupt_features) {
  if (clean_features.shape() != corrupt_features.shape()) {
    throw DimensionError("feature vectors differ in shape");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < clean_features.numel(); ++i) {
    const double a = clean_features[i];
    const double diff = a - static_cast<double>(corrupt_features[i]);
    num += diff * diff;
    den += a * a;
  }
  if (den == 0.0) throw NumericError("feature deviation is undefined for zero clean features");
  return std::sqrt(num) / std::sqrt(den);
}

template <typename T>
double feature_deviation(const ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& x,
                         const Tensor<T>& x_corrupt, const Grid& grid) {
  if (x.shape() != x_corrupt.shape()) throw DimensionError("clean and corrupt inputs differ");
  return feature_deviation(extract_features(params, cfg, x, grid),
                           extract_features(params, cfg, x_corrupt, grid));
}

}  // namespace lookupvit
