#pragma once

// Patch embedding and construction of the lookup / compressed token sets.
// Compressed tokens are a parameter-free resample of the lookup grid: features
// and positional embeddings are resized separately and then summed.

#include "lookupvit/grid.hpp"
#include "lookupvit/init.hpp"
#include "lookupvit/ops.hpp"

namespace lookupvit {

template <typename T>
struct PatchEmbedParams {
  Tensor<T> kernel;      // [patch_t*patch_h*patch_w*channels x D]
  Tensor<T> bias;        // [D]
  Tensor<T> pos_lookup;  // [h_l x w_l x D], or [t_l x h_l x w_l x D] for video

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "kernel", kernel);
    f(prefix + "bias", bias);
    f(prefix + "pos_lookup", pos_lookup);
  }
};

/// Lookup grid implied by an input volume and patch extents.
inline Grid lookup_grid_for(const Grid& input, const Grid& patch) {
  if (patch.count() == 0 || input.frames % patch.frames || input.height % patch.height ||
      input.width % patch.width) {
    throw DimensionError("input " + input.str() + " is not divisible into patches of " +
                         patch.str());
  }
  return Grid{input.frames / patch.frames, input.height / patch.height,
              input.width / patch.width};
}

inline Shape grid_shape(const Grid& g, std::size_t d) {
  return g.is_video() ? Shape{g.frames, g.height, g.width, d} : Shape{g.height, g.width, d};
}

template <typename T>
PatchEmbedParams<T> init_patch_embed(const Grid& patch, std::size_t channels, const Grid& lookup,
                                     std::size_t dim, Rng& rng) {
  PatchEmbedParams<T> p;
  p.kernel = normal_tensor<T>({patch.count() * channels, dim}, 0.02, rng);
  p.bias = Tensor<T>({dim});
  p.pos_lookup = normal_tensor<T>(grid_shape(lookup, dim), 0.02, rng);
  return p;
}

/// Splits [h x w x c] or [t x h x w x c] into flattened non-overlapping patches, one row per
/// token in frame-major, row-major order. Within a row the layout is (dt, dy, dx, channel).
template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& volume, const Grid& patch) {
  Grid in;
  std::size_t c = 0;
  if (volume.rank() == 3) {
    in = Grid{1, volume.dim(0), volume.dim(1)};
    c = volume.dim(2);
  } else if (volume.rank() == 4) {
    in = Grid{volume.dim(0), volume.dim(1), volume.dim(2)};
    c = volume.dim(3);
  } else {
    throw DimensionError("expected an image [h x w x c] or video [t x h x w x c], got " +
                         shape_str(volume.shape()));
  }
  const Grid grid = lookup_grid_for(in, patch);
  const std::size_t width = patch.count() * c;
  Tensor<T> out({grid.count(), width});
  std::size_t row = 0;
  for (std::size_t gt = 0; gt < grid.frames; ++gt)
    for (std::size_t gy = 0; gy < grid.height; ++gy)
      for (std::size_t gx = 0; gx < grid.width; ++gx, ++row) {
        T* dst = out.ptr() + row * width;
        for (std::size_t dt = 0; dt < patch.frames; ++dt)
          for (std::size_t dy = 0; dy < patch.height; ++dy)
            for (std::size_t dx = 0; dx < patch.width; ++dx) {
              const std::size_t t = gt * patch.frames + dt;
              const std::size_t y = gy * patch.height + dy;
              const std::size_t x = gx * patch.width + dx;
              const T* src = volume.ptr() + ((t * in.height + y) * in.width + x) * c;
              dst = std::copy(src, src + c, dst);
            }
      }
  return out;
}

/// Lookup features [N x D]: every token is kernel^T * (flattened patch) + bias.
template <typename T>
Var<T> embed_patches(Tape<T>& tape, const Tensor<T>& volume, const PatchEmbedParams<T>& params,
                     const Grid& patch) {
  Var<T> patches = tape.constant(unfold_patches(volume, patch));
  if (patches.value().dim(1) != params.kernel.dim(0)) {
    throw DimensionError("patch embedding kernel expects " +
                         std::to_string(params.kernel.dim(0)) + " inputs per patch, got " +
                         std::to_string(patches.value().dim(1)));
  }
  return ops::add_bias(ops::matmul(patches, tape.param(params.kernel)), tape.param(params.bias));
}

/// The pair of token sets threaded through every block.
template <typename T>
struct TokenPair {
  Var<T> z_p;  // [M x D] compressed
  Var<T> z_l;  // [N x D] lookup
  Grid lookup_grid;
  Grid compressed_grid;

  std::size_t lookup_count() const { return lookup_grid.count(); }
  std::size_t compressed_count() const { return compressed_grid.count(); }
  double compression_ratio() const {
    return static_cast<double>(lookup_count()) / static_cast<double>(compressed_count());
  }
};

/// z_l = F_l + P_l and z_p = resize(F_l) + resize(P_l). `features` and `pos` are
/// [N x D] laid out on `lookup`.
template <typename T>
TokenPair<T> build_token_pair(Var<T> features, Var<T> pos, const Grid& lookup,
                              const Grid& compressed) {
  if (compressed.count() == 0 || !compressed.fits_within(lookup)) {
    throw ConfigError("compressed grid " + compressed.str() + " must fit within lookup grid " +
                      lookup.str());
  }
  if (features.value().rank() != 2 || features.value().dim(0) != lookup.count()) {
    throw DimensionError("features " + shape_str(features.shape()) + " do not hold grid " +
                         lookup.str());
  }
  TokenPair<T> pair;
  pair.lookup_grid = lookup;
  pair.compressed_grid = compressed;
  pair.z_l = ops::add(features, pos);
  pair.z_p = ops::add(ops::resize_tokens(features, lookup, compressed),
                      ops::resize_tokens(pos, lookup, compressed));
  return pair;
}

/// Positional table for `lookup`, resized from the stored table when the grid differs
/// (e.g. evaluating at an input resolution not seen in training).
template <typename T>
Var<T> lookup_positions(Tape<T>& tape, const PatchEmbedParams<T>& params, const Grid& lookup) {
  const auto& pos = params.pos_lookup;
  const std::size_t d = pos.cols();
  const Grid stored = pos.rank() == 4 ? Grid{pos.dim(0), pos.dim(1), pos.dim(2)}
                                      : Grid{1, pos.dim(0), pos.dim(1)};
  Var<T> flat = ops::reshape(tape.param(pos), {stored.count(), d});
  return stored == lookup ? flat : ops::resize_tokens(flat, stored, lookup);
}

/// Plain-value view of a token pair, for callers that do not need gradients.
template <typename T>
struct TokenValues {
  Tensor<T> z_p;
  Tensor<T> z_l;
  Grid lookup_grid;
  Grid compressed_grid;
};

/// Tokenizes a grid of features [h_l x w_l x D] (or [t_l x h_l x w_l x D]) using
/// the stored positional table.
template <typename T>
TokenValues<T> build_token_pair(const Tensor<T>& features, const PatchEmbedParams<T>& params,
                                const Grid& compressed) {
  if (features.rank() != 3 && features.rank() != 4) {
    throw DimensionError("features must be a 2-D or 3-D grid of D-vectors");
  }
  const Grid lookup = features.rank() == 4
                          ? Grid{features.dim(0), features.dim(1), features.dim(2)}
                          : Grid{1, features.dim(0), features.dim(1)};
  Tape<T> tape;
  Var<T> f = tape.constant(features.reshaped({lookup.count(), features.cols()}));
  auto pair = build_token_pair(f, lookup_positions(tape, params, lookup), lookup, compressed);
  return {pair.z_p.value(), pair.z_l.value(), lookup, compressed};
}

template <typename T>
TokenValues<T> build_video_token_pair(const Tensor<T>& features,
                                      const PatchEmbedParams<T>& params, const Grid& compressed) {
  if (features.rank() != 4) throw DimensionError("video features must be [t x h x w x D]");
  return build_token_pair(features, params, compressed);
}

/// Lookup feature grid for an image or video, shaped like pos_lookup.
template <typename T>
Tensor<T> embed_patches(const Tensor<T>& volume, const PatchEmbedParams<T>& params,
                        const Grid& patch) {
  Tape<T> tape;
  Var<T> f = embed_patches(tape, volume, params, patch);
  Grid in = volume.rank() == 4 ? Grid{volume.dim(0), volume.dim(1), volume.dim(2)}
                               : Grid{1, volume.dim(0), volume.dim(1)};
  return f.value().reshaped(grid_shape(lookup_grid_for(in, patch), f.value().cols()));
}

/// Bilinear resize of an [h x w x D] grid with half-pixel centers.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw DimensionError("bilinear_resize expects [h x w x D]");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize target has a zero extent");
  Tape<T> tape;
  const Grid from{1, x.dim(0), x.dim(1)};
  const Grid to{1, out_h, out_w};
  auto v = ops::resize_tokens(tape.constant(x.reshaped({from.count(), x.dim(2)})), from, to);
  return v.value().reshaped({out_h, out_w, x.dim(2)});
}

/// Trilinear resize of a [t x h x w x D] volume with half-pixel centers on every axis.
template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, std::size_t out_t, std::size_t out_h,
                           std::size_t out_w) {
  if (x.rank() != 4) throw DimensionError("trilinear_resize expects [t x h x w x D]");
  if (out_t == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("trilinear_resize target has a zero extent");
  }
  Tape<T> tape;
  const Grid from{x.dim(0), x.dim(1), x.dim(2)};
  const Grid to{out_t, out_h, out_w};
  auto v = ops::resize_tokens(tape.constant(x.reshaped({from.count(), x.dim(3)})), from, to);
  return v.value().reshaped({out_t, out_h, out_w, x.dim(3)});
}

}  // namespace lookupvit
