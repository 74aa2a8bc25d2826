#pragma once

// The LookupViT block: gather from lookup into compressed tokens (cross-attention
// whose weights are kept), refine the compressed tokens with a standard ViT block,
// infuse back into the lookup tokens by reusing the transposed weights, then apply
// the narrow lookup MLP.

#include <cmath>
#include <optional>
#include <string>

#include "lookupvit/init.hpp"
#include "lookupvit/ops.hpp"
#include "lookupvit/tokenizer.hpp"

namespace lookupvit {

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams identity(std::size_t d) { return {Tensor<T>({d}, T{1}), Tensor<T>({d})}; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
};

template <typename T>
struct MlpParams {
  LayerNormParams<T> norm;
  Tensor<T> w_in;   // [D x H]
  Tensor<T> b_in;   // [H]
  Tensor<T> w_out;  // [H x D]
  Tensor<T> b_out;  // [D]

  static MlpParams init(std::size_t d, std::size_t hidden, Rng& rng) {
    return {LayerNormParams<T>::identity(d), normal_tensor<T>({d, hidden}, 0.02, rng),
            Tensor<T>({hidden}), normal_tensor<T>({hidden, d}, 0.02, rng), Tensor<T>({d})};
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + "norm.", f);
    f(prefix + "w_in", w_in);
    f(prefix + "b_in", b_in);
    f(prefix + "w_out", w_out);
    f(prefix + "b_out", b_out);
  }
};

/// Pre-LN encoder layer run on the compressed tokens.
template <typename T>
struct VitBlockParams {
  LayerNormParams<T> attn_norm;
  Tensor<T> w_q, w_k, w_v, w_o;  // [D x D]
  MlpParams<T> mlp;              // hidden p*D

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    attn_norm.visit(prefix + "attn_norm.", f);
    f(prefix + "w_q", w_q);
    f(prefix + "w_k", w_k);
    f(prefix + "w_v", w_v);
    f(prefix + "w_o", w_o);
    mlp.visit(prefix + "mlp.", f);
  }
};

template <typename T>
struct BlockParams {
  // Pre-norms applied to the raw streams before gather and infuse.
  LayerNormParams<T> gather_norm_p, gather_norm_l, infuse_norm_p;
  // Gather (lookup -> compressed).
  Tensor<T> w_q, w_k, w_v_lookup;   // [D x D]
  LayerNormParams<T> q_norm, k_norm;
  Tensor<T> w_o_gather;             // [D x D]; empty when output projections are off
  VitBlockParams<T> vit;
  // Infuse (compressed -> lookup).
  Tensor<T> w_v_comp;               // [D x D]
  LayerNormParams<T> v_norm;
  Tensor<T> w_o_infuse;             // [D x D]; empty when output projections are off
  MlpParams<T> lookup_mlp;          // hidden D/q

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    gather_norm_p.visit(prefix + "gather_norm_p.", f);
    gather_norm_l.visit(prefix + "gather_norm_l.", f);
    infuse_norm_p.visit(prefix + "infuse_norm_p.", f);
    f(prefix + "w_q", w_q);
    f(prefix + "w_k", w_k);
    f(prefix + "w_v_lookup", w_v_lookup);
    q_norm.visit(prefix + "q_norm.", f);
    k_norm.visit(prefix + "k_norm.", f);
    if (!w_o_gather.empty()) f(prefix + "w_o_gather", w_o_gather);
    vit.visit(prefix + "vit.", f);
    f(prefix + "w_v_comp", w_v_comp);
    v_norm.visit(prefix + "v_norm.", f);
    if (!w_o_infuse.empty()) f(prefix + "w_o_infuse", w_o_infuse);
    lookup_mlp.visit(prefix + "lookup_mlp.", f);
  }
};

struct BlockOptions {
  std::size_t heads = 1;
  std::size_t p = 4;  // compressed MLP hidden = p * D
  std::size_t q = 2;  // lookup MLP hidden = D / q
  bool scale_logits = true;
  bool output_projection = true;
  bool infuse = true;
  double eps = 1e-6;

  template <typename T>
  T logit_scale(std::size_t d) const {
    return scale_logits ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(d / heads))) : T{1};
  }
};

inline void validate_block_dims(std::size_t d, const BlockOptions& opt) {
  if (opt.heads == 0 || d % opt.heads != 0) {
    throw ConfigError("embedding width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(opt.heads) + " heads");
  }
  if (opt.p == 0 || opt.q == 0) throw ConfigError("MLP factors p and q must be positive");
  if (d % opt.q != 0) {
    throw ConfigError("embedding width " + std::to_string(d) + " is not divisible by q=" +
                      std::to_string(opt.q));
  }
}

template <typename T>
BlockParams<T> init_block(std::size_t d, const BlockOptions& opt, Rng& rng) {
  validate_block_dims(d, opt);
  auto proj = [&] { return normal_tensor<T>({d, d}, 0.02, rng); };
  auto ln = [&] { return LayerNormParams<T>::identity(d); };
  BlockParams<T> b;
  b.gather_norm_p = ln();
  b.gather_norm_l = ln();
  b.infuse_norm_p = ln();
  b.w_q = proj();
  b.w_k = proj();
  b.w_v_lookup = proj();
  b.q_norm = ln();
  b.k_norm = ln();
  if (opt.output_projection) b.w_o_gather = proj();
  b.vit.attn_norm = ln();
  b.vit.w_q = proj();
  b.vit.w_k = proj();
  b.vit.w_v = proj();
  b.vit.w_o = proj();
  b.vit.mlp = MlpParams<T>::init(d, opt.p * d, rng);
  b.w_v_comp = proj();
  b.v_norm = ln();
  if (opt.output_projection) b.w_o_infuse = proj();
  b.lookup_mlp = MlpParams<T>::init(d, d / opt.q, rng);
  return b;
}

template <typename T>
Var<T> layer_norm(Tape<T>& tape, Var<T> x, const LayerNormParams<T>& p, double eps) {
  return ops::layer_norm(x, tape.param(p.gamma), tape.param(p.beta), static_cast<T>(eps));
}

/// Residual MLP branch: x + W_out * gelu(W_in * LN(x) + b_in) + b_out.
template <typename T>
Var<T> mlp_residual(Tape<T>& tape, Var<T> x, const MlpParams<T>& p, double eps,
                    instrument::Term term) {
  Var<T> h = layer_norm(tape, x, p.norm, eps);
  {
    instrument::TermScope scope(term);
    h = ops::matmul(h, tape.param(p.w_in));
  }
  h = ops::gelu(ops::add_bias(h, tape.param(p.b_in)));
  {
    instrument::TermScope scope(term);
    h = ops::matmul(h, tape.param(p.w_out));
  }
  return ops::add(x, ops::add_bias(h, tape.param(p.b_out)));
}

/// Multi-head attention weights, [heads x M x N]; each row is a distribution over N.
template <typename T>
struct AttentionWeights {
  Var<T> weights;
};

template <typename T>
struct GatherResult {
  Var<T> z_p;
  AttentionWeights<T> attention;
};

namespace detail {
template <typename T>
Var<T> project(Tape<T>& tape, Var<T> x, const Tensor<T>& w) {
  instrument::TermScope scope(instrument::Term::projections);
  return ops::matmul(x, tape.param(w));
}
}  // namespace detail

/// Lookup -> compressed cross-attention. Returns z_p + O(A V) together with A, where
/// Q = LN(w_q LN(z_p)), K = LN(w_k LN(z_l)), V = w_v LN(z_l), A = softmax(s Q K^T) per head.
template <typename T>
GatherResult<T> mhbc_gather(Tape<T>& tape, Var<T> z_p, Var<T> z_l, const BlockParams<T>& p,
                            const BlockOptions& opt) {
  const std::size_t d = z_p.value().cols();
  if (z_l.value().cols() != d) throw DimensionError("gather: token widths differ");
  Var<T> np = layer_norm(tape, z_p, p.gather_norm_p, opt.eps);
  Var<T> nl = layer_norm(tape, z_l, p.gather_norm_l, opt.eps);
  Var<T> q = layer_norm(tape, detail::project(tape, np, p.w_q), p.q_norm, opt.eps);
  Var<T> k = layer_norm(tape, detail::project(tape, nl, p.w_k), p.k_norm, opt.eps);
  Var<T> v = detail::project(tape, nl, p.w_v_lookup);
  Var<T> a;
  Var<T> gathered;
  {
    instrument::TermScope scope(instrument::Term::attention_cross);
    a = ops::softmax_rows(ops::attention_logits(q, k, opt.heads, opt.logit_scale<T>(d)));
    gathered = ops::attend(a, v);
  }
  if (opt.output_projection) gathered = detail::project(tape, gathered, p.w_o_gather);
  return {ops::add(z_p, gathered), {a}};
}

/// Pre-LN multi-head self-attention + MLP (hidden p*D) on the compressed tokens.
template <typename T>
Var<T> vit_block(Tape<T>& tape, Var<T> z, const VitBlockParams<T>& p, const BlockOptions& opt) {
  const std::size_t d = z.value().cols();
  Var<T> n = layer_norm(tape, z, p.attn_norm, opt.eps);
  Var<T> q = detail::project(tape, n, p.w_q);
  Var<T> k = detail::project(tape, n, p.w_k);
  Var<T> v = detail::project(tape, n, p.w_v);
  Var<T> o;
  {
    instrument::TermScope scope(instrument::Term::attention_quadratic);
    o = ops::attend(ops::softmax_rows(ops::attention_logits(q, k, opt.heads, opt.logit_scale<T>(d))),
                    v);
  }
  z = ops::add(z, detail::project(tape, o, p.w_o));
  return mlp_residual(tape, z, p.mlp, opt.eps, instrument::Term::mlp_compressed);
}

/// Compressed -> lookup update O(A^T V) with V = LN(w_v LN(z_p)). The weights come from
/// the gather step unchanged: no second softmax, no renormalization of A^T. The caller
/// adds the result to z_l.
template <typename T>
Var<T> mhbc_infuse(Tape<T>& tape, Var<T> z_l, Var<T> z_p, const AttentionWeights<T>& attn,
                   const BlockParams<T>& p, const BlockOptions& opt) {
  const auto& a = attn.weights.value();
  if (a.rank() != 3 || a.dim(0) != opt.heads || a.dim(1) != z_p.value().dim(0) ||
      a.dim(2) != z_l.value().dim(0)) {
    throw ContractError("attention weights " + shape_str(a.shape()) + " do not match " +
                        std::to_string(z_p.value().dim(0)) + " compressed and " +
                        std::to_string(z_l.value().dim(0)) + " lookup tokens");
  }
  Var<T> np = layer_norm(tape, z_p, p.infuse_norm_p, opt.eps);
  Var<T> v = layer_norm(tape, detail::project(tape, np, p.w_v_comp), p.v_norm, opt.eps);
  Var<T> update;
  {
    instrument::TermScope scope(instrument::Term::attention_cross);
    update = ops::attend_transposed(attn.weights, v);
  }
  if (opt.output_projection) update = detail::project(tape, update, p.w_o_infuse);
  return update;
}

template <typename T>
struct BlockOutput {
  TokenPair<T> tokens;
  AttentionWeights<T> attention;
};

/// gather -> ViT block on z_p -> infuse residual on z_l -> lookup MLP on z_l.
template <typename T>
BlockOutput<T> lookup_block_forward(Tape<T>& tape, const TokenPair<T>& in,
                                    const BlockParams<T>& p, const BlockOptions& opt) {
  auto [z_p, attn] = mhbc_gather(tape, in.z_p, in.z_l, p, opt);
  z_p = vit_block(tape, z_p, p.vit, opt);
  Var<T> z_l = in.z_l;
  if (opt.infuse) z_l = ops::add(z_l, mhbc_infuse(tape, z_l, z_p, attn, p, opt));
  z_l = mlp_residual(tape, z_l, p.lookup_mlp, opt.eps, instrument::Term::mlp_lookup);
  TokenPair<T> out = in;
  out.z_p = z_p;
  out.z_l = z_l;
  return {out, attn};
}

}  // namespace lookupvit
