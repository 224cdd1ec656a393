// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "cigmae/core/nn_ops.hpp"
#include "cigmae/core/params.hpp"

namespace cigmae {

/// Parameters of one pre-norm transformer encoder block.
template <class T>
struct AttentionBlockParams {
  std::size_t width = 0;
  std::size_t heads = 1;
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static AttentionBlockParams init(Rng& rng, std::size_t width, std::size_t heads, std::size_t mlp_hidden,
                                   const std::string& prefix) {
    if (heads == 0 || width % heads != 0)
      throw ConfigError("attention block: width " + std::to_string(width) + " not divisible by " +
                        std::to_string(heads) + " heads");
    AttentionBlockParams p;
    p.width = width;
    p.heads = heads;
    const double bw = 1.0 / std::sqrt(double(width));
    const double bh = 1.0 / std::sqrt(double(mlp_hidden));
    p.ln1_gamma = constant_parameter<T>({width}, T(1), prefix + ".ln1.gamma");
    p.ln1_beta = constant_parameter<T>({width}, T(0), prefix + ".ln1.beta");
    p.wq = uniform_parameter<T>(rng, {width, width}, bw, prefix + ".attn.wq");
    p.bq = uniform_parameter<T>(rng, {width}, bw, prefix + ".attn.bq");
    p.wk = uniform_parameter<T>(rng, {width, width}, bw, prefix + ".attn.wk");
    p.bk = uniform_parameter<T>(rng, {width}, bw, prefix + ".attn.bk");
    p.wv = uniform_parameter<T>(rng, {width, width}, bw, prefix + ".attn.wv");
    p.bv = uniform_parameter<T>(rng, {width}, bw, prefix + ".attn.bv");
    p.wo = uniform_parameter<T>(rng, {width, width}, bw, prefix + ".attn.wo");
    p.bo = uniform_parameter<T>(rng, {width}, bw, prefix + ".attn.bo");
    p.ln2_gamma = constant_parameter<T>({width}, T(1), prefix + ".ln2.gamma");
    p.ln2_beta = constant_parameter<T>({width}, T(0), prefix + ".ln2.beta");
    p.mlp_w1 = uniform_parameter<T>(rng, {mlp_hidden, width}, bw, prefix + ".mlp.w1");
    p.mlp_b1 = uniform_parameter<T>(rng, {mlp_hidden}, bw, prefix + ".mlp.b1");
    p.mlp_w2 = uniform_parameter<T>(rng, {width, mlp_hidden}, bh, prefix + ".mlp.w2");
    p.mlp_b2 = uniform_parameter<T>(rng, {width}, bh, prefix + ".mlp.b2");
    return p;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    for (const auto* t : {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_gamma, &ln2_beta,
                          &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2})
      s.add(*t);
    return s;
  }
};

/// Z = x + MHA(LN(x)); U = Z + MLP(LN(Z)). Accepts [L, d] or [B, L, d].
/// No positional encoding, so the block is equivariant to token permutations.
template <class T>
Tensor<T> attention_block(const Tensor<T>& tokens, const AttentionBlockParams<T>& p) {
  if (tokens.rank() != 2 && tokens.rank() != 3)
    throw DimensionError("attention_block: expected [L, d] or [B, L, d], got " + to_string(tokens.shape()));
  if (tokens.shape().back() != p.width)
    throw DimensionError("attention_block: token width " + std::to_string(tokens.shape().back()) + " vs block width " +
                         std::to_string(p.width));
  if (p.width % p.heads != 0) throw ConfigError("attention_block: width not divisible by head count");
  const bool batched = tokens.rank() == 3;
  const Tensor<T> x = batched ? tokens : reshape(tokens, Shape{1, tokens.dim(0), tokens.dim(1)});

  const Tensor<T> h = layer_norm(x, p.ln1_gamma, p.ln1_beta);
  const Tensor<T> attn =
      multi_head_attention(affine(h, p.wq, p.bq), affine(h, p.wk, p.bk), affine(h, p.wv, p.bv), p.heads);
  const Tensor<T> z = add(x, affine(attn, p.wo, p.bo));
  const Tensor<T> h2 = layer_norm(z, p.ln2_gamma, p.ln2_beta);
  const Tensor<T> u = add(z, affine(gelu(affine(h2, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2));
  return batched ? u : reshape(u, tokens.shape());
}

}  // namespace cigmae
