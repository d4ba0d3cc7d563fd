#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lsmtcr/nn/ops.hpp"
#include "lsmtcr/nn/params.hpp"

namespace lsmtcr::nn {

/// Per-forward settings shared by every layer. Dropout masks are derived from
/// (seed, step, sample, site) so that a forward pass is reproducible.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;

  DropoutSpec site(std::uint64_t site_id) const;
};

struct NormWeights {
  Tensor gain;
  Tensor bias;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 0;
  std::size_t d_head = 0;
};

/// Gated (GEGLU) feed-forward weights.
struct GegluWeights {
  Tensor w_a, b_a, w_b, b_b, w_o, b_o;
};

struct GeluFfnWeights {
  Tensor w1, b1, w2, b2;
};

void add_norm_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t width);
void add_attention_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_query,
                          std::size_t d_kv, std::size_t heads, std::size_t d_head, std::size_t d_out);
void add_geglu_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_model, std::size_t d_ff);
void add_gelu_ffn_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_model,
                         std::size_t d_ff);
void add_linear_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t in, std::size_t out);

NormWeights bind_norm(const ParamSet& params, const std::string& prefix);
AttentionWeights bind_attention(const ParamSet& params, const std::string& prefix, std::size_t heads,
                                std::size_t d_head);
GegluWeights bind_geglu(const ParamSet& params, const std::string& prefix);
GeluFfnWeights bind_gelu_ffn(const ParamSet& params, const std::string& prefix);

Tensor apply_norm(const Tensor& x, const NormWeights& w);

/// Multi-head attention of queries from x_q [Sq, Dq] over x_kv [Sk, Dkv].
/// With use_rope, Q and K rows are rotated by their sequence index.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            const AttentionMask& mask, bool use_rope);

/// GELU(X W_a + b_a) ⊙ (X W_b + b_b), projected by W_o, b_o.
Tensor geglu(const Tensor& x, const GegluWeights& w);

/// LayerNorm(Dropout(geglu(X)) + X): the post-norm gated block.
Tensor geglu_ffn(const Tensor& x, const GegluWeights& w, const NormWeights& norm, const DropoutSpec& drop);

/// GELU(H W1 + b1) W2 + b2.
Tensor gelu_ffn(const Tensor& x, const GeluFfnWeights& w);

}  // namespace lsmtcr::nn
