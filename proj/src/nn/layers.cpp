#include "lsmtcr/nn/layers.hpp"

#include <numeric>

#include "lsmtcr/util/random.hpp"

namespace lsmtcr::nn {

DropoutSpec ForwardContext::site(std::uint64_t site_id) const {
  return {dropout, mix_seed({seed, step, sample, site_id}), training};
}

void add_norm_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t width) {
  layout.push_back({prefix + ".gain", {width}, Init::ones, false});
  layout.push_back({prefix + ".bias", {width}, Init::zeros, false});
}

void add_linear_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t in, std::size_t out) {
  layout.push_back({prefix + ".w", {in, out}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b", {out}, Init::zeros, false});
}

void add_attention_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_query,
                          std::size_t d_kv, std::size_t heads, std::size_t d_head, std::size_t d_out) {
  const std::size_t inner = heads * d_head;
  layout.push_back({prefix + ".wq", {d_query, inner}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".bq", {inner}, Init::zeros, false});
  layout.push_back({prefix + ".wk", {d_kv, inner}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".bk", {inner}, Init::zeros, false});
  layout.push_back({prefix + ".wv", {d_kv, inner}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".bv", {inner}, Init::zeros, false});
  layout.push_back({prefix + ".wo", {inner, d_out}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".bo", {d_out}, Init::zeros, false});
}

void add_geglu_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_model, std::size_t d_ff) {
  layout.push_back({prefix + ".w_a", {d_model, d_ff}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b_a", {d_ff}, Init::zeros, false});
  layout.push_back({prefix + ".w_b", {d_model, d_ff}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b_b", {d_ff}, Init::zeros, false});
  layout.push_back({prefix + ".w_o", {d_ff, d_model}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b_o", {d_model}, Init::zeros, false});
}

void add_gelu_ffn_layout(std::vector<ParamSpec>& layout, const std::string& prefix, std::size_t d_model,
                         std::size_t d_ff) {
  layout.push_back({prefix + ".w1", {d_model, d_ff}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b1", {d_ff}, Init::zeros, false});
  layout.push_back({prefix + ".w2", {d_ff, d_model}, Init::xavier_uniform, true});
  layout.push_back({prefix + ".b2", {d_model}, Init::zeros, false});
}

NormWeights bind_norm(const ParamSet& params, const std::string& prefix) {
  return {params.get(prefix + ".gain"), params.get(prefix + ".bias")};
}

AttentionWeights bind_attention(const ParamSet& params, const std::string& prefix, std::size_t heads,
                                std::size_t d_head) {
  AttentionWeights w;
  w.wq = params.get(prefix + ".wq");
  w.bq = params.get(prefix + ".bq");
  w.wk = params.get(prefix + ".wk");
  w.bk = params.get(prefix + ".bk");
  w.wv = params.get(prefix + ".wv");
  w.bv = params.get(prefix + ".bv");
  w.wo = params.get(prefix + ".wo");
  w.bo = params.get(prefix + ".bo");
  w.heads = heads;
  w.d_head = d_head;
  return w;
}

GegluWeights bind_geglu(const ParamSet& params, const std::string& prefix) {
  return {params.get(prefix + ".w_a"), params.get(prefix + ".b_a"), params.get(prefix + ".w_b"),
          params.get(prefix + ".b_b"), params.get(prefix + ".w_o"), params.get(prefix + ".b_o")};
}

GeluFfnWeights bind_gelu_ffn(const ParamSet& params, const std::string& prefix) {
  return {params.get(prefix + ".w1"), params.get(prefix + ".b1"), params.get(prefix + ".w2"),
          params.get(prefix + ".b2")};
}

Tensor apply_norm(const Tensor& x, const NormWeights& w) { return layer_norm(x, w.gain, w.bias); }

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            const AttentionMask& mask, bool use_rope) {
  Tensor q = split_heads(linear(x_q, w.wq, w.bq), w.heads);
  Tensor k = split_heads(linear(x_kv, w.wk, w.bk), w.heads);
  Tensor v = split_heads(linear(x_kv, w.wv, w.bv), w.heads);
  if (use_rope) {
    std::vector<std::size_t> qpos(x_q.dim(0)), kpos(x_kv.dim(0));
    std::iota(qpos.begin(), qpos.end(), std::size_t{0});
    std::iota(kpos.begin(), kpos.end(), std::size_t{0});
    q = rope(q, qpos);
    k = rope(k, kpos);
  }
  return linear(merge_heads(masked_attention(q, k, v, mask)), w.wo, w.bo);
}

Tensor geglu(const Tensor& x, const GegluWeights& w) {
  Tensor y = mul(gelu(linear(x, w.w_a, w.b_a)), linear(x, w.w_b, w.b_b));
  return linear(y, w.w_o, w.b_o);
}

Tensor geglu_ffn(const Tensor& x, const GegluWeights& w, const NormWeights& norm, const DropoutSpec& drop) {
  return apply_norm(add(dropout(geglu(x, w), drop), x), norm);
}

Tensor gelu_ffn(const Tensor& x, const GeluFfnWeights& w) {
  return linear(gelu(linear(x, w.w1, w.b1)), w.w2, w.b2);
}

}  // namespace lsmtcr::nn
