#include "lsmtcr/assembler/gene_predictor.hpp"

#include <numeric>
#include <stdexcept>

#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::assembler {

using nn::Tensor;
using seqdata::Vocabulary;

namespace {

std::size_t argmax(const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

Tensor as_row(const Tensor& v) {
  return Tensor::make_result({1, v.numel()}, std::vector<double>(v.values().begin(), v.values().end()), {v},
                             [](nn::detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

}  // namespace

GenePredictorConfig GenePredictorConfig::desk() { return GenePredictorConfig{}; }

GenePredictorConfig GenePredictorConfig::full() {
  GenePredictorConfig c;
  c.d_model = 512;
  c.heads = 8;
  c.d_head = 64;
  c.layers = 4;
  c.d_ff = 2048;
  return c;
}

void GenePredictorConfig::validate() const {
  if (vocab != Vocabulary::size) throw std::invalid_argument("gene predictor vocab must match the token vocabulary");
  if (d_model == 0 || heads == 0 || d_head == 0 || layers == 0 || d_ff == 0 || max_len == 0) {
    throw std::invalid_argument("gene predictor dimensions must be positive");
  }
  if (n_v == 0 || n_j == 0) throw std::invalid_argument("gene vocabularies must be non-empty");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

nn::Metadata GenePredictorConfig::to_metadata(const std::string& prefix) const {
  return {
      {prefix + "d_model", std::to_string(d_model)}, {prefix + "heads", std::to_string(heads)},
      {prefix + "d_head", std::to_string(d_head)},   {prefix + "layers", std::to_string(layers)},
      {prefix + "d_ff", std::to_string(d_ff)},       {prefix + "max_len", std::to_string(max_len)},
      {prefix + "n_v", std::to_string(n_v)},         {prefix + "n_j", std::to_string(n_j)},
      {prefix + "dropout", nn::format_double(dropout)},
  };
}

GenePredictorConfig GenePredictorConfig::from_metadata(const nn::Metadata& meta, const std::string& prefix) {
  GenePredictorConfig c;
  c.d_model = nn::meta_size(meta, prefix + "d_model");
  c.heads = nn::meta_size(meta, prefix + "heads");
  c.d_head = nn::meta_size(meta, prefix + "d_head");
  c.layers = nn::meta_size(meta, prefix + "layers");
  c.d_ff = nn::meta_size(meta, prefix + "d_ff");
  c.max_len = nn::meta_size(meta, prefix + "max_len");
  c.n_v = nn::meta_size(meta, prefix + "n_v");
  c.n_j = nn::meta_size(meta, prefix + "n_j");
  c.dropout = nn::meta_double(meta, prefix + "dropout");
  return c;
}

constexpr double head_gain = 0.25;

std::vector<nn::ParamSpec> gene_predictor_layout(const GenePredictorConfig& c) {
  std::vector<nn::ParamSpec> layout;
  layout.push_back({"tok_emb", {c.vocab, c.d_model}, nn::Init::xavier_uniform, true});
  layout.push_back({"pos_emb", {c.max_len, c.d_model}, nn::Init::xavier_uniform, true});
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    nn::add_attention_layout(layout, p + ".attn", c.d_model, c.d_model, c.heads, c.d_head, c.d_model);
    nn::add_norm_layout(layout, p + ".ln1", c.d_model);
    nn::add_gelu_ffn_layout(layout, p + ".ffn", c.d_model, c.d_ff);
    nn::add_norm_layout(layout, p + ".ln2", c.d_model);
  }
  // small heads: an untrained predictor should be close to uniform over genes
  layout.push_back({"v_head.w", {c.d_model, c.n_v}, nn::Init::xavier_uniform, true, head_gain});
  layout.push_back({"v_head.b", {c.n_v}, nn::Init::zeros, false});
  layout.push_back({"j_head.w", {c.d_model, c.n_j}, nn::Init::xavier_uniform, true, head_gain});
  layout.push_back({"j_head.b", {c.n_j}, nn::Init::zeros, false});
  return layout;
}

Tensor pool(const Tensor& h, std::span<const bool> include) { return nn::mean_rows(h, include); }

GenePredictor::GenePredictor(GenePredictorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  params_ = nn::ParamSet::create(gene_predictor_layout(config_), rng);
  bind();
}

void GenePredictor::bind() {
  tok_emb_ = params_.get("tok_emb");
  pos_emb_ = params_.get("pos_emb");
  v_w_ = params_.get("v_head.w");
  v_b_ = params_.get("v_head.b");
  j_w_ = params_.get("j_head.w");
  j_b_ = params_.get("j_head.b");
  layers_.clear();
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    layers_.push_back({nn::bind_attention(params_, p + ".attn", config_.heads, config_.d_head),
                       nn::bind_norm(params_, p + ".ln1"), nn::bind_gelu_ffn(params_, p + ".ffn"),
                       nn::bind_norm(params_, p + ".ln2")});
  }
}

Tensor GenePredictor::encode(std::span<const int> ids, const nn::ForwardContext& ctx) const {
  if (ids.empty()) throw std::invalid_argument("empty CDR3");
  if (ids.size() > config_.max_len) {
    throw std::invalid_argument("CDR3 of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                                std::to_string(config_.max_len));
  }
  std::vector<std::size_t> rows(ids.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tensor h = nn::add(nn::embed(ids, tok_emb_, true), nn::gather_rows(pos_emb_, rows));
  nn::AttentionMask mask(ids.size(), ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] != Vocabulary::pad_id) continue;
    for (std::size_t i = 0; i < ids.size(); ++i) mask.forbid(i, j);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    Tensor a = nn::multi_head_attention(h, h, l.attn, mask, false);
    h = nn::apply_norm(nn::add(h, nn::dropout(a, ctx.site(100 * i + 1))), l.ln1);
    h = nn::apply_norm(nn::add(h, nn::dropout(nn::gelu_ffn(h, l.ffn), ctx.site(100 * i + 2))), l.ln2);
  }
  return h;
}

GeneLogits GenePredictor::forward(std::span<const int> ids, const nn::ForwardContext& ctx) const {
  const Tensor h = encode(ids, ctx);
  nn::Flags include(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) include[i] = ids[i] != Vocabulary::pad_id;
  const Tensor pooled = pool(h, include);
  return {nn::linear(pooled, v_w_, v_b_), nn::linear(pooled, j_w_, j_b_)};
}

GenePrediction GenePredictor::predict(std::span<const int> ids) const {
  nn::NoGradGuard guard;
  const GeneLogits logits = forward(ids, nn::ForwardContext{});
  GenePrediction out;
  out.p_v = nn::softmax(logits.v.values());
  out.p_j = nn::softmax(logits.j.values());
  out.v = argmax(out.p_v);
  out.j = argmax(out.p_j);
  return out;
}

Tensor gene_loss(const GeneLogits& logits, std::size_t y_v, std::size_t y_j) {
  if (y_v >= logits.v.numel()) throw std::out_of_range("V label " + std::to_string(y_v) + " outside the V vocabulary");
  if (y_j >= logits.j.numel()) throw std::out_of_range("J label " + std::to_string(y_j) + " outside the J vocabulary");
  const nn::Flags one(1, true);
  const int tv = static_cast<int>(y_v);
  const int tj = static_cast<int>(y_j);
  return nn::add(nn::cross_entropy_sum(as_row(logits.v), std::span<const int>(&tv, 1), one),
                 nn::cross_entropy_sum(as_row(logits.j), std::span<const int>(&tj, 1), one));
}

}  // namespace lsmtcr::assembler
