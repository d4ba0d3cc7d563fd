#include "lsmtcr/gpt/cdr3_gpt.hpp"

#include <stdexcept>

#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::gpt {

using nn::Tensor;
using seqdata::Vocabulary;

GptConfig GptConfig::desk() { return GptConfig{}; }

GptConfig GptConfig::full() {
  GptConfig c;
  c.d_model = 768;
  c.heads = 12;
  c.d_head = 64;
  c.layers = 8;
  c.d_ff = 3072;
  c.cond_dim = 768;
  return c;
}

void GptConfig::validate() const {
  if (vocab != Vocabulary::size) throw std::invalid_argument("decoder vocab must match the token vocabulary");
  if (d_model == 0 || heads == 0 || d_head == 0 || layers == 0 || d_ff == 0 || max_len < 2) {
    throw std::invalid_argument("decoder dimensions must be positive");
  }
  if (d_head % 2 != 0) throw std::invalid_argument("rotary embedding needs an even head width");
  if (conditioned && cond_dim == 0) throw std::invalid_argument("conditioning width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

nn::Metadata GptConfig::to_metadata() const {
  return {
      {"model", "cdr3-gpt"},
      {"vocab", std::to_string(vocab)},
      {"vocab_hash", std::to_string(Vocabulary::hash())},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"d_head", std::to_string(d_head)},
      {"layers", std::to_string(layers)},
      {"d_ff", std::to_string(d_ff)},
      {"max_len", std::to_string(max_len)},
      {"dropout", nn::format_double(dropout)},
      {"conditioned", conditioned ? "1" : "0"},
      {"cond_dim", std::to_string(cond_dim)},
  };
}

GptConfig GptConfig::from_metadata(const nn::Metadata& meta) {
  GptConfig c;
  c.vocab = nn::meta_size(meta, "vocab");
  c.d_model = nn::meta_size(meta, "d_model");
  c.heads = nn::meta_size(meta, "heads");
  c.d_head = nn::meta_size(meta, "d_head");
  c.layers = nn::meta_size(meta, "layers");
  c.d_ff = nn::meta_size(meta, "d_ff");
  c.max_len = nn::meta_size(meta, "max_len");
  c.dropout = nn::meta_double(meta, "dropout");
  c.conditioned = nn::meta_size(meta, "conditioned") != 0;
  c.cond_dim = nn::meta_size(meta, "cond_dim");
  return c;
}

std::vector<nn::ParamSpec> gpt_layout(const GptConfig& c) {
  std::vector<nn::ParamSpec> layout;
  layout.push_back({"tok_emb", {c.vocab, c.d_model}, nn::Init::xavier_uniform, true});
  nn::add_norm_layout(layout, "emb_ln", c.d_model);
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    nn::add_norm_layout(layout, p + ".ln1", c.d_model);
    nn::add_attention_layout(layout, p + ".attn", c.d_model, c.d_model, c.heads, c.d_head, c.d_model);
    if (c.conditioned) {
      nn::add_norm_layout(layout, p + ".xln", c.d_model);
      nn::add_attention_layout(layout, p + ".xattn", c.d_model, c.cond_dim, c.heads, c.d_head, c.d_model);
      layout.push_back({p + ".xgate", {1}, nn::Init::zeros, false});
    }
    nn::add_norm_layout(layout, p + ".ln2", c.d_model);
    nn::add_geglu_layout(layout, p + ".ffn", c.d_model, c.d_ff);
  }
  nn::add_norm_layout(layout, "final_ln", c.d_model);
  return layout;
}

bool is_adapter_parameter(const std::string& name) {
  return nn::glob_match("blocks.*.xln.*", name) || nn::glob_match("blocks.*.xattn.*", name) ||
         nn::glob_match("blocks.*.xgate", name);
}

nn::AttentionMask combined_mask(std::span<const int> ids) {
  const std::size_t s = ids.size();
  nn::AttentionMask mask(s, s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      if (j > i || ids[i] == Vocabulary::pad_id || ids[j] == Vocabulary::pad_id) mask.forbid(i, j);
    }
  }
  return mask;
}

Cdr3Gpt::Cdr3Gpt(GptConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  params_ = nn::ParamSet::create(gpt_layout(config_), rng);
  bind();
}

void Cdr3Gpt::bind() {
  tok_emb_ = params_.get("tok_emb");
  emb_ln_ = nn::bind_norm(params_, "emb_ln");
  final_ln_ = nn::bind_norm(params_, "final_ln");
  blocks_.clear();
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    Block b;
    b.ln1 = nn::bind_norm(params_, p + ".ln1");
    b.attn = nn::bind_attention(params_, p + ".attn", config_.heads, config_.d_head);
    if (config_.conditioned) {
      b.xln = nn::bind_norm(params_, p + ".xln");
      b.xattn = nn::bind_attention(params_, p + ".xattn", config_.heads, config_.d_head);
      b.xgate = params_.get(p + ".xgate");
    }
    b.ln2 = nn::bind_norm(params_, p + ".ln2");
    b.ffn = nn::bind_geglu(params_, p + ".ffn");
    blocks_.push_back(std::move(b));
  }
}

Tensor Cdr3Gpt::forward(std::span<const int> ids, const bert::EncodedEpitope* cond,
                        const nn::ForwardContext& ctx) const {
  if (ids.empty()) throw std::invalid_argument("empty token sequence");
  if (ids.size() > config_.max_len) {
    throw std::invalid_argument("sequence of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                                std::to_string(config_.max_len));
  }
  if (config_.conditioned && cond == nullptr) throw std::invalid_argument("conditioned decoder needs epitope states");

  Tensor h = nn::dropout(nn::apply_norm(nn::embed(ids, tok_emb_, true), emb_ln_), ctx.site(1));
  const nn::AttentionMask self_mask = combined_mask(ids);
  nn::AttentionMask cross_mask;
  if (config_.conditioned) {
    if (cond->states.rank() != 2 || cond->states.dim(1) != config_.cond_dim || cond->valid.size() != cond->states.dim(0)) {
      throw std::invalid_argument("epitope states do not match the adapter width");
    }
    cross_mask = nn::AttentionMask(ids.size(), cond->valid.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < cond->valid.size(); ++j) {
        if (ids[i] == Vocabulary::pad_id || !cond->valid[j]) cross_mask.forbid(i, j);
      }
    }
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const Tensor n1 = nn::apply_norm(h, b.ln1);
    Tensor a = nn::multi_head_attention(n1, n1, b.attn, self_mask, true);
    h = nn::add(h, nn::dropout(a, ctx.site(100 * i + 10)));
    if (config_.conditioned) {
      Tensor x = nn::multi_head_attention(nn::apply_norm(h, b.xln), cond->states, b.xattn, cross_mask, false);
      h = nn::add(h, nn::scale_by(nn::dropout(x, ctx.site(100 * i + 11)), b.xgate));
    }
    h = nn::add(h, nn::dropout(nn::geglu(nn::apply_norm(h, b.ln2), b.ffn), ctx.site(100 * i + 12)));
  }
  return nn::matmul(nn::apply_norm(h, final_ln_), tok_emb_, true);
}

Cdr3Gpt Cdr3Gpt::clone() const {
  Cdr3Gpt copy(config_, 0);
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    const auto src = params_.items()[i].tensor.values();
    auto dst = copy.params_.items()[i].tensor.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
    copy.params_.items()[i].trainable = params_.items()[i].trainable;
  }
  return copy;
}

Cdr3Gpt Cdr3Gpt::with_adapters(std::size_t cond_dim, std::uint64_t seed) const {
  if (config_.conditioned) throw std::logic_error("decoder already carries adapters");
  GptConfig c = config_;
  c.conditioned = true;
  c.cond_dim = cond_dim;
  Cdr3Gpt out(c, seed);
  for (const auto& p : params_.items()) {
    const auto src = p.tensor.values();
    auto dst = out.params_.at(p.name).tensor.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

Cdr3Gpt Cdr3Gpt::from_checkpoint(const nn::CheckpointData& data) {
  nn::expect_metadata(data, "model", "cdr3-gpt");
  nn::expect_metadata(data, "vocab", std::to_string(Vocabulary::size));
  nn::expect_metadata(data, "vocab_hash", std::to_string(Vocabulary::hash()));
  Cdr3Gpt model(GptConfig::from_metadata(data.metadata), 0);
  nn::restore_parameters(model.params_, data);
  return model;
}

Tensor lm_loss(std::span<const TokenPredictions> batch) { return nn::masked_token_loss(batch); }

Tensor lm_loss(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& valid) {
  TokenPredictions item{logits, std::vector<int>(targets.begin(), targets.end()), valid};
  return lm_loss(std::span<const TokenPredictions>(&item, 1));
}

}  // namespace lsmtcr::gpt
