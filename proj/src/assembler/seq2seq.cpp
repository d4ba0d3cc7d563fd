#include "lsmtcr/assembler/seq2seq.hpp"

#include <limits>
#include <numeric>
#include <stdexcept>

#include "lsmtcr/gpt/sampler.hpp"
#include "lsmtcr/seqdata/vocab.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::assembler {

using nn::Tensor;
using seqdata::Vocabulary;

namespace {

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

Tensor as_row(const Tensor& v) {
  return Tensor::make_result({1, v.numel()}, std::vector<double>(v.values().begin(), v.values().end()), {v},
                             [](nn::detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

}  // namespace

Seq2SeqConfig Seq2SeqConfig::desk() { return Seq2SeqConfig{}; }

Seq2SeqConfig Seq2SeqConfig::full() {
  Seq2SeqConfig c;
  c.d_model = 512;
  c.heads = 8;
  c.d_head = 64;
  c.enc_layers = 4;
  c.dec_layers = 4;
  c.d_ff = 2048;
  return c;
}

void Seq2SeqConfig::validate() const {
  if (vocab != Vocabulary::size) throw std::invalid_argument("generator vocab must match the token vocabulary");
  if (d_model == 0 || d_model % 2 != 0) throw std::invalid_argument("generator width must be even and positive");
  if (heads == 0 || d_head == 0 || enc_layers == 0 || dec_layers == 0 || d_ff == 0 || max_cdr3_len == 0 ||
      max_full_len == 0) {
    throw std::invalid_argument("generator dimensions must be positive");
  }
  if (n_v == 0 || n_j == 0) throw std::invalid_argument("gene vocabularies must be non-empty");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

nn::Metadata Seq2SeqConfig::to_metadata(const std::string& prefix) const {
  return {
      {prefix + "d_model", std::to_string(d_model)},
      {prefix + "heads", std::to_string(heads)},
      {prefix + "d_head", std::to_string(d_head)},
      {prefix + "enc_layers", std::to_string(enc_layers)},
      {prefix + "dec_layers", std::to_string(dec_layers)},
      {prefix + "d_ff", std::to_string(d_ff)},
      {prefix + "max_cdr3_len", std::to_string(max_cdr3_len)},
      {prefix + "max_full_len", std::to_string(max_full_len)},
      {prefix + "n_v", std::to_string(n_v)},
      {prefix + "n_j", std::to_string(n_j)},
      {prefix + "dropout", nn::format_double(dropout)},
  };
}

Seq2SeqConfig Seq2SeqConfig::from_metadata(const nn::Metadata& meta, const std::string& prefix) {
  Seq2SeqConfig c;
  c.d_model = nn::meta_size(meta, prefix + "d_model");
  c.heads = nn::meta_size(meta, prefix + "heads");
  c.d_head = nn::meta_size(meta, prefix + "d_head");
  c.enc_layers = nn::meta_size(meta, prefix + "enc_layers");
  c.dec_layers = nn::meta_size(meta, prefix + "dec_layers");
  c.d_ff = nn::meta_size(meta, prefix + "d_ff");
  c.max_cdr3_len = nn::meta_size(meta, prefix + "max_cdr3_len");
  c.max_full_len = nn::meta_size(meta, prefix + "max_full_len");
  c.n_v = nn::meta_size(meta, prefix + "n_v");
  c.n_j = nn::meta_size(meta, prefix + "n_j");
  c.dropout = nn::meta_double(meta, prefix + "dropout");
  return c;
}

std::vector<nn::ParamSpec> seq2seq_layout(const Seq2SeqConfig& c) {
  std::vector<nn::ParamSpec> layout;
  const std::size_t d = c.d_model;
  layout.push_back({"aa_emb", {c.vocab, d}, nn::Init::xavier_uniform, true});
  layout.push_back({"enc_pos", {c.max_cdr3_len, d}, nn::Init::xavier_uniform, true});
  layout.push_back({"dec_pos", {c.max_full_len + 1, d}, nn::Init::xavier_uniform, true});
  layout.push_back({"gene.v_emb", {c.n_v, d / 2}, nn::Init::xavier_uniform, true});
  layout.push_back({"gene.j_emb", {c.n_j, d / 2}, nn::Init::xavier_uniform, true});
  nn::add_linear_layout(layout, "gene.fuse", d, d);
  nn::add_norm_layout(layout, "gene.ln", d);
  for (std::size_t i = 0; i < c.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    nn::add_attention_layout(layout, p + ".attn", d, d, c.heads, c.d_head, d);
    nn::add_norm_layout(layout, p + ".ln1", d);
    nn::add_gelu_ffn_layout(layout, p + ".ffn", d, c.d_ff);
    nn::add_norm_layout(layout, p + ".ln2", d);
  }
  for (std::size_t i = 0; i < c.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    nn::add_attention_layout(layout, p + ".self", d, d, c.heads, c.d_head, d);
    nn::add_norm_layout(layout, p + ".ln1", d);
    nn::add_attention_layout(layout, p + ".cross", d, d, c.heads, c.d_head, d);
    nn::add_norm_layout(layout, p + ".ln2", d);
    nn::add_gelu_ffn_layout(layout, p + ".ffn", d, c.d_ff);
    nn::add_norm_layout(layout, p + ".ln3", d);
  }
  nn::add_linear_layout(layout, "out", d, c.vocab);
  return layout;
}

FullLengthGenerator::FullLengthGenerator(Seq2SeqConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  params_ = nn::ParamSet::create(seq2seq_layout(config_), rng);
  bind();
}

void FullLengthGenerator::bind() {
  aa_emb_ = params_.get("aa_emb");
  enc_pos_ = params_.get("enc_pos");
  dec_pos_ = params_.get("dec_pos");
  v_emb_ = params_.get("gene.v_emb");
  j_emb_ = params_.get("gene.j_emb");
  fuse_w_ = params_.get("gene.fuse.w");
  fuse_b_ = params_.get("gene.fuse.b");
  gene_ln_ = nn::bind_norm(params_, "gene.ln");
  out_w_ = params_.get("out.w");
  out_b_ = params_.get("out.b");
  enc_.clear();
  dec_.clear();
  for (std::size_t i = 0; i < config_.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    enc_.push_back({nn::bind_attention(params_, p + ".attn", config_.heads, config_.d_head),
                    nn::bind_norm(params_, p + ".ln1"), nn::bind_gelu_ffn(params_, p + ".ffn"),
                    nn::bind_norm(params_, p + ".ln2")});
  }
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    dec_.push_back({nn::bind_attention(params_, p + ".self", config_.heads, config_.d_head),
                    nn::bind_norm(params_, p + ".ln1"),
                    nn::bind_attention(params_, p + ".cross", config_.heads, config_.d_head),
                    nn::bind_norm(params_, p + ".ln2"), nn::bind_gelu_ffn(params_, p + ".ffn"),
                    nn::bind_norm(params_, p + ".ln3")});
  }
}

Tensor FullLengthGenerator::embed_genes(std::size_t v, std::size_t j) const {
  if (v >= config_.n_v) throw std::out_of_range("V gene index " + std::to_string(v) + " outside the vocabulary");
  if (j >= config_.n_j) throw std::out_of_range("J gene index " + std::to_string(j) + " outside the vocabulary");
  const int vi = static_cast<int>(v);
  const int ji = static_cast<int>(j);
  Tensor g = nn::concat_cols(nn::embed(std::span<const int>(&vi, 1), v_emb_, false),
                             nn::embed(std::span<const int>(&ji, 1), j_emb_, false));
  g = nn::apply_norm(nn::linear(g, fuse_w_, fuse_b_), gene_ln_);
  return Tensor::make_result({config_.d_model}, std::vector<double>(g.values().begin(), g.values().end()), {g},
                             [](nn::detail::Node& self) {
                               auto& grad = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += self.grad[i];
                             });
}

EncoderMemory FullLengthGenerator::encode(std::span<const int> cdr3, std::size_t v, std::size_t j,
                                          const nn::ForwardContext& ctx) const {
  return encode_with_gene(cdr3, embed_genes(v, j), ctx);
}

EncoderMemory FullLengthGenerator::encode_with_gene(std::span<const int> cdr3, const Tensor& g_gene,
                                                    const nn::ForwardContext& ctx) const {
  if (cdr3.empty()) throw std::invalid_argument("empty CDR3");
  if (cdr3.size() > config_.max_cdr3_len) throw std::invalid_argument("CDR3 exceeds the generator's max length");
  if (g_gene.numel() != config_.d_model) throw std::invalid_argument("gene context has the wrong width");
  Tensor h_cdr3 = nn::add(nn::embed(cdr3, aa_emb_, true), nn::gather_rows(enc_pos_, first_rows(cdr3.size())));
  const Tensor parts[] = {as_row(g_gene), h_cdr3};
  Tensor h = nn::concat_rows(parts);
  EncoderMemory mem;
  mem.valid.assign(cdr3.size() + 1, true);
  for (std::size_t i = 0; i < cdr3.size(); ++i) mem.valid[i + 1] = cdr3[i] != Vocabulary::pad_id;
  nn::AttentionMask mask(mem.valid.size(), mem.valid.size());
  for (std::size_t c = 0; c < mem.valid.size(); ++c) {
    if (mem.valid[c]) continue;
    for (std::size_t r = 0; r < mem.valid.size(); ++r) mask.forbid(r, c);
  }
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const EncLayer& l = enc_[i];
    Tensor a = nn::multi_head_attention(h, h, l.attn, mask, false);
    h = nn::apply_norm(nn::add(h, nn::dropout(a, ctx.site(100 * i + 1))), l.ln1);
    h = nn::apply_norm(nn::add(h, nn::dropout(nn::gelu_ffn(h, l.ffn), ctx.site(100 * i + 2))), l.ln2);
  }
  mem.states = h;
  return mem;
}

nn::AttentionMask decoder_self_mask(std::span<const int> prefix) {
  const std::size_t t = prefix.size();
  nn::AttentionMask mask(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      if (j > i || prefix[i] == Vocabulary::pad_id || prefix[j] == Vocabulary::pad_id) mask.forbid(i, j);
    }
  }
  return mask;
}

Tensor FullLengthGenerator::decode(std::span<const int> prefix, const EncoderMemory& memory,
                                   const nn::ForwardContext& ctx) const {
  if (prefix.empty()) throw std::invalid_argument("empty decoder prefix");
  if (prefix.size() > config_.max_full_len + 1) throw std::invalid_argument("decoder prefix exceeds max length");
  Tensor h = nn::add(nn::embed(prefix, aa_emb_, true), nn::gather_rows(dec_pos_, first_rows(prefix.size())));
  const std::size_t t = prefix.size();
  const nn::AttentionMask self_mask = decoder_self_mask(prefix);
  nn::AttentionMask cross_mask(t, memory.valid.size());
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < memory.valid.size(); ++j) {
      if (!memory.valid[j]) cross_mask.forbid(i, j);
    }
  }
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const DecLayer& l = dec_[i];
    Tensor a = nn::multi_head_attention(h, h, l.self_attn, self_mask, false);
    h = nn::apply_norm(nn::add(h, nn::dropout(a, ctx.site(1000 + 100 * i + 1))), l.ln1);
    Tensor c = nn::multi_head_attention(h, memory.states, l.cross_attn, cross_mask, false);
    h = nn::apply_norm(nn::add(h, nn::dropout(c, ctx.site(1000 + 100 * i + 2))), l.ln2);
    h = nn::apply_norm(nn::add(h, nn::dropout(nn::gelu_ffn(h, l.ffn), ctx.site(1000 + 100 * i + 3))), l.ln3);
  }
  return nn::linear(h, out_w_, out_b_);
}

nn::TokenPredictions FullLengthGenerator::teacher_forced(std::span<const int> cdr3, std::size_t v, std::size_t j,
                                                         std::span<const int> chain,
                                                         const nn::ForwardContext& ctx) const {
  nn::ShiftedSequence s = nn::shift_for_teacher_forcing(chain);
  const EncoderMemory mem = encode(cdr3, v, j, ctx);
  return {decode(s.inputs, mem, ctx), std::move(s.targets), std::move(s.valid)};
}

struct FullLengthGenerator::StepCache {
  struct Layer {
    std::vector<double> keys, values;  // [t, heads*d_head], appended per step
    Tensor cross_k, cross_v;           // split per head, fixed for the sequence
  };
  std::vector<Layer> layers;
  nn::AttentionMask cross_mask{1, 1};
};

Tensor FullLengthGenerator::step(int token, std::size_t pos, StepCache& cache) const {
  const int ids[] = {token};
  const std::size_t rows[] = {pos};
  Tensor h = nn::add(nn::embed(ids, aa_emb_, true), nn::gather_rows(dec_pos_, rows));
  const std::size_t t = pos + 1;
  const nn::AttentionMask open(1, t);  // causality is implied by what is cached
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const DecLayer& l = dec_[i];
    StepCache::Layer& c = cache.layers[i];
    const std::size_t inner = l.self_attn.heads * l.self_attn.d_head;
    const Tensor k = nn::linear(h, l.self_attn.wk, l.self_attn.bk);
    const Tensor v = nn::linear(h, l.self_attn.wv, l.self_attn.bv);
    c.keys.insert(c.keys.end(), k.values().begin(), k.values().end());
    c.values.insert(c.values.end(), v.values().begin(), v.values().end());
    const Tensor q = nn::split_heads(nn::linear(h, l.self_attn.wq, l.self_attn.bq), l.self_attn.heads);
    const Tensor keys = nn::split_heads(Tensor({t, inner}, c.keys), l.self_attn.heads);
    const Tensor values = nn::split_heads(Tensor({t, inner}, c.values), l.self_attn.heads);
    const Tensor a = nn::linear(nn::merge_heads(nn::masked_attention(q, keys, values, open)), l.self_attn.wo,
                                l.self_attn.bo);
    h = nn::apply_norm(nn::add(h, a), l.ln1);
    const Tensor cq = nn::split_heads(nn::linear(h, l.cross_attn.wq, l.cross_attn.bq), l.cross_attn.heads);
    const Tensor cx = nn::linear(nn::merge_heads(nn::masked_attention(cq, c.cross_k, c.cross_v, cache.cross_mask)),
                                 l.cross_attn.wo, l.cross_attn.bo);
    h = nn::apply_norm(nn::add(h, cx), l.ln2);
    h = nn::apply_norm(nn::add(h, nn::gelu_ffn(h, l.ffn)), l.ln3);
  }
  return nn::linear(h, out_w_, out_b_);
}

std::string FullLengthGenerator::generate(std::span<const int> cdr3, std::size_t v, std::size_t j,
                                          const Decoding& decoding) const {
  if (!(decoding.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  nn::NoGradGuard guard;
  const EncoderMemory mem = encode(cdr3, v, j, nn::ForwardContext{});
  StepCache cache;
  cache.cross_mask = nn::AttentionMask(1, mem.valid.size());
  for (std::size_t k = 0; k < mem.valid.size(); ++k) {
    if (!mem.valid[k]) cache.cross_mask.forbid(0, k);
  }
  for (const DecLayer& l : dec_) {
    cache.layers.push_back({{},
                            {},
                            nn::split_heads(nn::linear(mem.states, l.cross_attn.wk, l.cross_attn.bk), l.cross_attn.heads),
                            nn::split_heads(nn::linear(mem.states, l.cross_attn.wv, l.cross_attn.bv), l.cross_attn.heads)});
  }
  Rng rng(decoding.seed);
  std::vector<int> ids{Vocabulary::bos_id};
  while (ids.size() - 1 < config_.max_full_len) {
    const Tensor logits = step(ids.back(), ids.size() - 1, cache);
    std::vector<double> row(logits.values().begin(), logits.values().end());
    for (int special : {Vocabulary::pad_id, Vocabulary::mask_id, Vocabulary::bos_id, Vocabulary::unk_id}) {
      row[static_cast<std::size_t>(special)] = -std::numeric_limits<double>::infinity();
    }
    if (ids.size() == 1) row[Vocabulary::eos_id] = -std::numeric_limits<double>::infinity();
    const int token = gpt::sample_token(row, decoding.temperature, rng);
    if (token == Vocabulary::eos_id) break;
    ids.push_back(token);
  }
  return Vocabulary::decode(ids);
}

Tensor seq_loss(std::span<const nn::TokenPredictions> batch) { return nn::masked_token_loss(batch); }

Tensor seq_loss(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& valid) {
  nn::TokenPredictions item{logits, std::vector<int>(targets.begin(), targets.end()), valid};
  return nn::masked_token_loss(std::span<const nn::TokenPredictions>(&item, 1));
}

}  // namespace lsmtcr::assembler
