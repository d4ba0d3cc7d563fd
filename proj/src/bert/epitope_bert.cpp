#include "lsmtcr/bert/epitope_bert.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::bert {

using nn::Tensor;
using seqdata::Vocabulary;

namespace {

nn::AttentionMask padding_mask(std::span<const int> ids) {
  nn::AttentionMask mask(ids.size(), ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] != Vocabulary::pad_id) continue;
    for (std::size_t i = 0; i < ids.size(); ++i) mask.forbid(i, j);
  }
  return mask;
}

}  // namespace

std::string to_string(TimeEmbeddingKind kind) {
  return kind == TimeEmbeddingKind::learned ? "learned" : "sinusoidal";
}

TimeEmbeddingKind parse_time_embedding(const std::string& text) {
  if (text == "learned") return TimeEmbeddingKind::learned;
  if (text == "sinusoidal") return TimeEmbeddingKind::sinusoidal;
  throw std::invalid_argument("unknown time embedding '" + text + "'");
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full() {
  EncoderConfig c;
  c.d_model = 768;
  c.heads = 12;
  c.d_head = 64;
  c.layers = 12;
  c.d_ff = 3072;
  c.schedule.steps = 100;
  return c;
}

void EncoderConfig::validate() const {
  schedule.validate();
  if (vocab != Vocabulary::size) throw std::invalid_argument("encoder vocab must match the token vocabulary");
  if (d_model == 0 || heads == 0 || d_head == 0 || layers == 0 || d_ff == 0 || max_len == 0) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

nn::Metadata EncoderConfig::to_metadata() const {
  return {
      {"model", "epitope-bert"},
      {"vocab", std::to_string(vocab)},
      {"vocab_hash", std::to_string(Vocabulary::hash())},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"d_head", std::to_string(d_head)},
      {"layers", std::to_string(layers)},
      {"d_ff", std::to_string(d_ff)},
      {"max_len", std::to_string(max_len)},
      {"dropout", nn::format_double(dropout)},
      {"time_embedding", to_string(time_kind)},
      {"schedule.T", std::to_string(schedule.steps)},
      {"schedule.p_min", nn::format_double(schedule.p_min)},
      {"schedule.p_max", nn::format_double(schedule.p_max)},
      {"schedule.p_ref", nn::format_double(schedule.p_ref)},
  };
}

EncoderConfig EncoderConfig::from_metadata(const nn::Metadata& meta) {
  EncoderConfig c;
  c.vocab = nn::meta_size(meta, "vocab");
  c.d_model = nn::meta_size(meta, "d_model");
  c.heads = nn::meta_size(meta, "heads");
  c.d_head = nn::meta_size(meta, "d_head");
  c.layers = nn::meta_size(meta, "layers");
  c.d_ff = nn::meta_size(meta, "d_ff");
  c.max_len = nn::meta_size(meta, "max_len");
  c.dropout = nn::meta_double(meta, "dropout");
  c.time_kind = parse_time_embedding(nn::meta_string(meta, "time_embedding"));
  c.schedule.steps = static_cast<int>(nn::meta_size(meta, "schedule.T"));
  c.schedule.p_min = nn::meta_double(meta, "schedule.p_min");
  c.schedule.p_max = nn::meta_double(meta, "schedule.p_max");
  c.schedule.p_ref = nn::meta_double(meta, "schedule.p_ref");
  return c;
}

std::vector<nn::ParamSpec> encoder_layout(const EncoderConfig& c) {
  std::vector<nn::ParamSpec> layout;
  layout.push_back({"tok_emb", {c.vocab, c.d_model}, nn::Init::xavier_uniform, true});
  layout.push_back({"pos_emb", {c.max_len, c.d_model}, nn::Init::xavier_uniform, true});
  if (c.time_kind == TimeEmbeddingKind::learned) {
    layout.push_back({"time_emb", {static_cast<std::size_t>(c.schedule.steps) + 1, c.d_model},
                      nn::Init::xavier_uniform, true});
  }
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    nn::add_attention_layout(layout, p + ".attn", c.d_model, c.d_model, c.heads, c.d_head, c.d_model);
    nn::add_norm_layout(layout, p + ".ln1", c.d_model);
    nn::add_geglu_layout(layout, p + ".ffn", c.d_model, c.d_ff);
    nn::add_norm_layout(layout, p + ".ln2", c.d_model);
  }
  nn::add_linear_layout(layout, "head", c.d_model, c.d_model);
  return layout;
}

Tensor sinusoidal_time_codes(int steps, std::size_t d_model) {
  const std::size_t rows = static_cast<std::size_t>(steps) + 1;
  std::vector<double> v(rows * d_model);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / d_model);
      v[t * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) v[t * d_model + i + 1] = std::cos(angle);
    }
  }
  return Tensor({rows, d_model}, std::move(v));
}

EpitopeBert::EpitopeBert(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  params_ = nn::ParamSet::create(encoder_layout(config_), rng);
  bind();
}

EpitopeBert::EpitopeBert(EncoderConfig config, nn::ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  bind();
}

void EpitopeBert::bind() {
  tok_emb_ = params_.get("tok_emb");
  pos_emb_ = params_.get("pos_emb");
  time_emb_ = config_.time_kind == TimeEmbeddingKind::learned
                  ? params_.get("time_emb")
                  : sinusoidal_time_codes(config_.schedule.steps, config_.d_model);
  w_c_ = params_.get("head.w");
  b_c_ = params_.get("head.b");
  layers_.clear();
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    layers_.push_back({nn::bind_attention(params_, p + ".attn", config_.heads, config_.d_head),
                       nn::bind_norm(params_, p + ".ln1"), nn::bind_geglu(params_, p + ".ffn"),
                       nn::bind_norm(params_, p + ".ln2")});
  }
}

Tensor EpitopeBert::time_embedding(int t) const {
  if (t < 0 || t > config_.schedule.steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 0.." + std::to_string(config_.schedule.steps));
  }
  const std::size_t row = static_cast<std::size_t>(t);
  Tensor r = nn::gather_rows(time_emb_, std::span<const std::size_t>(&row, 1));
  return Tensor::make_result({config_.d_model}, std::vector<double>(r.values().begin(), r.values().end()), {r},
                             [](nn::detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

Tensor EpitopeBert::embed_with_time(std::span<const int> ids, int t) const {
  if (ids.empty()) throw std::invalid_argument("empty token sequence");
  if (ids.size() > config_.max_len) {
    throw std::invalid_argument("sequence of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                                std::to_string(config_.max_len));
  }
  std::vector<std::size_t> rows(ids.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tensor x = nn::add(nn::embed(ids, tok_emb_, false), nn::gather_rows(pos_emb_, rows));
  x = nn::add_row(x, time_embedding(t));
  nn::Flags keep(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) keep[i] = ids[i] != Vocabulary::pad_id;
  return nn::mask_rows(x, keep);
}

Tensor EpitopeBert::encode(std::span<const int> ids, int t, const nn::ForwardContext& ctx) const {
  Tensor h = embed_with_time(ids, t);
  const nn::AttentionMask mask = padding_mask(ids);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    Tensor a = nn::multi_head_attention(h, h, layer.attn, mask, false);
    h = nn::apply_norm(nn::add(h, nn::dropout(a, ctx.site(100 * i + 1))), layer.ln1);
    h = nn::geglu_ffn(h, layer.ffn, layer.ln2, ctx.site(100 * i + 2));
  }
  return h;
}

Tensor EpitopeBert::decode(const Tensor& hidden, std::span<const std::size_t> positions) const {
  Tensor z = nn::gelu(nn::linear(nn::gather_rows(hidden, positions), w_c_, b_c_));
  return nn::matmul(z, tok_emb_, true);
}

Tensor EpitopeBert::forward_mlm(const MaskedSequence& batch, const nn::ForwardContext& ctx) const {
  if (batch.masked.empty()) throw std::invalid_argument("forward_mlm needs at least one masked position");
  Tensor h = encode(batch.corrupted, batch.t, ctx);
  return decode(h, batch.masked);
}

EncodedEpitope EpitopeBert::encode_epitope(std::span<const int> ids) const {
  nn::NoGradGuard guard;
  EncodedEpitope out;
  out.states = encode(ids, 0, nn::ForwardContext{}).detach();
  out.valid.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out.valid[i] = ids[i] != Vocabulary::pad_id;
  return out;
}

nn::Metadata EpitopeBert::metadata() const { return config_.to_metadata(); }

EpitopeBert EpitopeBert::from_checkpoint(const nn::CheckpointData& data) {
  nn::expect_metadata(data, "model", "epitope-bert");
  nn::expect_metadata(data, "vocab_hash", std::to_string(Vocabulary::hash()));
  EpitopeBert model(EncoderConfig::from_metadata(data.metadata), 0);
  nn::restore_parameters(model.params_, data);
  return model;
}

Tensor mlm_loss(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw std::invalid_argument("mlm_loss needs one target per logits row");
  }
  if (targets.empty()) throw std::invalid_argument("mlm_loss needs at least one masked position");
  const nn::Flags include(targets.size(), true);
  Tensor s = nn::cross_entropy_sum(logits, targets, include);
  return nn::scale(s, 1.0 / static_cast<double>(targets.size()));
}

std::vector<int> masked_targets(const MaskedSequence& batch) {
  std::vector<int> out;
  out.reserve(batch.masked.size());
  for (std::size_t pos : batch.masked) out.push_back(batch.original[pos]);
  return out;
}

}  // namespace lsmtcr::bert
