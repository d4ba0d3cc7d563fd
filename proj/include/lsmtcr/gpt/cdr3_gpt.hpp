#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsmtcr/bert/epitope_bert.hpp"
#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/nn/layers.hpp"
#include "lsmtcr/nn/loss.hpp"

namespace lsmtcr::gpt {

struct GptConfig {
  std::size_t vocab = 25;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = 34;  // BOS + 32 residues + EOS
  double dropout = 0.1;
  /// Adds a gated cross-attention adapter after every self-attention sublayer.
  bool conditioned = false;
  std::size_t cond_dim = 64;  // width of the epitope encoder states

  static GptConfig desk();
  static GptConfig full();

  void validate() const;
  nn::Metadata to_metadata() const;
  static GptConfig from_metadata(const nn::Metadata& meta);
};

std::vector<nn::ParamSpec> gpt_layout(const GptConfig& config);

/// Causal OR padding: (i, j) is forbidden when j > i or either token is pad.
nn::AttentionMask combined_mask(std::span<const int> ids);

/// Parameters that exist only in the conditioned model.
bool is_adapter_parameter(const std::string& name);

class Cdr3Gpt {
 public:
  Cdr3Gpt(GptConfig config, std::uint64_t seed);

  const GptConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const nn::Tensor& token_embedding() const { return tok_emb_; }

  /// Logits [S, V] for ids (BOS first). `cond` supplies epitope states and is
  /// required exactly when the model is conditioned.
  nn::Tensor forward(std::span<const int> ids, const bert::EncodedEpitope* cond, const nn::ForwardContext& ctx) const;

  /// Deep copy with independent storage.
  Cdr3Gpt clone() const;

  /// Conditioned copy of an unconditioned model: shared weights are copied,
  /// adapters freshly initialized with gates at 0.
  Cdr3Gpt with_adapters(std::size_t cond_dim, std::uint64_t seed) const;

  nn::Metadata metadata() const { return config_.to_metadata(); }
  static Cdr3Gpt from_checkpoint(const nn::CheckpointData& data);

 private:
  struct Block {
    nn::NormWeights ln1;
    nn::AttentionWeights attn;
    nn::NormWeights xln;
    nn::AttentionWeights xattn;
    nn::Tensor xgate;
    nn::NormWeights ln2;
    nn::GegluWeights ffn;
  };

  void bind();

  GptConfig config_;
  nn::ParamSet params_;
  nn::Tensor tok_emb_;
  nn::NormWeights emb_ln_, final_ln_;
  std::vector<Block> blocks_;
};

using nn::ShiftedSequence;
using nn::TokenPredictions;

/// Next-token view of a BOS..EOS sequence; see nn::shift_for_teacher_forcing.
inline ShiftedSequence shift_for_lm(std::span<const int> ids) { return nn::shift_for_teacher_forcing(ids); }

/// -(1/Z) Σ valid log P(target), Z = number of valid targets over the batch.
/// Throws std::invalid_argument when Z = 0.
nn::Tensor lm_loss(std::span<const TokenPredictions> batch);
nn::Tensor lm_loss(const nn::Tensor& logits, std::span<const int> targets, const std::vector<bool>& valid);

}  // namespace lsmtcr::gpt
