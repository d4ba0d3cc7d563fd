#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/nn/layers.hpp"
#include "lsmtcr/nn/loss.hpp"

namespace lsmtcr::assembler {

struct Seq2SeqConfig {
  std::size_t vocab = 25;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_cdr3_len = 32;
  std::size_t max_full_len = 160;  // residues, excluding BOS/EOS
  std::size_t n_v = 1;
  std::size_t n_j = 1;
  double dropout = 0.1;

  static Seq2SeqConfig desk();
  static Seq2SeqConfig full();

  void validate() const;
  nn::Metadata to_metadata(const std::string& prefix) const;
  static Seq2SeqConfig from_metadata(const nn::Metadata& meta, const std::string& prefix);
};

std::vector<nn::ParamSpec> seq2seq_layout(const Seq2SeqConfig& config);

struct EncoderMemory {
  nn::Tensor states;        // [1 + S, d]; row 0 is the gene context
  std::vector<bool> valid;
};

struct Decoding {
  double temperature = 0.0;  // 0 = greedy
  std::uint64_t seed = 0;
};

/// Decoder self-attention mask: (i, j) forbidden when j > i or either token
/// is pad.
nn::AttentionMask decoder_self_mask(std::span<const int> prefix);

/// Stage 2: encoder over [g_gene; CDR3], causal decoder with cross-attention
/// over every encoder position, linear projection to the token vocabulary.
class FullLengthGenerator {
 public:
  FullLengthGenerator(Seq2SeqConfig config, std::uint64_t seed);

  const Seq2SeqConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// LayerNorm(Linear[E_V(v); E_J(j)]), [d]. Unknown labels raise
  /// std::out_of_range.
  nn::Tensor embed_genes(std::size_t v, std::size_t j) const;

  EncoderMemory encode(std::span<const int> cdr3, std::size_t v, std::size_t j, const nn::ForwardContext& ctx) const;
  EncoderMemory encode_with_gene(std::span<const int> cdr3, const nn::Tensor& g_gene,
                                 const nn::ForwardContext& ctx) const;

  /// Logits [T, V] for a BOS-first decoder prefix.
  nn::Tensor decode(std::span<const int> prefix, const EncoderMemory& memory, const nn::ForwardContext& ctx) const;

  /// Teacher-forced predictions for a BOS..EOS target chain.
  nn::TokenPredictions teacher_forced(std::span<const int> cdr3, std::size_t v, std::size_t j,
                                      std::span<const int> chain, const nn::ForwardContext& ctx) const;

  /// Left-to-right generation until EOS or max_full_len residues.
  std::string generate(std::span<const int> cdr3, std::size_t v, std::size_t j, const Decoding& decoding) const;

 private:
  struct EncLayer {
    nn::AttentionWeights attn;
    nn::NormWeights ln1;
    nn::GeluFfnWeights ffn;
    nn::NormWeights ln2;
  };
  struct DecLayer {
    nn::AttentionWeights self_attn;
    nn::NormWeights ln1;
    nn::AttentionWeights cross_attn;
    nn::NormWeights ln2;
    nn::GeluFfnWeights ffn;
    nn::NormWeights ln3;
  };

  struct StepCache;
  /// Logits [1, V] for `token` at position `pos`, reusing cached keys/values
  /// of the earlier positions; matches the last row of decode().
  nn::Tensor step(int token, std::size_t pos, StepCache& cache) const;

  void bind();

  Seq2SeqConfig config_;
  nn::ParamSet params_;
  nn::Tensor aa_emb_, enc_pos_, dec_pos_, v_emb_, j_emb_, fuse_w_, fuse_b_, out_w_, out_b_;
  nn::NormWeights gene_ln_;
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
};

/// -(1/Z) Σ valid log p(target); Z = valid positions.
nn::Tensor seq_loss(const nn::Tensor& logits, std::span<const int> targets, const std::vector<bool>& valid);
nn::Tensor seq_loss(std::span<const nn::TokenPredictions> batch);

}  // namespace lsmtcr::assembler
