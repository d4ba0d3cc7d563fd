#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsmtcr/bert/schedule.hpp"
#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/nn/layers.hpp"

namespace lsmtcr::bert {

enum class TimeEmbeddingKind { learned, sinusoidal };

std::string to_string(TimeEmbeddingKind kind);
TimeEmbeddingKind parse_time_embedding(const std::string& text);

struct EncoderConfig {
  std::size_t vocab = 25;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = 32;
  double dropout = 0.1;
  TimeEmbeddingKind time_kind = TimeEmbeddingKind::learned;
  DiffusionSchedule schedule;

  static EncoderConfig desk();
  static EncoderConfig full();

  void validate() const;
  nn::Metadata to_metadata() const;
  static EncoderConfig from_metadata(const nn::Metadata& meta);
};

/// Names and shapes of every trainable tensor. Sinusoidal time codes are
/// fixed and therefore not part of the layout.
std::vector<nn::ParamSpec> encoder_layout(const EncoderConfig& config);

/// Fixed sinusoidal codes of shape (T+1) x D.
nn::Tensor sinusoidal_time_codes(int steps, std::size_t d_model);

/// Clean-input encoder states used to condition the CDR3 decoder.
struct EncodedEpitope {
  nn::Tensor states;        // [S, D]
  std::vector<bool> valid;  // false at pad positions
};

class EpitopeBert {
 public:
  EpitopeBert(EncoderConfig config, std::uint64_t seed);
  EpitopeBert(EncoderConfig config, nn::ParamSet params);

  const EncoderConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const nn::Tensor& token_embedding() const { return tok_emb_; }

  /// Row t of the time table, [D].
  nn::Tensor time_embedding(int t) const;

  /// E_tok(x) + E_pos(1:S) + E_time(t); pad rows zeroed. [S, D]
  nn::Tensor embed_with_time(std::span<const int> ids, int t) const;

  /// Final hidden states of the encoder stack for corrupted ids at step t.
  nn::Tensor encode(std::span<const int> ids, int t, const nn::ForwardContext& ctx) const;

  /// Tied decode of hidden rows: GELU(H W_c + b_c) E_tokᵀ. [k, V]
  nn::Tensor decode(const nn::Tensor& hidden, std::span<const std::size_t> positions) const;

  /// Logits at the masked positions of `batch`, in ascending position order.
  nn::Tensor forward_mlm(const MaskedSequence& batch, const nn::ForwardContext& ctx) const;

  /// Full forward at t = 0 without masking, dropout or graph recording.
  EncodedEpitope encode_epitope(std::span<const int> ids) const;

  nn::Metadata metadata() const;
  static EpitopeBert from_checkpoint(const nn::CheckpointData& data);

 private:
  struct Layer {
    nn::AttentionWeights attn;
    nn::NormWeights ln1;
    nn::GegluWeights ffn;
    nn::NormWeights ln2;
  };

  void bind();

  EncoderConfig config_;
  nn::ParamSet params_;
  nn::Tensor tok_emb_, pos_emb_, time_emb_, w_c_, b_c_;
  std::vector<Layer> layers_;
};

/// Mean negative log-likelihood of the targets, one per logits row.
nn::Tensor mlm_loss(const nn::Tensor& logits, std::span<const int> targets);

/// Targets (original ids) at the masked positions of `batch`.
std::vector<int> masked_targets(const MaskedSequence& batch);

}  // namespace lsmtcr::bert
