#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/nn/layers.hpp"

namespace lsmtcr::assembler {

struct GenePredictorConfig {
  std::size_t vocab = 25;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = 32;
  std::size_t n_v = 1;
  std::size_t n_j = 1;
  double dropout = 0.1;

  static GenePredictorConfig desk();
  static GenePredictorConfig full();

  void validate() const;
  nn::Metadata to_metadata(const std::string& prefix) const;
  static GenePredictorConfig from_metadata(const nn::Metadata& meta, const std::string& prefix);
};

std::vector<nn::ParamSpec> gene_predictor_layout(const GenePredictorConfig& config);

/// Mean of the included rows of H [L, d].
nn::Tensor pool(const nn::Tensor& h, std::span<const bool> include);

struct GeneLogits {
  nn::Tensor v;  // [n_v]
  nn::Tensor j;  // [n_j]
};

struct GenePrediction {
  std::vector<double> p_v;
  std::vector<double> p_j;
  std::size_t v = 0;  // argmax, ties to the lowest index
  std::size_t j = 0;
};

/// Stage 1: CDR3 encoder with GELU feed-forward, pooled over non-pad
/// positions, with separate V and J classification heads.
class GenePredictor {
 public:
  GenePredictor(GenePredictorConfig config, std::uint64_t seed);

  const GenePredictorConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// Final encoder states [S, d] for plain-encoded CDR3 ids.
  nn::Tensor encode(std::span<const int> ids, const nn::ForwardContext& ctx) const;
  GeneLogits forward(std::span<const int> ids, const nn::ForwardContext& ctx) const;
  GenePrediction predict(std::span<const int> ids) const;

 private:
  struct Layer {
    nn::AttentionWeights attn;
    nn::NormWeights ln1;
    nn::GeluFfnWeights ffn;
    nn::NormWeights ln2;
  };

  void bind();

  GenePredictorConfig config_;
  nn::ParamSet params_;
  nn::Tensor tok_emb_, pos_emb_, v_w_, v_b_, j_w_, j_b_;
  std::vector<Layer> layers_;
};

/// CE(V) + CE(J). Labels outside the head widths raise std::out_of_range.
nn::Tensor gene_loss(const GeneLogits& logits, std::size_t y_v, std::size_t y_j);

}  // namespace lsmtcr::assembler
