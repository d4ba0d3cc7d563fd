#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsmtcr/bert/epitope_bert.hpp"
#include "lsmtcr/gpt/cdr3_gpt.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::gpt {

inline constexpr std::string_view kGenerationHeader = "epitope,chain,rank,cdr3,logprob,temperature,seed";

struct SamplerConfig {
  double temperature = 1.0;  // 0 = greedy
  std::size_t max_len = 32;  // residues, excluding BOS/EOS
  std::size_t samples = 1;
  std::uint64_t seed = 0;
};

struct GeneratedSequence {
  std::string cdr3;
  double logprob = 0.0;  // untempered model log-likelihood of the emitted tokens
  std::uint64_t seed = 0;
};

/// Draws an index from softmax(logits / temperature). Temperature 0 returns
/// the argmax, ties to the lowest index. Entries at -inf are never drawn.
int sample_token(std::span<const double> logits, double temperature, Rng& rng);

/// Shannon entropy (nats) of softmax(logits / temperature), temperature > 0.
double softmax_entropy(std::span<const double> logits, double temperature);

/// Autoregressive sampling until EOS or max_len residues. Special tokens other
/// than EOS are never emitted, and EOS is not allowed as the first token.
/// Sample k uses seed mix(config.seed, k).
std::vector<GeneratedSequence> generate(const Cdr3Gpt& decoder, const bert::EncodedEpitope* cond,
                                        const SamplerConfig& config);

/// Encodes the epitope and samples from the conditioned decoder.
std::vector<GeneratedSequence> generate(const std::string& epitope, const bert::EpitopeBert& encoder,
                                        const Cdr3Gpt& decoder, const SamplerConfig& config);

}  // namespace lsmtcr::gpt
