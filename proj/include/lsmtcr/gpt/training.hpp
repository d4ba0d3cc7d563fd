#pragma once

#include <string>
#include <vector>

#include "lsmtcr/bert/epitope_bert.hpp"
#include "lsmtcr/gpt/cdr3_gpt.hpp"
#include "lsmtcr/nn/train_loop.hpp"
#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::gpt {

/// Parameter-name patterns held fixed during conditional fine-tuning. A name
/// is frozen when it matches some `freeze` pattern and no `keep` pattern.
struct FreezePolicy {
  std::vector<std::string> freeze;
  std::vector<std::string> keep;

  bool frozen(const std::string& name) const;

  /// Token embedding, embedding norm, and the self-attention and FFN of the
  /// lower layers/2 blocks.
  static FreezePolicy standard(const GptConfig& config);
  /// Everything except the cross-attention adapters.
  static FreezePolicy adapters_only();
  static FreezePolicy none() { return {}; }
};

/// Causal LM training over BOS..EOS encoded sequences. Returns epoch losses
/// (mean step loss).
std::vector<double> pretrain(Cdr3Gpt& model, const std::vector<seqdata::TokenSequence>& corpus,
                             const nn::TrainOptions& options, const nn::StepCallback& on_step = {});

/// Per-token loss over a corpus without dropout or graph.
double evaluate_lm(const Cdr3Gpt& model, const std::vector<seqdata::TokenSequence>& corpus);

/// Starts from a copy of the β model and continues training on the α corpus
/// with every parameter trainable.
Cdr3Gpt transfer_to_alpha(const Cdr3Gpt& beta, const std::vector<seqdata::TokenSequence>& alpha_corpus,
                          const nn::TrainOptions& options, const nn::StepCallback& on_step = {});
/// Same, loading β weights from a checkpoint. `expected` fixes the
/// architecture; any disagreement raises nn::ManifestMismatch.
Cdr3Gpt transfer_to_alpha(const nn::CheckpointData& beta, const GptConfig& expected,
                          const std::vector<seqdata::TokenSequence>& alpha_corpus, const nn::TrainOptions& options,
                          const nn::StepCallback& on_step = {});

struct ConditionalExample {
  seqdata::TokenSequence epitope;  // plain encoding
  seqdata::TokenSequence cdr3;     // BOS..EOS encoding
};

/// Trains a conditioned decoder on (epitope, CDR3) pairs with the encoder held
/// fixed. Applies `policy` to the decoder before training.
std::vector<double> finetune_conditional(const std::vector<ConditionalExample>& pairs, const bert::EpitopeBert& encoder,
                                         Cdr3Gpt& decoder, const FreezePolicy& policy,
                                         const nn::TrainOptions& options, const nn::StepCallback& on_step = {});

/// Per-token loss of a conditioned decoder over pairs, no dropout.
double evaluate_conditional(const std::vector<ConditionalExample>& pairs, const bert::EpitopeBert& encoder,
                            const Cdr3Gpt& decoder);

}  // namespace lsmtcr::gpt
