#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lsmtcr/bert/epitope_bert.hpp"
#include "lsmtcr/nn/train_loop.hpp"
#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::bert {

/// Runs one pass over `corpus` in a seed-determined order. Each optimization
/// step draws t uniformly from {0..T}, corrupts every sequence of the batch at
/// that t and minimizes the masked-token loss pooled over the batch. Mask
/// candidates are re-drawn each epoch. Returns the mean step loss.
double train_epoch(EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus, nn::AdamW& optimizer,
                   std::size_t epoch, const nn::TrainOptions& options, const nn::StepCallback& on_step = {});

/// Creates the optimizer and runs options.epochs epochs; returns the epoch losses.
std::vector<double> pretrain_mlm(EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus,
                                 const nn::TrainOptions& options, const nn::StepCallback& on_step = {});

struct ValidationResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t predictions = 0;
};

/// Masked-token accuracy and loss at t_eval = floor(T/2) with fixed candidate
/// and ordering seeds, no dropout and no graph.
ValidationResult validate(const EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus);

}  // namespace lsmtcr::bert
