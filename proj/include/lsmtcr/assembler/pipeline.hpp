#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "lsmtcr/assembler/gene_predictor.hpp"
#include "lsmtcr/assembler/seq2seq.hpp"
#include "lsmtcr/nn/train_loop.hpp"
#include "lsmtcr/seqdata/dataset.hpp"
#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::assembler {

struct TwoStageConfig {
  GenePredictorConfig stage1;
  Seq2SeqConfig stage2;

  static TwoStageConfig desk();
  static TwoStageConfig full();
};

struct TwoStageModel {
  seqdata::Chain chain;
  seqdata::GeneVocab genes;
  GenePredictor stage1;
  FullLengthGenerator stage2;
};

/// One usable training row: plain CDR3 ids, gene indices and the BOS..EOS
/// full-length chain.
struct ChainExample {
  std::string cdr3;
  std::string full;
  seqdata::TokenSequence cdr3_tokens;
  seqdata::TokenSequence full_tokens;
  std::size_t v = 0;
  std::size_t j = 0;
};

struct TwoStageReport {
  std::vector<double> stage1_losses;  // per epoch
  std::vector<double> stage2_losses;
  std::size_t used = 0;
  std::size_t skipped = 0;  // records lacking a field for the chain or over length
};

struct TwoStageResult {
  TwoStageModel model;
  TwoStageReport report;
};

using StageCallback = std::function<void(int stage, const nn::StepLog&)>;

/// Rows of `records` usable for `chain` under the given limits. `skipped`
/// receives the number of rejected records.
std::vector<ChainExample> chain_examples(const std::vector<seqdata::PairedRecord>& records, seqdata::Chain chain,
                                         const seqdata::GeneVocab& genes, const Seq2SeqConfig& limits,
                                         std::size_t* skipped = nullptr);

/// Stage 1 on (CDR3 -> V, J) with the summed cross-entropy, then Stage 2 on
/// (CDR3, true V, true J -> full chain) with teacher forcing. Each stage runs
/// options.epochs epochs with its own optimizer.
TwoStageResult train_two_stage(const std::vector<seqdata::PairedRecord>& records, seqdata::Chain chain,
                               const TwoStageConfig& config, const nn::TrainOptions& options,
                               const StageCallback& on_step = {});

inline constexpr std::string_view kAssemblyHeader = "chain,cdr3,v_gene,j_gene,full_sequence,source";

struct AssembledChain {
  std::string cdr3;
  std::string v_gene;
  std::string j_gene;
  std::string full_sequence;
};

/// Stage-1 argmax genes, then greedy Stage-2 generation, per CDR3 in order.
std::vector<AssembledChain> assemble_pipeline(const std::vector<std::string>& cdr3s, const TwoStageModel& model);

struct ExactMatchReport {
  std::size_t rows = 0;
  double v_accuracy = 0.0;
  double j_accuracy = 0.0;
  double exact_true_genes = 0.0;       // Stage 2 fed the reference genes
  double exact_predicted_genes = 0.0;  // Stage 2 fed the Stage-1 genes
};

ExactMatchReport evaluate_exact_match(const std::vector<seqdata::PairedRecord>& records, const TwoStageModel& model);

void save_two_stage(const std::filesystem::path& dir, const TwoStageModel& model);
TwoStageModel load_two_stage(const std::filesystem::path& dir);

}  // namespace lsmtcr::assembler
