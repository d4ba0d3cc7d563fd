#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "lsmtcr/cli/config.hpp"

namespace lsmtcr::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitMissingInput = 2,
  kExitManifestMismatch = 3,
  kExitCorruptCheckpoint = 4,
};

/// Entry point shared by the executable and the tests. args excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ModelCount {
  std::string model;
  std::size_t parameters = 0;
};

/// Parameter counts of every model family at a preset, computed from the
/// layouts without allocating. Assembler heads assume `n_v` V and `n_j` J
/// genes.
std::vector<ModelCount> preset_parameter_counts(const std::string& preset, std::size_t n_v = 60, std::size_t n_j = 14);

// Individual commands, exposed for testing. Each writes into config "out".
void cmd_pretrain_epitope(const RunConfig& config, std::ostream& out);
void cmd_pretrain_cdr3(const RunConfig& config, std::ostream& out);
void cmd_transfer_alpha(const RunConfig& config, std::ostream& out);
void cmd_finetune(const RunConfig& config, std::ostream& out);
void cmd_train_assembler(const RunConfig& config, std::ostream& out);
void cmd_generate(const RunConfig& config, std::ostream& out);
void cmd_predict_genes(const RunConfig& config, std::ostream& out);
void cmd_assemble(const RunConfig& config, std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& out);
void cmd_inspect(const RunConfig& config, const std::string& checkpoint, std::ostream& out);

}  // namespace lsmtcr::cli
