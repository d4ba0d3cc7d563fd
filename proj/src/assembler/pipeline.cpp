#include "lsmtcr/assembler/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lsmtcr/seqdata/vocab.hpp"
#include "lsmtcr/util/parallel.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::assembler {

using seqdata::Chain;
using seqdata::Scheme;
using seqdata::Vocabulary;

namespace {

std::string join(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) out += (i ? "," : "") + labels[i];
  return out;
}

std::vector<std::string> split(const std::string& text) {
  if (text.empty()) return {};
  return seqdata::split_csv_line(text);
}

template <class Fn>
std::vector<double> run_epochs(nn::ParamSet& params, std::size_t n, const nn::TrainOptions& options, int stage,
                               const StageCallback& on_step, Fn batch_loss) {
  const std::size_t per_epoch = nn::steps_per_epoch(n, options.batch_size);
  nn::AdamW optimizer(params, nn::optimizer_config(options, options.epochs * per_epoch));
  std::vector<std::size_t> order(n);
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed({options.seed, 20 + static_cast<std::uint64_t>(stage), epoch}));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t step = optimizer.steps_taken() + 1;
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + options.batch_size)));
      nn::Tensor loss = batch_loss(batch, step);
      params.zero_grad();
      nn::backward(loss);
      const double lr = optimizer.step();
      total += loss.item();
      if (on_step) on_step(stage, {step, loss.item(), lr});
    }
    losses.push_back(total / static_cast<double>(per_epoch));
  }
  return losses;
}

}  // namespace

TwoStageConfig TwoStageConfig::desk() { return {GenePredictorConfig::desk(), Seq2SeqConfig::desk()}; }
TwoStageConfig TwoStageConfig::full() { return {GenePredictorConfig::full(), Seq2SeqConfig::full()}; }

std::vector<ChainExample> chain_examples(const std::vector<seqdata::PairedRecord>& records, Chain chain,
                                         const seqdata::GeneVocab& genes, const Seq2SeqConfig& limits,
                                         std::size_t* skipped) {
  std::vector<ChainExample> out;
  std::size_t rejected = 0;
  for (const auto& r : records) {
    const auto& cdr3 = r.cdr3(chain);
    const auto& v = r.v_gene(chain);
    const auto& j = r.j_gene(chain);
    const auto& full = r.full(chain);
    if (!cdr3 || !v || !j || !full) {
      ++rejected;
      continue;
    }
    const auto vi = genes.v_index(*v);
    const auto ji = genes.j_index(*j);
    if (!vi || !ji || cdr3->size() > limits.max_cdr3_len || full->size() > limits.max_full_len) {
      ++rejected;
      continue;
    }
    ChainExample ex;
    ex.cdr3 = *cdr3;
    ex.full = *full;
    ex.cdr3_tokens = Vocabulary::encode(*cdr3, Scheme::plain);
    ex.full_tokens = Vocabulary::encode(*full, Scheme::bos_eos);
    ex.v = *vi;
    ex.j = *ji;
    out.push_back(std::move(ex));
  }
  if (skipped) *skipped = rejected;
  return out;
}

TwoStageResult train_two_stage(const std::vector<seqdata::PairedRecord>& records, Chain chain,
                               const TwoStageConfig& config, const nn::TrainOptions& options,
                               const StageCallback& on_step) {
  const seqdata::GeneVocab genes = seqdata::GeneVocab::build(records, chain);
  if (genes.v_labels().empty() || genes.j_labels().empty()) {
    throw std::invalid_argument("no record carries V and J genes for the " + std::string(seqdata::to_string(chain)) +
                                " chain");
  }
  GenePredictorConfig c1 = config.stage1;
  Seq2SeqConfig c2 = config.stage2;
  c1.n_v = c2.n_v = genes.v_labels().size();
  c1.n_j = c2.n_j = genes.j_labels().size();
  c2.max_cdr3_len = std::min(c2.max_cdr3_len, c1.max_len);

  TwoStageReport report;
  const std::vector<ChainExample> rows = chain_examples(records, chain, genes, c2, &report.skipped);
  if (rows.empty()) throw std::invalid_argument("no usable records for the " + std::string(seqdata::to_string(chain)) + " chain");
  report.used = rows.size();

  TwoStageModel model{chain, genes, GenePredictor(c1, mix_seed({options.seed, 1})),
                      FullLengthGenerator(c2, mix_seed({options.seed, 2}))};

  report.stage1_losses = run_epochs(
      model.stage1.params(), rows.size(), options, 1, on_step, [&](const std::vector<std::size_t>& batch, std::size_t step) {
        nn::Tensor total;
        for (std::size_t idx : batch) {
          const nn::ForwardContext ctx{true, c1.dropout, options.seed, step, idx};
          nn::Tensor l = gene_loss(model.stage1.forward(rows[idx].cdr3_tokens.ids, ctx), rows[idx].v, rows[idx].j);
          total = total.defined() ? nn::add(total, l) : l;
        }
        return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
      });

  report.stage2_losses = run_epochs(
      model.stage2.params(), rows.size(), options, 2, on_step, [&](const std::vector<std::size_t>& batch, std::size_t step) {
        std::vector<nn::TokenPredictions> preds;
        for (std::size_t idx : batch) {
          const nn::ForwardContext ctx{true, c2.dropout, options.seed, step, idx};
          preds.push_back(model.stage2.teacher_forced(rows[idx].cdr3_tokens.ids, rows[idx].v, rows[idx].j,
                                                      rows[idx].full_tokens.ids, ctx));
        }
        return seq_loss(preds);
      });

  return {std::move(model), std::move(report)};
}

std::vector<AssembledChain> assemble_pipeline(const std::vector<std::string>& cdr3s, const TwoStageModel& model) {
  std::vector<AssembledChain> out(cdr3s.size());
  const std::size_t max_len = std::min(model.stage1.config().max_len, model.stage2.config().max_cdr3_len);
  for (const auto& c : cdr3s) Vocabulary::encode(c, Scheme::plain, max_len);  // validate before any work
  parallel_for(cdr3s.size(), [&](std::size_t i) {
    nn::NoGradGuard guard;
    const auto tokens = Vocabulary::encode(cdr3s[i], Scheme::plain, max_len);
    const GenePrediction genes = model.stage1.predict(tokens.ids);
    out[i].cdr3 = cdr3s[i];
    out[i].v_gene = model.genes.v_labels()[genes.v];
    out[i].j_gene = model.genes.j_labels()[genes.j];
    out[i].full_sequence = model.stage2.generate(tokens.ids, genes.v, genes.j, Decoding{});
  });
  return out;
}

ExactMatchReport evaluate_exact_match(const std::vector<seqdata::PairedRecord>& records, const TwoStageModel& model) {
  const std::vector<ChainExample> rows = chain_examples(records, model.chain, model.genes, model.stage2.config());
  ExactMatchReport rep;
  rep.rows = rows.size();
  if (rows.empty()) return rep;
  std::vector<int> v_ok(rows.size()), j_ok(rows.size()), exact_true(rows.size()), exact_pred(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    nn::NoGradGuard guard;
    const auto& r = rows[i];
    const GenePrediction p = model.stage1.predict(r.cdr3_tokens.ids);
    v_ok[i] = p.v == r.v;
    j_ok[i] = p.j == r.j;
    exact_true[i] = model.stage2.generate(r.cdr3_tokens.ids, r.v, r.j, Decoding{}) == r.full;
    exact_pred[i] = (p.v == r.v && p.j == r.j) ? exact_true[i]
                                               : model.stage2.generate(r.cdr3_tokens.ids, p.v, p.j, Decoding{}) == r.full;
  });
  const auto frac = [&](const std::vector<int>& hits) {
    return static_cast<double>(std::accumulate(hits.begin(), hits.end(), 0)) / static_cast<double>(rows.size());
  };
  rep.v_accuracy = frac(v_ok);
  rep.j_accuracy = frac(j_ok);
  rep.exact_true_genes = frac(exact_true);
  rep.exact_predicted_genes = frac(exact_pred);
  return rep;
}

void save_two_stage(const std::filesystem::path& dir, const TwoStageModel& model) {
  nn::ParamSet merged;
  for (const auto& p : model.stage1.params().items()) merged.add({"stage1." + p.name, p.tensor, p.trainable, p.decay});
  for (const auto& p : model.stage2.params().items()) merged.add({"stage2." + p.name, p.tensor, p.trainable, p.decay});
  nn::Metadata meta = model.stage1.config().to_metadata("stage1.");
  meta.merge(model.stage2.config().to_metadata("stage2."));
  meta["model"] = "tcr-assembler";
  meta["chain"] = std::string(seqdata::to_string(model.chain));
  meta["vocab"] = std::to_string(Vocabulary::size);
  meta["vocab_hash"] = std::to_string(Vocabulary::hash());
  meta["genes.v"] = join(model.genes.v_labels());
  meta["genes.j"] = join(model.genes.j_labels());
  nn::save_checkpoint(dir, merged, meta);
}

TwoStageModel load_two_stage(const std::filesystem::path& dir) {
  const nn::CheckpointData data = nn::load_checkpoint(dir);
  nn::expect_metadata(data, "model", "tcr-assembler");
  nn::expect_metadata(data, "vocab_hash", std::to_string(Vocabulary::hash()));
  seqdata::GeneVocab genes(split(nn::meta_string(data.metadata, "genes.v")),
                           split(nn::meta_string(data.metadata, "genes.j")));
  const auto c1 = GenePredictorConfig::from_metadata(data.metadata, "stage1.");
  const auto c2 = Seq2SeqConfig::from_metadata(data.metadata, "stage2.");
  if (c1.n_v != genes.v_labels().size() || c1.n_j != genes.j_labels().size() || c2.n_v != c1.n_v || c2.n_j != c1.n_j) {
    throw nn::ManifestMismatch("gene vocabulary size disagrees with the stored heads");
  }
  TwoStageModel model{seqdata::parse_chain(nn::meta_string(data.metadata, "chain")), std::move(genes),
                      GenePredictor(c1, 0), FullLengthGenerator(c2, 0)};
  nn::restore_parameters(model.stage1.params(), data.subset("stage1."));
  nn::restore_parameters(model.stage2.params(), data.subset("stage2."));
  return model;
}

}  // namespace lsmtcr::assembler
