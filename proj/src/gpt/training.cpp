#include "lsmtcr/gpt/training.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "lsmtcr/util/random.hpp"

namespace lsmtcr::gpt {

namespace {

using ExampleFn = std::function<TokenPredictions(std::size_t index, const nn::ForwardContext& ctx)>;

std::vector<double> run_training(nn::ParamSet& params, std::size_t n, double dropout, const nn::TrainOptions& options,
                                 const nn::StepCallback& on_step, const ExampleFn& example) {
  if (n == 0) throw std::invalid_argument("training set is empty");
  const std::size_t per_epoch = nn::steps_per_epoch(n, options.batch_size);
  nn::AdamW optimizer(params, nn::optimizer_config(options, options.epochs * per_epoch));
  std::vector<double> losses;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed({options.seed, 11, epoch}));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t step = optimizer.steps_taken() + 1;
      const std::size_t end = std::min(n, start + options.batch_size);
      std::vector<TokenPredictions> batch;
      for (std::size_t b = start; b < end; ++b) {
        batch.push_back(example(order[b], nn::ForwardContext{true, dropout, options.seed, step, order[b]}));
      }
      nn::Tensor loss = lm_loss(batch);
      params.zero_grad();
      nn::backward(loss);
      const double lr = optimizer.step();
      total += loss.item();
      if (on_step) on_step({step, loss.item(), lr});
    }
    losses.push_back(total / static_cast<double>(per_epoch));
  }
  return losses;
}

TokenPredictions predict(const Cdr3Gpt& model, const seqdata::TokenSequence& seq, const bert::EncodedEpitope* cond,
                         const nn::ForwardContext& ctx) {
  ShiftedSequence s = shift_for_lm(seq.ids);
  return {model.forward(s.inputs, cond, ctx), std::move(s.targets), std::move(s.valid)};
}

double mean_token_loss(const std::function<TokenPredictions(std::size_t)>& example, std::size_t n) {
  nn::NoGradGuard guard;
  double total = 0.0;
  std::size_t z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const TokenPredictions p = example(i);
    std::size_t count = 0;
    for (bool v : p.valid) count += v ? 1 : 0;
    if (count == 0) continue;
    total += lm_loss(std::span<const TokenPredictions>(&p, 1)).item() * static_cast<double>(count);
    z += count;
  }
  if (z == 0) throw std::invalid_argument("no valid target tokens");
  return total / static_cast<double>(z);
}

std::vector<bert::EncodedEpitope> encode_all(const std::vector<ConditionalExample>& pairs,
                                             const bert::EpitopeBert& encoder) {
  std::map<std::vector<int>, std::size_t> seen;
  std::vector<bert::EncodedEpitope> unique;
  std::vector<bert::EncodedEpitope> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto it = seen.find(p.epitope.ids);
    if (it == seen.end()) {
      it = seen.emplace(p.epitope.ids, unique.size()).first;
      unique.push_back(encoder.encode_epitope(p.epitope.ids));
    }
    out.push_back(unique[it->second]);
  }
  return out;
}

}  // namespace

bool FreezePolicy::frozen(const std::string& name) const {
  const auto hit = [&](const std::vector<std::string>& patterns) {
    return std::any_of(patterns.begin(), patterns.end(), [&](const std::string& p) { return nn::glob_match(p, name); });
  };
  return hit(freeze) && !hit(keep);
}

FreezePolicy FreezePolicy::standard(const GptConfig& config) {
  FreezePolicy p;
  p.freeze = {"tok_emb", "emb_ln.*"};
  for (std::size_t i = 0; i < config.layers / 2; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    for (const char* part : {".ln1.*", ".attn.*", ".ln2.*", ".ffn.*"}) p.freeze.push_back(b + part);
  }
  return p;
}

FreezePolicy FreezePolicy::adapters_only() {
  FreezePolicy p;
  p.freeze = {"*"};
  p.keep = {"blocks.*.xln.*", "blocks.*.xattn.*", "blocks.*.xgate"};
  return p;
}

std::vector<double> pretrain(Cdr3Gpt& model, const std::vector<seqdata::TokenSequence>& corpus,
                             const nn::TrainOptions& options, const nn::StepCallback& on_step) {
  if (model.config().conditioned) throw std::invalid_argument("pretraining expects an unconditioned decoder");
  return run_training(model.params(), corpus.size(), model.config().dropout, options, on_step,
                      [&](std::size_t i, const nn::ForwardContext& ctx) { return predict(model, corpus[i], nullptr, ctx); });
}

double evaluate_lm(const Cdr3Gpt& model, const std::vector<seqdata::TokenSequence>& corpus) {
  return mean_token_loss([&](std::size_t i) { return predict(model, corpus[i], nullptr, nn::ForwardContext{}); },
                         corpus.size());
}

Cdr3Gpt transfer_to_alpha(const Cdr3Gpt& beta, const std::vector<seqdata::TokenSequence>& alpha_corpus,
                          const nn::TrainOptions& options, const nn::StepCallback& on_step) {
  Cdr3Gpt alpha = beta.clone();
  alpha.params().apply_freeze([](const std::string&) { return false; });
  if (options.epochs > 0) pretrain(alpha, alpha_corpus, options, on_step);
  return alpha;
}

Cdr3Gpt transfer_to_alpha(const nn::CheckpointData& beta, const GptConfig& expected,
                          const std::vector<seqdata::TokenSequence>& alpha_corpus, const nn::TrainOptions& options,
                          const nn::StepCallback& on_step) {
  const nn::Metadata want = expected.to_metadata();
  for (const char* key : {"model", "vocab", "vocab_hash", "d_model", "heads", "d_head", "layers", "d_ff", "max_len",
                          "conditioned"}) {
    nn::expect_metadata(beta, key, want.at(key));
  }
  return transfer_to_alpha(Cdr3Gpt::from_checkpoint(beta), alpha_corpus, options, on_step);
}

std::vector<double> finetune_conditional(const std::vector<ConditionalExample>& pairs, const bert::EpitopeBert& encoder,
                                         Cdr3Gpt& decoder, const FreezePolicy& policy,
                                         const nn::TrainOptions& options, const nn::StepCallback& on_step) {
  if (pairs.empty()) throw std::invalid_argument("fine-tuning needs at least one (epitope, CDR3) pair");
  if (!decoder.config().conditioned) throw std::invalid_argument("fine-tuning needs a conditioned decoder");
  if (decoder.config().cond_dim != encoder.config().d_model) {
    throw std::invalid_argument("adapter width does not match the epitope encoder");
  }
  decoder.params().apply_freeze([&](const std::string& name) { return policy.frozen(name); });
  const std::vector<bert::EncodedEpitope> states = encode_all(pairs, encoder);
  return run_training(decoder.params(), pairs.size(), decoder.config().dropout, options, on_step,
                      [&](std::size_t i, const nn::ForwardContext& ctx) {
                        return predict(decoder, pairs[i].cdr3, &states[i], ctx);
                      });
}

double evaluate_conditional(const std::vector<ConditionalExample>& pairs, const bert::EpitopeBert& encoder,
                            const Cdr3Gpt& decoder) {
  const std::vector<bert::EncodedEpitope> states = encode_all(pairs, encoder);
  return mean_token_loss(
      [&](std::size_t i) { return predict(decoder, pairs[i].cdr3, &states[i], nn::ForwardContext{}); }, pairs.size());
}

}  // namespace lsmtcr::gpt
