#include "lsmtcr/bert/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "lsmtcr/seqdata/sampling.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::bert {

namespace {

constexpr std::uint64_t kValidationSeed = 0x5eed'0e7a'1234ULL;

}  // namespace

double train_epoch(EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus, nn::AdamW& optimizer,
                   std::size_t epoch, const nn::TrainOptions& options, const nn::StepCallback& on_step) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  const auto& cfg = model.config();
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng order_rng(mix_seed({options.seed, 1, epoch}));
  order_rng.shuffle(order);

  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    const std::size_t step = optimizer.steps_taken() + 1;
    const std::size_t end = std::min(order.size(), start + options.batch_size);
    Rng t_rng(mix_seed({options.seed, 2, step}));
    const int t = static_cast<int>(t_rng.below(static_cast<std::size_t>(cfg.schedule.steps) + 1));

    nn::Tensor loss_sum;
    std::size_t masked = 0;
    for (std::size_t b = start; b < end; ++b) {
      const std::size_t idx = order[b];
      const auto candidates = seqdata::preselect_mask_candidates(corpus[idx], mix_seed({options.seed, 3, epoch, idx}));
      const MaskedSequence batch = corrupt(corpus[idx], candidates, t, cfg.schedule, mix_seed({options.seed, 4, step, idx}));
      nn::ForwardContext ctx{true, cfg.dropout, options.seed, step, idx};
      const std::vector<int> targets = masked_targets(batch);
      const nn::Flags include(targets.size(), true);
      nn::Tensor ce = nn::cross_entropy_sum(model.forward_mlm(batch, ctx), targets, include);
      loss_sum = loss_sum.defined() ? nn::add(loss_sum, ce) : ce;
      masked += targets.size();
    }
    nn::Tensor loss = nn::scale(loss_sum, 1.0 / static_cast<double>(masked));
    model.params().zero_grad();
    nn::backward(loss);
    const double lr = optimizer.step();
    total += loss.item();
    ++steps;
    if (on_step) on_step({step, loss.item(), lr});
  }
  return total / static_cast<double>(steps);
}

std::vector<double> pretrain_mlm(EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus,
                                 const nn::TrainOptions& options, const nn::StepCallback& on_step) {
  const std::size_t total = options.epochs * nn::steps_per_epoch(corpus.size(), options.batch_size);
  nn::AdamW optimizer(model.params(), nn::optimizer_config(options, total));
  std::vector<double> losses;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    losses.push_back(train_epoch(model, corpus, optimizer, e, options, on_step));
  }
  return losses;
}

ValidationResult validate(const EpitopeBert& model, const std::vector<seqdata::TokenSequence>& corpus) {
  nn::NoGradGuard guard;
  const auto& cfg = model.config();
  const int t_eval = cfg.schedule.steps / 2;
  ValidationResult out;
  double nll = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto candidates = seqdata::preselect_mask_candidates(corpus[i], mix_seed({kValidationSeed, i}));
    const MaskedSequence batch = corrupt(corpus[i], candidates, t_eval, cfg.schedule, mix_seed({kValidationSeed, i, 1}));
    const nn::Tensor logits = model.forward_mlm(batch, nn::ForwardContext{});
    const std::vector<int> targets = masked_targets(batch);
    const std::size_t v = logits.dim(1);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const auto row = logits.values().subspan(r * v, v);
      const auto lp = nn::log_softmax(row);
      nll -= lp[static_cast<std::size_t>(targets[r])];
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == targets[r] ? 1 : 0;
    }
    out.predictions += targets.size();
  }
  if (out.predictions > 0) {
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.predictions);
    out.loss = nll / static_cast<double>(out.predictions);
  }
  return out;
}

}  // namespace lsmtcr::bert
