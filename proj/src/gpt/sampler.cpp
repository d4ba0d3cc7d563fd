#include "lsmtcr/gpt/sampler.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::gpt {

using seqdata::Vocabulary;

namespace {

void check_temperature(double temperature) {
  if (!(temperature >= 0.0) || std::isinf(temperature)) {
    throw std::invalid_argument("temperature must be finite and >= 0");
  }
}

std::vector<double> tempered(std::span<const double> logits, double temperature) {
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& x : scaled) x /= temperature;
  return nn::softmax(scaled);
}

}  // namespace

int sample_token(std::span<const double> logits, double temperature, Rng& rng) {
  check_temperature(temperature);
  if (logits.empty()) throw std::invalid_argument("cannot sample from an empty distribution");
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best);
  }
  const std::vector<double> p = tempered(logits, temperature);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = i;
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(last);  // rounding slack at the top of the CDF
}

double softmax_entropy(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("entropy needs a positive temperature");
  const std::vector<double> p = tempered(logits, temperature);
  double h = 0.0;
  for (double q : p) {
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

std::vector<GeneratedSequence> generate(const Cdr3Gpt& decoder, const bert::EncodedEpitope* cond,
                                        const SamplerConfig& config) {
  check_temperature(config.temperature);
  if (config.max_len == 0) throw std::invalid_argument("max_len must be positive");
  if (config.max_len + 1 > decoder.config().max_len) {
    throw std::invalid_argument("max_len exceeds the decoder context");
  }
  nn::NoGradGuard guard;
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  const std::size_t vocab = decoder.config().vocab;
  std::vector<GeneratedSequence> out;
  out.reserve(config.samples);
  for (std::size_t k = 0; k < config.samples; ++k) {
    GeneratedSequence g;
    g.seed = mix_seed({config.seed, k});
    Rng rng(g.seed);
    std::vector<int> ids{Vocabulary::bos_id};
    while (ids.size() - 1 < config.max_len) {
      const std::size_t residues = ids.size() - 1;
      const nn::Tensor logits = decoder.forward(ids, cond, nn::ForwardContext{});
      const auto row = logits.values().subspan((ids.size() - 1) * vocab, vocab);
      const std::vector<double> logp = nn::log_softmax(row);
      std::vector<double> allowed(row.begin(), row.end());
      for (int special : {Vocabulary::pad_id, Vocabulary::mask_id, Vocabulary::bos_id, Vocabulary::unk_id}) {
        allowed[static_cast<std::size_t>(special)] = ninf;
      }
      if (residues == 0) allowed[Vocabulary::eos_id] = ninf;
      const int token = sample_token(allowed, config.temperature, rng);
      g.logprob += logp[static_cast<std::size_t>(token)];
      if (token == Vocabulary::eos_id) break;
      ids.push_back(token);
    }
    g.cdr3 = Vocabulary::decode(ids);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GeneratedSequence> generate(const std::string& epitope, const bert::EpitopeBert& encoder,
                                        const Cdr3Gpt& decoder, const SamplerConfig& config) {
  const auto tokens = Vocabulary::encode(epitope, seqdata::Scheme::plain, encoder.config().max_len);
  const bert::EncodedEpitope states = encoder.encode_epitope(tokens.ids);
  return generate(decoder, &states, config);
}

}  // namespace lsmtcr::gpt
