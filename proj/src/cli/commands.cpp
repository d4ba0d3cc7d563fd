#include "lsmtcr/cli/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "lsmtcr/assembler/pipeline.hpp"
#include "lsmtcr/bert/training.hpp"
#include "lsmtcr/gpt/sampler.hpp"
#include "lsmtcr/gpt/training.hpp"
#include "lsmtcr/metrics/metrics.hpp"
#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/seqdata/dataset.hpp"
#include "lsmtcr/seqdata/vocab.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::cli {

namespace fs = std::filesystem;
using seqdata::Scheme;
using seqdata::Vocabulary;

namespace {

// ---- configuration ---------------------------------------------------------

std::string preset_of(const RunConfig& cfg) {
  const std::string p = cfg.text("preset", "desk");
  if (p != "desk" && p != "full") throw ConfigError("preset must be 'desk' or 'full', got '" + p + "'");
  return p;
}

template <class Fn>
auto validated(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

bert::EncoderConfig encoder_config(const RunConfig& cfg) {
  return validated([&] {
    auto c = preset_of(cfg) == "full" ? bert::EncoderConfig::full() : bert::EncoderConfig::desk();
    c.d_model = cfg.count("d_model", c.d_model);
    c.heads = cfg.count("heads", c.heads);
    c.d_head = cfg.count("d_head", c.d_head);
    c.layers = cfg.count("layers", c.layers);
    c.d_ff = cfg.count("d_ff", c.d_ff);
    c.max_len = cfg.count("max_len", c.max_len);
    c.dropout = cfg.real("dropout", c.dropout);
    c.time_kind = bert::parse_time_embedding(cfg.text("time_embedding", bert::to_string(c.time_kind)));
    c.schedule.steps = static_cast<int>(cfg.count("T", static_cast<std::size_t>(c.schedule.steps)));
    c.schedule.p_min = cfg.real("p_min", c.schedule.p_min);
    c.schedule.p_max = cfg.real("p_max", c.schedule.p_max);
    c.validate();
    return c;
  });
}

gpt::GptConfig gpt_config(const RunConfig& cfg) {
  return validated([&] {
    auto c = preset_of(cfg) == "full" ? gpt::GptConfig::full() : gpt::GptConfig::desk();
    c.d_model = cfg.count("d_model", c.d_model);
    c.heads = cfg.count("heads", c.heads);
    c.d_head = cfg.count("d_head", c.d_head);
    c.layers = cfg.count("layers", c.layers);
    c.d_ff = cfg.count("d_ff", c.d_ff);
    c.max_len = cfg.count("max_len", c.max_len);
    c.dropout = cfg.real("dropout", c.dropout);
    c.validate();
    return c;
  });
}

assembler::TwoStageConfig two_stage_config(const RunConfig& cfg) {
  return validated([&] {
    auto c = preset_of(cfg) == "full" ? assembler::TwoStageConfig::full() : assembler::TwoStageConfig::desk();
    c.stage1.d_model = c.stage2.d_model = cfg.count("d_model", c.stage1.d_model);
    c.stage1.heads = c.stage2.heads = cfg.count("heads", c.stage1.heads);
    c.stage1.d_head = c.stage2.d_head = cfg.count("d_head", c.stage1.d_head);
    c.stage1.layers = cfg.count("layers", c.stage1.layers);
    c.stage2.enc_layers = c.stage2.dec_layers = cfg.count("layers", c.stage2.enc_layers);
    c.stage1.d_ff = c.stage2.d_ff = cfg.count("d_ff", c.stage1.d_ff);
    c.stage1.max_len = c.stage2.max_cdr3_len = cfg.count("max_cdr3_len", c.stage1.max_len);
    c.stage2.max_full_len = cfg.count("max_len", c.stage2.max_full_len);
    c.stage1.dropout = c.stage2.dropout = cfg.real("dropout", c.stage1.dropout);
    c.stage1.validate();
    c.stage2.validate();
    return c;
  });
}

nn::TrainOptions train_options(const RunConfig& cfg) {
  nn::TrainOptions o;
  o.epochs = cfg.count("epochs", 20);
  o.batch_size = cfg.count("batch_size", 8);
  o.lr_peak = cfg.real("lr", 1e-3);
  o.weight_decay = cfg.real("weight_decay", 0.01);
  o.warmup_fraction = cfg.real("warmup", 0.1);
  o.seed = cfg.seed();
  if (o.epochs == 0) throw ConfigError("epochs must be positive");
  if (o.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(o.lr_peak >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(o.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(o.warmup_fraction >= 0.0 && o.warmup_fraction <= 1.0)) throw ConfigError("warmup must lie in [0, 1]");
  return o;
}

seqdata::Chain chain_of(const RunConfig& cfg, const std::string& fallback) {
  return validated([&] { return seqdata::parse_chain(cfg.text("chain", fallback)); });
}

fs::path out_dir(const RunConfig& cfg) { return cfg.require_text("out"); }

// ---- files -----------------------------------------------------------------

/// Writes via a sibling temporary so a failure never leaves a partial file.
void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
    if (!f) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string train_log(const std::vector<nn::StepLog>& log) {
  std::ostringstream os;
  os << "step,loss,lr\n";
  for (const auto& s : log) os << s.step << ',' << nn::format_double(s.loss) << ',' << nn::format_double(s.lr) << '\n';
  return os.str();
}

nn::CheckpointData read_checkpoint(const RunConfig& cfg, const std::string& key) {
  return nn::load_checkpoint(cfg.input(key));
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

struct GenerationRow {
  std::string epitope, chain, cdr3, temperature;
};

std::vector<GenerationRow> parse_generation(const std::vector<std::string>& lines, const fs::path& path) {
  std::vector<GenerationRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = seqdata::split_csv_line(lines[i]);
    if (f.size() != 7) throw seqdata::DataError(path.string() + ": expected 7 fields", i + 1);
    rows.push_back({f[0], f[1], f[3], f[5]});
  }
  return rows;
}

/// Sequences of a corpus, generation CSV (cdr3 column) or dataset CSV (CDR3
/// of `chain`).
std::vector<std::string> read_sequences(const fs::path& path, seqdata::Chain chain) {
  const auto lines = read_lines(path);
  if (!lines.empty() && lines[0] == gpt::kGenerationHeader) {
    std::vector<std::string> out;
    for (const auto& r : parse_generation(lines, path)) out.push_back(r.cdr3);
    return out;
  }
  if (!lines.empty() && lines[0] == seqdata::kDatasetHeader) {
    std::vector<std::string> out;
    for (const auto& r : seqdata::load_dataset(path)) {
      if (r.cdr3(chain)) out.push_back(*r.cdr3(chain));
    }
    return out;
  }
  return seqdata::load_corpus(path);
}

std::vector<seqdata::TokenSequence> encode_corpus(const std::vector<std::string>& seqs, Scheme scheme,
                                                  std::size_t max_len, const fs::path& origin) {
  if (seqs.empty()) throw ConfigError("corpus " + origin.string() + " is empty");
  std::vector<seqdata::TokenSequence> out;
  out.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    try {
      out.push_back(Vocabulary::encode(seqs[i], scheme, max_len));
    } catch (const std::invalid_argument& e) {
      throw seqdata::DataError(origin.string() + ": " + e.what(), i + 1);
    }
  }
  return out;
}

std::string sanitize(const std::string& name) {
  std::string s = name;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  }
  return s;
}

nn::Metadata with_run_info(nn::Metadata meta, const nn::TrainOptions& o, std::size_t steps) {
  meta["train.seed"] = std::to_string(o.seed);
  meta["train.epochs"] = std::to_string(o.epochs);
  meta["train.batch_size"] = std::to_string(o.batch_size);
  meta["train.lr"] = nn::format_double(o.lr_peak);
  meta["train.weight_decay"] = nn::format_double(o.weight_decay);
  meta["train.warmup"] = nn::format_double(o.warmup_fraction);
  meta["train.steps"] = std::to_string(steps);
  return meta;
}

gpt::Cdr3Gpt load_decoder(const nn::CheckpointData& data) { return gpt::Cdr3Gpt::from_checkpoint(data); }

}  // namespace

// ---- commands --------------------------------------------------------------

void cmd_pretrain_epitope(const RunConfig& cfg, std::ostream& out) {
  const auto arch = encoder_config(cfg);
  const auto opts = train_options(cfg);
  const fs::path corpus_path = cfg.input("corpus");
  const fs::path dir = out_dir(cfg);
  const auto corpus = encode_corpus(seqdata::load_corpus(corpus_path), Scheme::plain, arch.max_len, corpus_path);

  bert::EpitopeBert model(arch, mix_seed({opts.seed, 0xB}));
  std::vector<nn::StepLog> log;
  const auto losses = bert::pretrain_mlm(model, corpus, opts, [&](const nn::StepLog& s) { log.push_back(s); });
  const auto val = bert::validate(model, corpus);

  nn::save_checkpoint(dir / "model", model.params(), with_run_info(model.metadata(), opts, log.size()));
  write_file(dir / "train_log.csv", train_log(log));
  out << "epitope encoder: " << corpus.size() << " sequences, " << log.size() << " steps, final epoch loss "
      << (losses.empty() ? 0.0 : losses.back()) << ", masked accuracy " << val.accuracy << " at t="
      << arch.schedule.steps / 2 << '\n';
}

void cmd_pretrain_cdr3(const RunConfig& cfg, std::ostream& out) {
  const auto arch = gpt_config(cfg);
  const auto opts = train_options(cfg);
  const auto chain = chain_of(cfg, "beta");
  const fs::path corpus_path = cfg.input("corpus");
  const fs::path dir = out_dir(cfg);
  const auto corpus = encode_corpus(seqdata::load_corpus(corpus_path), Scheme::bos_eos, arch.max_len, corpus_path);

  gpt::Cdr3Gpt model(arch, mix_seed({opts.seed, 0xC}));
  std::vector<nn::StepLog> log;
  gpt::pretrain(model, corpus, opts, [&](const nn::StepLog& s) { log.push_back(s); });
  const double loss = gpt::evaluate_lm(model, corpus);

  auto meta = with_run_info(model.metadata(), opts, log.size());
  meta["chain"] = std::string(seqdata::to_string(chain));
  nn::save_checkpoint(dir / "model", model.params(), meta);
  write_file(dir / "train_log.csv", train_log(log));
  out << "cdr3 decoder (" << seqdata::to_string(chain) << "): " << corpus.size() << " sequences, " << log.size()
      << " steps, per-token loss " << loss << '\n';
}

void cmd_transfer_alpha(const RunConfig& cfg, std::ostream& out) {
  const auto arch = gpt_config(cfg);
  const auto opts = train_options(cfg);
  const fs::path corpus_path = cfg.input("corpus");
  const fs::path dir = out_dir(cfg);
  const auto beta = read_checkpoint(cfg, "beta_checkpoint");
  const auto corpus = encode_corpus(seqdata::load_corpus(corpus_path), Scheme::bos_eos, arch.max_len, corpus_path);

  std::vector<nn::StepLog> log;
  gpt::Cdr3Gpt alpha =
      gpt::transfer_to_alpha(beta, arch, corpus, opts, [&](const nn::StepLog& s) { log.push_back(s); });
  const double loss = gpt::evaluate_lm(alpha, corpus);

  auto meta = with_run_info(alpha.metadata(), opts, log.size());
  meta["chain"] = "alpha";
  nn::save_checkpoint(dir / "model", alpha.params(), meta);
  write_file(dir / "train_log.csv", train_log(log));
  out << "alpha decoder: " << corpus.size() << " sequences, " << log.size() << " steps, per-token loss " << loss
      << '\n';
}

void cmd_finetune(const RunConfig& cfg, std::ostream& out) {
  const auto opts = train_options(cfg);
  const auto chain = chain_of(cfg, "beta");
  const std::string freeze = cfg.text("freeze", "standard");
  if (freeze != "standard" && freeze != "adapters" && freeze != "none") {
    throw ConfigError("freeze must be standard, adapters or none");
  }
  const fs::path pairs_path = cfg.input("pairs");
  const fs::path dir = out_dir(cfg);
  const auto encoder = bert::EpitopeBert::from_checkpoint(read_checkpoint(cfg, "encoder"));
  const auto base_data = read_checkpoint(cfg, "decoder");
  gpt::Cdr3Gpt base = load_decoder(base_data);
  gpt::Cdr3Gpt decoder = base.config().conditioned ? base.clone()
                                                   : base.with_adapters(encoder.config().d_model, mix_seed({opts.seed, 0xF}));
  if (decoder.config().cond_dim != encoder.config().d_model) {
    throw nn::ManifestMismatch("cond_dim: decoder expects " + std::to_string(decoder.config().cond_dim) +
                               ", encoder d_model is " + std::to_string(encoder.config().d_model));
  }

  std::vector<gpt::ConditionalExample> pairs;
  const auto records = seqdata::load_dataset(pairs_path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& cdr3 = records[i].cdr3(chain);
    if (!cdr3) continue;
    try {
      pairs.push_back({Vocabulary::encode(records[i].epitope, Scheme::plain, encoder.config().max_len),
                       Vocabulary::encode(*cdr3, Scheme::bos_eos, decoder.config().max_len)});
    } catch (const std::invalid_argument& e) {
      throw seqdata::DataError(pairs_path.string() + ": " + e.what(), i + 2);
    }
  }
  if (pairs.empty()) throw ConfigError("no record in " + pairs_path.string() + " carries a " +
                                       std::string(seqdata::to_string(chain)) + " CDR3");

  const gpt::FreezePolicy policy = freeze == "standard"   ? gpt::FreezePolicy::standard(decoder.config())
                                   : freeze == "adapters" ? gpt::FreezePolicy::adapters_only()
                                                          : gpt::FreezePolicy::none();
  std::vector<nn::StepLog> log;
  gpt::finetune_conditional(pairs, encoder, decoder, policy, opts, [&](const nn::StepLog& s) { log.push_back(s); });
  const double loss = gpt::evaluate_conditional(pairs, encoder, decoder);

  auto meta = with_run_info(decoder.metadata(), opts, log.size());
  meta["chain"] = std::string(seqdata::to_string(chain));
  meta["freeze"] = freeze;
  nn::save_checkpoint(dir / "model", decoder.params(), meta);
  write_file(dir / "train_log.csv", train_log(log));
  out << "conditioned decoder (" << seqdata::to_string(chain) << "): " << pairs.size() << " pairs, " << log.size()
      << " steps, per-token loss " << loss << '\n';
}

void cmd_train_assembler(const RunConfig& cfg, std::ostream& out) {
  const auto arch = two_stage_config(cfg);
  const auto opts = train_options(cfg);
  const auto chain = chain_of(cfg, "beta");
  const fs::path pairs_path = cfg.input("pairs");
  const fs::path dir = out_dir(cfg);
  const auto records = seqdata::load_dataset(pairs_path);

  std::vector<nn::StepLog> log1, log2;
  auto result = validated([&] {
    return assembler::train_two_stage(records, chain, arch, opts, [&](int stage, const nn::StepLog& s) {
      (stage == 1 ? log1 : log2).push_back(s);
    });
  });
  const auto rep = assembler::evaluate_exact_match(records, result.model);

  assembler::save_two_stage(dir / "model", result.model);
  write_file(dir / "train_log_stage1.csv", train_log(log1));
  write_file(dir / "train_log_stage2.csv", train_log(log2));
  out << "assembler (" << seqdata::to_string(chain) << "): " << result.report.used << " records used, "
      << result.report.skipped << " skipped\n"
      << "  V accuracy " << rep.v_accuracy << ", J accuracy " << rep.j_accuracy << '\n'
      << "  exact match with reference genes " << rep.exact_true_genes << ", with predicted genes "
      << rep.exact_predicted_genes << '\n';
}

void cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const auto temps = cfg.reals("temperature", {1.0});
  for (double t : temps) {
    if (!(t >= 0.0)) throw ConfigError("temperatures must be >= 0");
  }
  const std::size_t samples = cfg.count("samples", 10);
  const std::size_t max_len = cfg.count("max_cdr3_len", 32);
  const fs::path dir = out_dir(cfg);
  const auto dec_data = read_checkpoint(cfg, "decoder");
  const gpt::Cdr3Gpt decoder = load_decoder(dec_data);
  const std::string chain = dec_data.metadata.count("chain") ? dec_data.metadata.at("chain") : "beta";
  if (max_len == 0 || max_len + 1 > decoder.config().max_len) {
    throw ConfigError("max_cdr3_len must lie in 1.." + std::to_string(decoder.config().max_len - 1));
  }

  std::vector<std::string> epitopes{""};
  std::optional<bert::EpitopeBert> encoder;
  if (decoder.config().conditioned) {
    encoder.emplace(bert::EpitopeBert::from_checkpoint(read_checkpoint(cfg, "encoder")));
    if (encoder->config().d_model != decoder.config().cond_dim) {
      throw nn::ManifestMismatch("cond_dim: decoder expects " + std::to_string(decoder.config().cond_dim) +
                                 ", encoder d_model is " + std::to_string(encoder->config().d_model));
    }
    epitopes = seqdata::load_corpus(cfg.input("epitopes"));
    if (epitopes.empty()) throw ConfigError("epitope list is empty");
    for (const auto& e : epitopes) Vocabulary::encode(e, Scheme::plain, encoder->config().max_len);
  }

  std::ostringstream csv;
  csv << gpt::kGenerationHeader << '\n';
  for (std::size_t e = 0; e < epitopes.size(); ++e) {
    std::optional<bert::EncodedEpitope> states;
    if (encoder) states = encoder->encode_epitope(Vocabulary::encode(epitopes[e], Scheme::plain).ids);
    for (std::size_t k = 0; k < temps.size(); ++k) {
      gpt::SamplerConfig sc{temps[k], max_len, samples, mix_seed({cfg.seed(), e, k})};
      auto seqs = gpt::generate(decoder, states ? &*states : nullptr, sc);
      std::stable_sort(seqs.begin(), seqs.end(),
                       [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
      for (std::size_t r = 0; r < seqs.size(); ++r) {
        csv << epitopes[e] << ',' << chain << ',' << r + 1 << ',' << seqs[r].cdr3 << ','
            << nn::format_double(seqs[r].logprob) << ',' << nn::format_double(temps[k]) << ',' << seqs[r].seed << '\n';
      }
    }
  }
  write_file(dir / "generated.csv", csv.str());
  out << "generated " << epitopes.size() * temps.size() * samples << " sequences -> " << (dir / "generated.csv").string()
      << '\n';
}

void cmd_predict_genes(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const auto model = assembler::load_two_stage(cfg.input("assembler"));
  const auto cdr3s = read_sequences(cfg.input("input"), model.chain);
  const std::size_t max_len = model.stage1.config().max_len;
  std::ostringstream csv;
  csv << "cdr3,v_gene,j_gene,p_v,p_j\n";
  for (const auto& c : cdr3s) {
    const auto p = model.stage1.predict(Vocabulary::encode(c, Scheme::plain, max_len).ids);
    csv << c << ',' << model.genes.v_labels()[p.v] << ',' << model.genes.j_labels()[p.j] << ','
        << nn::format_double(p.p_v[p.v]) << ',' << nn::format_double(p.p_j[p.j]) << '\n';
  }
  write_file(dir / "genes.csv", csv.str());
  out << "predicted genes for " << cdr3s.size() << " CDR3s -> " << (dir / "genes.csv").string() << '\n';
}

void cmd_assemble(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const auto model = assembler::load_two_stage(cfg.input("assembler"));
  const fs::path input = cfg.input("input");
  const std::string chain(seqdata::to_string(model.chain));
  const auto lines = read_lines(input);
  std::vector<std::string> cdr3s;
  std::string source;
  if (!lines.empty() && lines[0] == gpt::kGenerationHeader) {
    for (const auto& r : parse_generation(lines, input)) {
      if (r.chain == chain) cdr3s.push_back(r.cdr3);
    }
    if (cdr3s.empty()) throw ConfigError("no " + chain + " rows in " + input.string());
    source = cfg.text("source", "denovo");
  } else {
    cdr3s = read_sequences(input, model.chain);
    source = cfg.text("source", "known");
  }
  if (source != "known" && source != "denovo") throw ConfigError("source must be known or denovo");

  const auto assembled = assembler::assemble_pipeline(cdr3s, model);
  std::ostringstream csv;
  csv << assembler::kAssemblyHeader << '\n';
  for (const auto& a : assembled) {
    csv << chain << ',' << a.cdr3 << ',' << a.v_gene << ',' << a.j_gene << ',' << a.full_sequence << ',' << source
        << '\n';
  }
  write_file(dir / "assembled.csv", csv.str());
  out << "assembled " << assembled.size() << " " << chain << " chains -> " << (dir / "assembled.csv").string() << '\n';
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const auto chain = chain_of(cfg, "beta");
  std::vector<fs::path> gen_paths;
  {
    std::stringstream ss(cfg.require_text("generated"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if (!fs::exists(item)) throw MissingInput(item);
      gen_paths.emplace_back(item);
    }
  }
  const fs::path ref_path = cfg.input("reference");
  const auto reference = read_sequences(ref_path, chain);
  if (reference.empty()) throw ConfigError("reference repertoire is empty");

  // One condition per (file, temperature) block, or per file for plain lists.
  std::vector<std::pair<std::string, metrics::Repertoire>> conditions;
  for (const auto& p : gen_paths) {
    const auto lines = read_lines(p);
    if (!lines.empty() && lines[0] == gpt::kGenerationHeader) {
      std::map<std::string, metrics::Repertoire> by_temp;
      std::vector<std::string> order;
      for (const auto& r : parse_generation(lines, p)) {
        if (!by_temp.count(r.temperature)) order.push_back(r.temperature);
        by_temp[r.temperature].push_back(r.cdr3);
      }
      for (const auto& t : order) conditions.emplace_back(p.stem().string() + "@t=" + t, by_temp[t]);
    } else {
      conditions.emplace_back(p.stem().string(), read_sequences(p, chain));
    }
  }
  for (const auto& [name, rep] : conditions) {
    if (rep.empty()) throw ConfigError("condition " + name + " has no sequences");
  }

  std::vector<metrics::DiversityReport> reports;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    reports.push_back(metrics::diversity_report(conditions[i].first, conditions[i].second, reference,
                                                mix_seed({cfg.seed(), i})));
  }
  if (reports.size() >= 2) {
    metrics::composite_score(reports);
  } else {
    out << "note: composite needs at least two conditions; reported as NA\n";
  }

  std::ostringstream div;
  div << metrics::kDiversityHeader << '\n';
  for (const auto& r : reports) div << metrics::format_diversity_row(r) << '\n';
  write_file(dir / "diversity.csv", div.str());

  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& rep = conditions[i].second;
    std::ostringstream m;
    m << "metric,value\n";
    const char* names[] = {"jaccard2", "diversity_ratio", "novel_ratio", "shannon_rel", "simpson_rel", "aa_div",
                           "length_realism"};
    const auto values = r.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      m << names[k] << ',' << (std::isnan(values[k]) ? "NA" : nn::format_double(values[k])) << '\n';
    }
    m << "composite," << (std::isnan(r.composite) ? "NA" : nn::format_double(r.composite)) << '\n';
    for (std::size_t k : {2u, 3u}) {
      double jsd = std::numeric_limits<double>::quiet_NaN();
      try {
        jsd = metrics::js_divergence(metrics::kmer_spectrum(rep, k), metrics::kmer_spectrum(reference, k));
      } catch (const std::invalid_argument&) {
      }
      m << "jsd" << k << ',' << (std::isnan(jsd) ? "NA" : nn::format_double(jsd)) << '\n';
    }
    write_file(dir / "metrics" / (sanitize(r.condition) + ".csv"), m.str());
  }

  if (cfg.has("assembled")) {
    const fs::path asm_path = cfg.input("assembled");
    const auto records = seqdata::load_dataset(cfg.input("dataset"));
    std::map<std::pair<std::string, std::string>, std::string> truth;  // (chain, cdr3) -> full
    for (const auto& rec : records) {
      for (auto c : {seqdata::Chain::alpha, seqdata::Chain::beta}) {
        if (rec.cdr3(c) && rec.full(c)) truth.emplace(std::make_pair(std::string(seqdata::to_string(c)), *rec.cdr3(c)), *rec.full(c));
      }
    }
    metrics::AlignedPairs pairs;
    const auto lines = read_lines(asm_path);
    if (lines.empty() || lines[0] != assembler::kAssemblyHeader) {
      throw seqdata::DataError(asm_path.string() + ": expected header " + std::string(assembler::kAssemblyHeader), 1);
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = seqdata::split_csv_line(lines[i]);
      if (f.size() != 6) throw seqdata::DataError(asm_path.string() + ": expected 6 fields", i + 1);
      auto it = truth.find({f[0], f[1]});
      if (it != truth.end()) pairs.emplace_back(f[4], it->second);
    }
    if (pairs.empty()) throw ConfigError("no assembled row has a reference chain in the dataset");
    const auto s = metrics::similarity_report(pairs);
    std::ostringstream m;
    m << "metric,value\n"
      << "pairs," << pairs.size() << '\n'
      << "exact_match_rate," << nn::format_double(s.exact_match_rate) << '\n'
      << "mean_norm_hamming," << nn::format_double(s.mean_norm_hamming) << '\n'
      << "mean_norm_levenshtein," << nn::format_double(s.mean_norm_levenshtein) << '\n'
      << "jaccard3," << nn::format_double(s.jaccard3) << '\n';
    write_file(dir / "similarity.csv", m.str());
    out << "similarity over " << pairs.size() << " known chains: exact match " << s.exact_match_rate << '\n';
  }
  out << "evaluated " << reports.size() << " condition(s) -> " << (dir / "diversity.csv").string() << '\n';
}

std::vector<ModelCount> preset_parameter_counts(const std::string& preset, std::size_t n_v, std::size_t n_j) {
  if (preset != "desk" && preset != "full") throw ConfigError("preset must be 'desk' or 'full'");
  const bool full = preset == "full";
  const auto enc = full ? bert::EncoderConfig::full() : bert::EncoderConfig::desk();
  auto dec = full ? gpt::GptConfig::full() : gpt::GptConfig::desk();
  auto two = full ? assembler::TwoStageConfig::full() : assembler::TwoStageConfig::desk();
  two.stage1.n_v = two.stage2.n_v = n_v;
  two.stage1.n_j = two.stage2.n_j = n_j;
  std::vector<ModelCount> out;
  out.push_back({"epitope-bert", nn::count_parameters(bert::encoder_layout(enc))});
  out.push_back({"cdr3-gpt", nn::count_parameters(gpt::gpt_layout(dec))});
  dec.conditioned = true;
  dec.cond_dim = enc.d_model;
  out.push_back({"cdr3-gpt+adapters", nn::count_parameters(gpt::gpt_layout(dec))});
  out.push_back({"assembler.stage1", nn::count_parameters(assembler::gene_predictor_layout(two.stage1))});
  out.push_back({"assembler.stage2", nn::count_parameters(assembler::seq2seq_layout(two.stage2))});
  return out;
}

void cmd_inspect(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out) {
  if (checkpoint.empty()) {
    const std::string preset = preset_of(cfg);
    out << "preset " << preset << " (layout counts; assembler heads sized for 60 V / 14 J genes)\n";
    for (const auto& m : preset_parameter_counts(preset)) {
      out << "  " << std::left << std::setw(20) << m.model << ' ' << m.parameters << '\n';
    }
    return;
  }
  if (!fs::exists(checkpoint)) throw MissingInput(checkpoint);
  const auto data = nn::load_checkpoint(checkpoint);
  out << "checkpoint " << checkpoint << '\n';
  for (const auto& [k, v] : data.metadata) out << "  " << k << " = " << v << '\n';
  std::map<std::string, std::size_t> groups;
  std::vector<std::string> order;
  std::size_t total = 0;
  for (const auto& t : data.tensors) {
    const std::size_t n = nn::element_count(t.shape);
    const auto dot = t.name.find('.');
    std::string group = t.name.substr(0, dot);
    if ((group == "layers" || group == "blocks" || group == "enc" || group == "dec") && dot != std::string::npos) {
      group = t.name.substr(0, t.name.find('.', dot + 1));
    }
    if (!groups.count(group)) order.push_back(group);
    groups[group] += n;
    total += n;
  }
  out << "parameters by module:\n";
  for (const auto& g : order) out << "  " << std::left << std::setw(20) << g << ' ' << groups[g] << '\n';
  out << "total parameters: " << total << '\n';
}

// ---- entry point -----------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Epitope-conditioned TCR generation and assembly"};
  app.require_subcommand(1);

  struct Common {
    std::string config, preset, temperature, out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
  };
  std::map<std::string, Common> common;
  std::string inspect_path;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"pretrain-epitope", "Masked-diffusion pretraining of the epitope encoder"},
      {"pretrain-cdr3", "Causal pretraining of the CDR3 decoder"},
      {"transfer-alpha", "Continue a beta decoder on an alpha corpus"},
      {"finetune", "Epitope-conditioned fine-tuning of the decoder"},
      {"train-assembler", "Train the two-stage gene/full-length assembler for one chain"},
      {"generate", "Sample CDR3s per epitope and temperature"},
      {"predict-genes", "Stage-1 V/J prediction for a CDR3 list"},
      {"assemble", "Predict genes and generate full-length chains"},
      {"evaluate", "Diversity, k-mer and similarity metrics"},
      {"inspect", "Summarize a checkpoint or a preset's parameter counts"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    Common& c = common[name];
    sub->add_option("--config", c.config, "key=value configuration file");
    sub->add_option("--seed", c.seed, "random seed (overrides the config)");
    sub->add_option("--preset", c.preset, "architecture preset")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option("--temperature", c.temperature, "comma-separated temperature list");
    sub->add_option("--out", c.out_dir, "output directory");
    sub->add_option("--set", c.sets, "extra key=value override (repeatable)");
    if (name == "inspect") sub->add_option("checkpoint", inspect_path, "checkpoint directory");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitFailure;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const Common& c = common[name];
  try {
    RunConfig cfg;
    if (!c.config.empty()) cfg = RunConfig::load(c.config);
    for (const auto& s : c.sets) cfg.set_assignment(s);
    if (c.seed) cfg.set("seed", std::to_string(*c.seed));
    if (!c.preset.empty()) cfg.set("preset", c.preset);
    if (!c.temperature.empty()) cfg.set("temperature", c.temperature);
    if (!c.out_dir.empty()) cfg.set("out", c.out_dir);

    if (name == "pretrain-epitope") cmd_pretrain_epitope(cfg, out);
    else if (name == "pretrain-cdr3") cmd_pretrain_cdr3(cfg, out);
    else if (name == "transfer-alpha") cmd_transfer_alpha(cfg, out);
    else if (name == "finetune") cmd_finetune(cfg, out);
    else if (name == "train-assembler") cmd_train_assembler(cfg, out);
    else if (name == "generate") cmd_generate(cfg, out);
    else if (name == "predict-genes") cmd_predict_genes(cfg, out);
    else if (name == "assemble") cmd_assemble(cfg, out);
    else if (name == "evaluate") cmd_evaluate(cfg, out);
    else if (name == "inspect") cmd_inspect(cfg, inspect_path, out);
    return kExitOk;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const nn::ManifestMismatch& e) {
    err << "error: manifest mismatch: " << e.what() << '\n';
    return kExitManifestMismatch;
  } catch (const nn::CheckpointError& e) {
    err << "error: corrupt checkpoint: " << e.what() << '\n';
    return kExitCorruptCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace lsmtcr::cli
