#pragma once

// End-to-end experiment drivers. `run_ablation` executes the full transfer
// pipeline on one corpus triple — train both tokenizers, pretrain a source
// model, align the parallel corpus, transfer embeddings — then trains three
// target models identical except for initialization (transferred embeddings,
// reinitialized embeddings on the same body, fully random) and reports their
// held-out masked-LM losses side by side. `run_longcontext` evaluates a
// trained model at a short and a long context length and accounts for the
// attention-score storage of the local layers across a context sweep.
// Every stage failure is rethrown tagged with the stage name.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "transtok/alignment.hpp"
#include "transtok/common.hpp"
#include "transtok/encoder.hpp"
#include "transtok/evaluation.hpp"
#include "transtok/tokenizer.hpp"
#include "transtok/training.hpp"
#include "transtok/transtokenizer.hpp"

namespace transtok {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
  // Input paths (file-based entry points only).
  std::string source_corpus;
  std::string target_corpus;
  std::string parallel_corpus;
  std::string checkpoint;  // long-context input model
  std::string tokenizer;   // long-context input tokenizer
  // Artifact directory; empty = keep everything in memory.
  std::string work_dir;

  std::size_t source_vocab = 2000;
  std::size_t target_vocab = 2000;
  int ibm1_iterations = 5;
  std::size_t source_steps = 500;  // source pretraining budget (single stage)

  // Architecture shared by the source model and all target variants;
  // vocab_size is replaced per tokenizer at run time.
  EncoderConfig encoder;
  // Target training budget. The `seed` inside is overridden: the pipeline
  // fans its own master seed into every stage.
  TrainConfig train;

  // Long-context evaluation: 0 = 8 * train.stage1_context.
  std::size_t long_context = 0;
  std::vector<std::size_t> allocation_contexts = {256, 512, 1024, 2048};
  std::size_t eval_chunks = 0;  // cap on evaluated chunks per context; 0 = all

  std::uint64_t seed = 0;

  void validate() const {
    if (source_vocab < 16 || target_vocab < 16) {
      throw std::invalid_argument(
          "pipeline config: vocabulary targets must be >= 16");
    }
    if (ibm1_iterations < 1) {
      throw std::invalid_argument(
          "pipeline config: ibm1_iterations must be >= 1");
    }
    if (source_steps < 1) {
      throw std::invalid_argument(
          "pipeline config: source_steps must be >= 1");
    }
    if (train.held_out_frac <= 0.0) {
      throw std::invalid_argument(
          "pipeline config: held_out_frac must be positive (the ablation "
          "reports held-out losses)");
    }
    train.validate();
    EncoderConfig e = encoder;
    e.vocab_size = std::max<std::size_t>(source_vocab, target_vocab);
    e.validate();
  }
};

// Toy-scale defaults sized for a desk-class single-core run: the three-way
// initialization comparison at hidden 64 / 6 layers, ~500 training steps.
inline PipelineConfig default_ablation_config() {
  PipelineConfig c;
  c.encoder.hidden = 64;
  c.encoder.layers = 6;
  c.encoder.heads = 4;
  c.encoder.intermediate = 96;
  c.encoder.max_context = 64;
  c.encoder.global_every = 3;
  c.encoder.local_window = 16;
  c.train.stage1_steps = 500;
  c.train.stage2_steps = 0;  // single-stage budget, identical for all variants
  c.train.stage1_context = 48;
  c.train.stage2_context = 48;
  c.train.batch_sequences = 4;
  return c;
}

// Toy-scale defaults for the long-context run: a small two-stage model whose
// maximum context covers the whole allocation sweep.
inline PipelineConfig default_longcontext_config() {
  PipelineConfig c;
  c.encoder.hidden = 32;
  c.encoder.layers = 4;
  c.encoder.heads = 2;
  c.encoder.intermediate = 48;
  c.encoder.max_context = 2048;
  c.encoder.global_every = 3;
  c.encoder.local_window = 32;
  c.train.stage1_steps = 40;
  c.train.stage2_steps = 10;
  c.train.stage1_context = 256;
  c.train.stage2_context = 512;
  c.train.batch_sequences = 2;
  c.eval_chunks = 8;
  return c;
}

inline nlohmann::ordered_json pipeline_config_to_json(
    const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["source_corpus"] = c.source_corpus;
  j["target_corpus"] = c.target_corpus;
  j["parallel_corpus"] = c.parallel_corpus;
  j["checkpoint"] = c.checkpoint;
  j["tokenizer"] = c.tokenizer;
  j["work_dir"] = c.work_dir;
  j["source_vocab"] = c.source_vocab;
  j["target_vocab"] = c.target_vocab;
  j["ibm1_iterations"] = c.ibm1_iterations;
  j["source_steps"] = c.source_steps;
  j["encoder"] = encoder_config_to_json(c.encoder);
  j["train"] = train_config_to_json(c.train);
  j["long_context"] = c.long_context;
  j["allocation_contexts"] = c.allocation_contexts;
  j["eval_chunks"] = c.eval_chunks;
  j["seed"] = c.seed;
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "source_corpus") c.source_corpus = it.value().get<std::string>();
    else if (k == "target_corpus") c.target_corpus = it.value().get<std::string>();
    else if (k == "parallel_corpus") c.parallel_corpus = it.value().get<std::string>();
    else if (k == "checkpoint") c.checkpoint = it.value().get<std::string>();
    else if (k == "tokenizer") c.tokenizer = it.value().get<std::string>();
    else if (k == "work_dir") c.work_dir = it.value().get<std::string>();
    else if (k == "source_vocab") c.source_vocab = it.value().get<std::size_t>();
    else if (k == "target_vocab") c.target_vocab = it.value().get<std::size_t>();
    else if (k == "ibm1_iterations") c.ibm1_iterations = it.value().get<int>();
    else if (k == "source_steps") c.source_steps = it.value().get<std::size_t>();
    else if (k == "encoder") c.encoder = encoder_config_from_json(it.value());
    else if (k == "train") c.train = train_config_from_json(it.value());
    else if (k == "long_context") c.long_context = it.value().get<std::size_t>();
    else if (k == "allocation_contexts")
      c.allocation_contexts = it.value().get<std::vector<std::size_t>>();
    else if (k == "eval_chunks") c.eval_chunks = it.value().get<std::size_t>();
    else if (k == "seed") c.seed = it.value().get<std::uint64_t>();
    else throw std::runtime_error("pipeline config: unknown field '" + k + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stage wrapper: tag every failure with the stage that raised it.
// ---------------------------------------------------------------------------

template <class F>
auto pipeline_stage(const std::string& name, std::ostream* log, F&& fn)
    -> decltype(fn()) {
  if (log) *log << "[stage] " << name << '\n';
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error("stage '" + name + "' failed: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationInputs {
  std::string source_corpus;  // contents, one document per line
  std::string target_corpus;
  std::string parallel_tsv;   // target<TAB>source per line
};

struct AblationVariantRow {
  std::string variant;
  double initial_loss = 0.0;  // held-out masked loss before any step
  double mlm_loss = 0.0;      // held-out masked loss after training
  double perplexity = 1.0;
};

struct AblationResult {
  std::vector<AblationVariantRow> rows;  // transferred, reinit, random
  CoverageReport coverage;
  std::vector<double> ibm1_log_likelihood;
  AlignmentTable alignment;
  EmbeddingMatrix transferred;
  TokenizerModel source_tokenizer, target_tokenizer;
  std::map<std::string, std::vector<LossRow>> curves;  // variant -> history
};

inline EmbeddingMatrix embeddings_of(const EncoderModel& model) {
  EmbeddingMatrix e;
  e.rows = model.config.vocab_size;
  e.dim = model.config.hidden;
  e.values = model.embeddings.values();
  e.provenance.assign(e.rows, 0);
  return e;
}

inline nlohmann::ordered_json ablation_to_json(const AblationResult& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json o;
    o["variant"] = row.variant;
    o["initial_loss"] = row.initial_loss;
    o["mlm_loss"] = row.mlm_loss;
    o["perplexity"] = row.perplexity;
    rows.push_back(o);
  }
  j["rows"] = rows;
  nlohmann::ordered_json cov;
  cov["aligned"] = r.coverage.counts[0];
  cov["fallback"] = r.coverage.counts[1];
  cov["random_backoff"] = r.coverage.counts[2];
  cov["aligned_fraction"] = r.coverage.fractions[0];
  cov["fallback_fraction"] = r.coverage.fractions[1];
  cov["random_backoff_fraction"] = r.coverage.fractions[2];
  j["embedding_coverage"] = cov;
  j["ibm1_log_likelihood"] = r.ibm1_log_likelihood;
  return j;
}

inline std::string ablation_rows_tsv(const AblationResult& r) {
  std::string out = "variant\tmlm_loss\tperplexity\n";
  for (const auto& row : r.rows) {
    out += row.variant;
    out += '\t';
    out += format_double(row.mlm_loss);
    out += '\t';
    out += format_double(row.perplexity);
    out += '\n';
  }
  return out;
}

inline void save_ablation(const AblationResult& r, const std::string& base) {
  write_text_file(base + ".json", ablation_to_json(r).dump(2) + "\n");
  write_text_file(base + ".tsv", ablation_rows_tsv(r));
}

namespace detail {

// Trains one ablation variant and appends its report row.
inline void run_ablation_variant(AblationResult& out, const std::string& name,
                                 EncoderModel model,
                                 const std::vector<int>& stream,
                                 const TrainConfig& train,
                                 const MaskParams& mask,
                                 const std::string& work_dir,
                                 std::ostream* log) {
  pipeline_stage("variant " + name, log, [&] {
    std::string dir;
    if (!work_dir.empty()) {
      dir = (std::filesystem::path(work_dir) / ("variant-" + name)).string();
      std::filesystem::create_directories(dir);
    }
    Checkpoint ck = make_checkpoint(std::move(model));
    TwoStageSummary s = run_two_stage(ck, stream, train, mask, dir);
    const StageSummary& last =
        train.stage2_steps > 0 ? s.stage2 : s.stage1;
    AblationVariantRow row;
    row.variant = name;
    row.initial_loss = s.stage1.initial_held_out;
    row.mlm_loss = last.final_held_out;
    row.perplexity = std::exp(row.mlm_loss);
    out.rows.push_back(row);
    out.curves[name] = ck.history;
    if (!dir.empty()) {
      write_text_file((std::filesystem::path(dir) / "losses.tsv").string(),
                      losses_to_tsv(ck.history));
    }
    if (log) {
      *log << "  " << name << ": held-out " << format_double(row.initial_loss)
           << " -> " << format_double(row.mlm_loss) << '\n';
    }
  });
}

}  // namespace detail

// Full pipeline on in-memory corpora. Artifacts land under cfg.work_dir when
// it is set; the returned struct carries everything a caller needs to verify
// the run (alignment table, transferred matrix, tokenizers, loss curves).
inline AblationResult run_ablation(const AblationInputs& in,
                                   const PipelineConfig& cfg,
                                   std::ostream* log = nullptr) {
  cfg.validate();
  if (!cfg.work_dir.empty()) {
    std::filesystem::create_directories(cfg.work_dir);
  }
  const auto artifact = [&](const std::string& name) {
    return (std::filesystem::path(cfg.work_dir) / name).string();
  };

  AblationResult out;

  pipeline_stage("tokenizer training", log, [&] {
    out.source_tokenizer = train_bpe(in.source_corpus, cfg.source_vocab).model;
    out.target_tokenizer = train_bpe(in.target_corpus, cfg.target_vocab).model;
    if (!cfg.work_dir.empty()) {
      save_tokenizer(out.source_tokenizer, artifact("source_tokenizer.json"));
      save_tokenizer(out.target_tokenizer, artifact("target_tokenizer.json"));
    }
  });

  // Source pretraining: same architecture, source vocabulary, own budget.
  EncoderModel source_model;
  pipeline_stage("source pretraining", log, [&] {
    EncoderConfig scfg = cfg.encoder;
    scfg.vocab_size =
        static_cast<std::size_t>(out.source_tokenizer.vocab_size());
    source_model =
        build_model(scfg, nullptr, sub_seed(cfg.seed, "source-model"));
    TrainConfig strain = cfg.train;
    strain.stage1_steps = cfg.source_steps;
    strain.stage2_steps = 0;
    strain.seed = sub_seed(cfg.seed, "source-train");
    const std::vector<int> stream = build_token_stream(
        out.source_tokenizer, split_lines(in.source_corpus));
    Checkpoint ck = make_checkpoint(std::move(source_model));
    TwoStageSummary s = run_two_stage(
        ck, stream, strain, mask_params_from(out.source_tokenizer, strain),
        "");
    if (log) {
      *log << "  source model: held-out "
           << format_double(s.stage1.initial_held_out) << " -> "
           << format_double(s.stage1.final_held_out) << '\n';
    }
    source_model = std::move(ck.model);
    if (!cfg.work_dir.empty()) {
      save_model(source_model, artifact("source_model.bin"));
      write_text_file(artifact("source_losses.tsv"),
                      losses_to_tsv(ck.history));
    }
  });

  pipeline_stage("alignment", log, [&] {
    ParallelCorpus corpus = parse_parallel_tsv(in.parallel_tsv);
    Ibm1Result ibm1 = train_ibm1(corpus, out.target_tokenizer,
                                 out.source_tokenizer, cfg.ibm1_iterations);
    out.ibm1_log_likelihood = ibm1.log_likelihood;
    out.alignment = extract_counts(ibm1.table, corpus, out.target_tokenizer,
                                   out.source_tokenizer);
    if (!cfg.work_dir.empty()) {
      save_alignment(out.alignment, artifact("alignment.tsv"));
    }
  });

  pipeline_stage("embedding transfer", log, [&] {
    FallbackMap fallback =
        default_fallback_map(out.target_tokenizer, out.source_tokenizer);
    out.transferred = init_embeddings(
        out.alignment, embeddings_of(source_model), fallback,
        out.target_tokenizer, sub_seed(cfg.seed, "transfer"),
        &out.source_tokenizer);
    out.coverage = coverage_report(out.transferred, out.target_tokenizer);
    if (!cfg.work_dir.empty()) {
      save_embeddings(out.transferred, artifact("transferred.emb"));
      save_fallback(fallback, artifact("fallback.tsv"));
    }
    if (log) {
      *log << "  coverage: aligned " << out.coverage.counts[0] << ", fallback "
           << out.coverage.counts[1] << ", random "
           << out.coverage.counts[2] << '\n';
    }
  });

  // Three target models, identical training schedule (same batches, same
  // masks), differing only in initialization. "transferred" and "reinit"
  // share a body seed bitwise; "random" re-draws everything.
  EncoderConfig tcfg = cfg.encoder;
  tcfg.vocab_size =
      static_cast<std::size_t>(out.target_tokenizer.vocab_size());
  TrainConfig ttrain = cfg.train;
  ttrain.seed = sub_seed(cfg.seed, "target-train");
  const MaskParams tmask = mask_params_from(out.target_tokenizer, ttrain);
  const std::vector<int> tstream = build_token_stream(
      out.target_tokenizer, split_lines(in.target_corpus));
  const std::uint64_t shared_body = sub_seed(cfg.seed, "target-model");

  detail::run_ablation_variant(
      out, "transtokenized",
      build_model(tcfg, &out.transferred, shared_body), tstream, ttrain,
      tmask, cfg.work_dir, log);
  detail::run_ablation_variant(
      out, "embedding-reinit", build_model(tcfg, nullptr, shared_body),
      tstream, ttrain, tmask, cfg.work_dir, log);
  detail::run_ablation_variant(
      out, "random-init",
      build_model(tcfg, nullptr, sub_seed(cfg.seed, "target-model-random")),
      tstream, ttrain, tmask, cfg.work_dir, log);

  if (!cfg.work_dir.empty()) save_ablation(out, artifact("ablation"));
  return out;
}

// Path-based wrapper: validates every referenced input before any stage runs.
inline AblationResult run_ablation_files(const PipelineConfig& cfg,
                                         std::ostream* log = nullptr) {
  cfg.validate();
  for (const auto& [what, path] :
       {std::pair<std::string, std::string>{"source_corpus",
                                            cfg.source_corpus},
        {"target_corpus", cfg.target_corpus},
        {"parallel_corpus", cfg.parallel_corpus}}) {
    if (path.empty()) {
      throw std::invalid_argument("pipeline config: " + what + " not set");
    }
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("pipeline config: " + what +
                               " does not exist: " + path);
    }
  }
  AblationInputs in;
  in.source_corpus = read_text_file(cfg.source_corpus);
  in.target_corpus = read_text_file(cfg.target_corpus);
  in.parallel_tsv = read_text_file(cfg.parallel_corpus);
  return run_ablation(in, cfg, log);
}

// ---------------------------------------------------------------------------
// Planted-dictionary recovery check (for cipher-built corpora)
// ---------------------------------------------------------------------------

struct DictionaryCheck {
  std::size_t checked = 0;   // dictionary words that are single tokens
  std::size_t correct = 0;   // argmax-aligned to their planted source word
  std::size_t skipped = 0;   // not a single token on both sides
};

// For each planted (source word -> target word) pair whose full-word token
// exists in both vocabularies, verifies the target token's alignment counts
// put their maximum on the planted source token.
inline DictionaryCheck check_dictionary_recovery(
    const AlignmentTable& table, const TokenizerModel& tgt,
    const TokenizerModel& src,
    const std::map<std::string, std::string>& dictionary) {
  DictionaryCheck out;
  for (const auto& [src_word, tgt_word] : dictionary) {
    const int sid = src.id_of(src_word + kEndOfWord);
    const int tid = tgt.id_of(tgt_word + kEndOfWord);
    if (sid < 0 || tid < 0) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    auto row = table.counts.find(tid);
    if (row == table.counts.end()) continue;
    int best = -1;
    double best_c = -1.0;
    for (const auto& [s, c] : row->second) {
      if (c > best_c) {
        best_c = c;
        best = s;
      }
    }
    if (best == sid) ++out.correct;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Long-context evaluation and score-storage accounting
// ---------------------------------------------------------------------------

struct LongContextRow {
  std::size_t context = 0;
  double loss = 0.0;
  double perplexity = 1.0;
  std::size_t chunks = 0;
};

struct AllocationRow {
  std::size_t context = 0;
  std::size_t local_score_elements = 0;
  std::size_t global_score_elements = 0;
  double local_per_token = 0.0;
};

struct LongContextResult {
  LongContextRow short_eval, long_eval;
  std::vector<AllocationRow> allocation;
  // max/min of local_per_token over the sweep; 1 = exactly linear growth.
  double allocation_ratio = std::numeric_limits<double>::quiet_NaN();
};

inline LongContextResult run_longcontext(
    const EncoderModel& model, const TokenizerModel& tok,
    const std::vector<std::string>& docs, std::size_t short_context,
    std::size_t long_context, const std::vector<std::size_t>& allocation_contexts,
    const MaskParams& mask, std::uint64_t seed, std::size_t eval_chunks = 0) {
  if (short_context < 2 || long_context <= short_context) {
    throw std::invalid_argument(
        "run_longcontext: need long_context > short_context >= 2");
  }
  if (long_context > model.config.max_context) {
    throw std::invalid_argument(
        "run_longcontext: long_context exceeds the model's max_context");
  }
  if (allocation_contexts.empty()) {
    throw std::invalid_argument(
        "run_longcontext: allocation sweep needs at least one context");
  }
  LongContextResult out;
  const auto eval_at = [&](std::size_t context,
                           const char* tag) -> LongContextRow {
    MlmEval e = eval_mlm(model, tok, docs, context, mask,
                         sub_seed(seed, tag), eval_chunks);
    return {context, e.loss, e.perplexity, e.chunks};
  };
  out.short_eval = eval_at(short_context, "longcontext.short");
  out.long_eval = eval_at(long_context, "longcontext.long");

  const std::vector<int> stream = build_token_stream(tok, docs);
  for (std::size_t c : allocation_contexts) {
    if (c < 2 || c > model.config.max_context) {
      throw std::invalid_argument(
          "run_longcontext: allocation context " + std::to_string(c) +
          " outside [2, max_context]");
    }
    if (stream.size() < c) {
      throw std::runtime_error(
          "run_longcontext: corpus too small for allocation context " +
          std::to_string(c));
    }
    std::vector<int> chunk(stream.begin(),
                           stream.begin() + static_cast<std::ptrdiff_t>(c));
    AttnStats stats;
    {
      AttnStatsScope scope(&stats);
      NoGradGuard ng;
      encoder_hidden(model, chunk);
    }
    if (stats.local_score_elements == 0) {
      throw std::runtime_error(
          "run_longcontext: model has no local attention layers to account");
    }
    AllocationRow row;
    row.context = c;
    row.local_score_elements = stats.local_score_elements;
    row.global_score_elements = stats.global_score_elements;
    row.local_per_token = static_cast<double>(stats.local_score_elements) /
                          static_cast<double>(c);
    out.allocation.push_back(row);
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& row : out.allocation) {
    lo = std::min(lo, row.local_per_token);
    hi = std::max(hi, row.local_per_token);
  }
  out.allocation_ratio = hi / lo;
  return out;
}

inline nlohmann::ordered_json longcontext_to_json(const LongContextResult& r) {
  nlohmann::ordered_json j;
  const auto row_json = [](const LongContextRow& row) {
    nlohmann::ordered_json o;
    o["context"] = row.context;
    o["mlm_loss"] = row.loss;
    o["perplexity"] = row.perplexity;
    o["chunks"] = row.chunks;
    return o;
  };
  j["rows"] = {row_json(r.short_eval), row_json(r.long_eval)};
  nlohmann::ordered_json alloc = nlohmann::ordered_json::array();
  for (const auto& a : r.allocation) {
    nlohmann::ordered_json o;
    o["context"] = a.context;
    o["local_score_elements"] = a.local_score_elements;
    o["global_score_elements"] = a.global_score_elements;
    o["local_per_token"] = a.local_per_token;
    alloc.push_back(o);
  }
  j["allocation"] = alloc;
  j["allocation_ratio"] = r.allocation_ratio;
  return j;
}

inline std::string longcontext_rows_tsv(const LongContextResult& r) {
  std::string out = "context\tmlm_loss\tperplexity\n";
  for (const LongContextRow* row : {&r.short_eval, &r.long_eval}) {
    out += std::to_string(row->context);
    out += '\t';
    out += format_double(row->loss);
    out += '\t';
    out += format_double(row->perplexity);
    out += '\n';
  }
  return out;
}

inline std::string allocation_tsv(const LongContextResult& r) {
  std::string out =
      "context\tlocal_score_elements\tglobal_score_elements\tlocal_per_token\n";
  for (const auto& a : r.allocation) {
    out += std::to_string(a.context);
    out += '\t';
    out += std::to_string(a.local_score_elements);
    out += '\t';
    out += std::to_string(a.global_score_elements);
    out += '\t';
    out += format_double(a.local_per_token);
    out += '\n';
  }
  return out;
}

// Writes base.json, base.tsv (loss rows) and base_allocation.tsv.
inline void save_longcontext(const LongContextResult& r,
                             const std::string& base) {
  write_text_file(base + ".json", longcontext_to_json(r).dump(2) + "\n");
  write_text_file(base + ".tsv", longcontext_rows_tsv(r));
  write_text_file(base + "_allocation.tsv", allocation_tsv(r));
}

// Path-based driver. With cfg.checkpoint set it evaluates that model;
// otherwise it trains a fresh model two-stage on the corpus first (tokenizer
// loaded from cfg.tokenizer or trained in place). Short context is the
// stage-1 context; long context defaults to 8x that.
inline LongContextResult run_longcontext_files(const PipelineConfig& cfg,
                                               std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.target_corpus.empty()) {
    throw std::invalid_argument("pipeline config: target_corpus not set");
  }
  if (!std::filesystem::exists(cfg.target_corpus)) {
    throw std::runtime_error("pipeline config: target_corpus does not exist: " +
                             cfg.target_corpus);
  }
  if (!cfg.checkpoint.empty() && !std::filesystem::exists(cfg.checkpoint)) {
    throw std::runtime_error("pipeline config: checkpoint does not exist: " +
                             cfg.checkpoint);
  }
  if (!cfg.tokenizer.empty() && !std::filesystem::exists(cfg.tokenizer)) {
    throw std::runtime_error("pipeline config: tokenizer does not exist: " +
                             cfg.tokenizer);
  }
  if (!cfg.work_dir.empty()) {
    std::filesystem::create_directories(cfg.work_dir);
  }
  const auto artifact = [&](const std::string& name) {
    return (std::filesystem::path(cfg.work_dir) / name).string();
  };
  const std::string corpus = read_text_file(cfg.target_corpus);
  const std::vector<std::string> docs = split_lines(corpus);

  TokenizerModel tok;
  if (!cfg.tokenizer.empty()) {
    pipeline_stage("tokenizer loading", log,
                   [&] { tok = load_tokenizer(cfg.tokenizer); });
  } else {
    pipeline_stage("tokenizer training", log, [&] {
      tok = train_bpe(corpus, cfg.target_vocab).model;
      if (!cfg.work_dir.empty()) save_tokenizer(tok, artifact("tokenizer.json"));
    });
  }

  TrainConfig train = cfg.train;
  train.seed = sub_seed(cfg.seed, "longcontext-train");
  const MaskParams mask = mask_params_from(tok, train);

  EncoderModel model;
  if (!cfg.checkpoint.empty()) {
    pipeline_stage("checkpoint loading", log,
                   [&] { model = load_model(cfg.checkpoint); });
  } else {
    pipeline_stage("two-stage pretraining", log, [&] {
      EncoderConfig ecfg = cfg.encoder;
      ecfg.vocab_size = static_cast<std::size_t>(tok.vocab_size());
      Checkpoint ck = make_checkpoint(
          build_model(ecfg, nullptr, sub_seed(cfg.seed, "longcontext-model")));
      const std::vector<int> stream = build_token_stream(tok, docs);
      TwoStageSummary s = run_two_stage(ck, stream, train, mask, cfg.work_dir);
      if (log) {
        *log << "  stage 1 held-out: "
             << format_double(s.stage1.initial_held_out) << " -> "
             << format_double(s.stage1.final_held_out) << "\n  stage 2 held-out: "
             << format_double(s.stage2.initial_held_out) << " -> "
             << format_double(s.stage2.final_held_out) << '\n';
      }
      if (!cfg.work_dir.empty()) {
        write_text_file(artifact("losses.tsv"), losses_to_tsv(ck.history));
      }
      model = std::move(ck.model);
    });
  }

  LongContextResult out;
  pipeline_stage("long-context evaluation", log, [&] {
    const std::size_t short_ctx = train.stage1_context;
    const std::size_t long_ctx =
        cfg.long_context > 0 ? cfg.long_context : 8 * short_ctx;
    out = run_longcontext(model, tok, docs, short_ctx, long_ctx,
                          cfg.allocation_contexts, mask,
                          sub_seed(cfg.seed, "longcontext-eval"),
                          cfg.eval_chunks);
    if (log) {
      *log << "  context " << out.short_eval.context << ": loss "
           << format_double(out.short_eval.loss) << "\n  context "
           << out.long_eval.context << ": loss "
           << format_double(out.long_eval.loss) << "\n  allocation ratio "
           << format_double(out.allocation_ratio) << '\n';
    }
    if (!cfg.work_dir.empty()) save_longcontext(out, artifact("longcontext"));
  });
  return out;
}

}  // namespace transtok
