// Command-line front end: one subcommand per pipeline stage plus the bundled
// ablation / long-context experiment drivers and the synthetic corpus
// generator. Logs go to standard error; reports and artifacts go to files.
// Exit code 0 means every stage succeeded; on failure the offending stage is
// named on standard error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "transtok/pipeline.hpp"
#include "transtok/toy_data.hpp"

namespace fs = std::filesystem;
using namespace transtok;

namespace {

PipelineConfig load_pipeline_json(const std::string& path,
                                  PipelineConfig defaults) {
  if (path.empty()) return defaults;
  return pipeline_config_from_json(
      nlohmann::json::parse(read_text_file(path)));
}

EncoderModel load_model_file(const std::string& path) {
  return pipeline_stage("model loading", nullptr,
                        [&] { return load_model(path); });
}

TokenizerModel load_tokenizer_file(const std::string& path) {
  return pipeline_stage("tokenizer loading", nullptr,
                        [&] { return load_tokenizer(path); });
}

std::vector<std::string> load_corpus_lines(const std::string& path) {
  return split_lines(read_text_file(path));
}

MaskParams masking_from(const TokenizerModel& tok, double mask_rate) {
  TrainConfig tc;
  tc.mask_rate = mask_rate;
  return mask_params_from(tok, tc);
}

void emit_report(const EvalReport& report, const std::string& out_base) {
  save_report(report, out_base);
  std::cerr << "wrote " << out_base << ".json and " << out_base << ".tsv\n";
  for (const auto& [name, value] : report.metrics) {
    std::cerr << "  " << name << " = " << format_double(value) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "transtok: cross-lingual encoder toolkit — BPE tokenizer training, "
      "IBM Model 1 alignment, embedding transfer, long-context masked-LM "
      "pretraining, and evaluation harnesses"};
  app.require_subcommand(1);

  // ----- train-tokenizer ---------------------------------------------------
  struct {
    std::string corpus, out, normalization;
    std::size_t vocab_size = 2000;
  } tkz;
  auto* cmd_tkz = app.add_subcommand(
      "train-tokenizer", "Train a byte-pair-encoding tokenizer on a corpus");
  cmd_tkz->add_option("--corpus", tkz.corpus,
                      "UTF-8 corpus, one document per line")
      ->required();
  cmd_tkz->add_option("--vocab-size", tkz.vocab_size,
                      "Total vocabulary budget (specials + alphabet + merges)")
      ->required();
  cmd_tkz->add_option("--out", tkz.out, "Output tokenizer JSON path")
      ->required();
  cmd_tkz->add_option("--normalization", tkz.normalization,
                      "Text normalization scheme ('' or 'arabic')");
  cmd_tkz->callback([&] {
    pipeline_stage("tokenizer training", &std::cerr, [&] {
      BpeTrainResult r =
          train_bpe(read_text_file(tkz.corpus), tkz.vocab_size,
                    default_special_tokens(), tkz.normalization);
      save_tokenizer(r.model, tkz.out);
      std::cerr << "  vocabulary " << r.model.vocab_size() << " tokens"
                << (r.truncated ? " (merges exhausted before the budget)"
                               : "")
                << ", written to " << tkz.out << '\n';
    });
  });

  // ----- align -------------------------------------------------------------
  struct {
    std::string parallel, tgt_tok, src_tok, out;
    int iters = 5;
  } aln;
  auto* cmd_aln = app.add_subcommand(
      "align",
      "Train IBM Model 1 on a parallel corpus and extract alignment counts");
  cmd_aln->add_option("--parallel", aln.parallel,
                      "Parallel corpus TSV: target<TAB>source per line")
      ->required();
  cmd_aln->add_option("--tgt-tok", aln.tgt_tok, "Target tokenizer JSON")
      ->required();
  cmd_aln->add_option("--src-tok", aln.src_tok, "Source tokenizer JSON")
      ->required();
  cmd_aln->add_option("--iters", aln.iters, "EM iterations (default 5)");
  cmd_aln->add_option("--out", aln.out, "Output alignment-count TSV")
      ->required();
  cmd_aln->callback([&] {
    pipeline_stage("alignment", &std::cerr, [&] {
      ParallelCorpus corpus = load_parallel_corpus(aln.parallel);
      TokenizerModel tgt = load_tokenizer(aln.tgt_tok);
      TokenizerModel src = load_tokenizer(aln.src_tok);
      Ibm1Result ibm1 = train_ibm1(corpus, tgt, src, aln.iters);
      save_alignment(extract_counts(ibm1.table, corpus, tgt, src), aln.out);
      std::cerr << "  log-likelihood " << format_double(
                       ibm1.log_likelihood.front())
                << " -> " << format_double(ibm1.log_likelihood.back())
                << " over " << aln.iters << " iterations\n  counts written to "
                << aln.out << '\n';
    });
  });

  // ----- transtokenize -----------------------------------------------------
  struct {
    std::string align, src_emb, fallback = "auto", tgt_tok, src_tok, out,
        coverage;
    std::uint64_t seed = 0;
  } trx;
  auto* cmd_trx = app.add_subcommand(
      "transtokenize",
      "Initialize target embeddings from aligned source embeddings");
  cmd_trx->add_option("--align", trx.align, "Alignment-count TSV")->required();
  cmd_trx->add_option("--src-emb", trx.src_emb,
                      "Source embedding matrix (EMB1 binary)")
      ->required();
  cmd_trx->add_option("--fallback", trx.fallback,
                      "Fallback map: a TSV path (target_token<TAB>"
                      "source_token), 'auto' for the built-in identity map "
                      "over shared digits/punctuation, or 'none'");
  cmd_trx->add_option("--tgt-tok", trx.tgt_tok, "Target tokenizer JSON")
      ->required();
  cmd_trx->add_option("--src-tok", trx.src_tok,
                      "Source tokenizer JSON (required with --fallback)");
  cmd_trx->add_option("--seed", trx.seed,
                      "Seed for the random-backoff rows (default 0)");
  cmd_trx->add_option("--out", trx.out, "Output embedding matrix (EMB1)")
      ->required();
  cmd_trx->add_option("--coverage", trx.coverage,
                      "Optional coverage-report JSON path");
  cmd_trx->callback([&] {
    pipeline_stage("embedding transfer", &std::cerr, [&] {
      AlignmentTable table = load_alignment(trx.align);
      EmbeddingMatrix src_emb = load_embeddings(trx.src_emb);
      TokenizerModel tgt = load_tokenizer(trx.tgt_tok);
      FallbackMap fallback;
      TokenizerModel src;
      const TokenizerModel* src_ptr = nullptr;
      if (trx.fallback != "none" && !trx.fallback.empty()) {
        if (trx.src_tok.empty()) {
          throw std::invalid_argument(
              "--fallback requires --src-tok to resolve source surfaces");
        }
        src = load_tokenizer(trx.src_tok);
        src_ptr = &src;
        fallback = trx.fallback == "auto" ? default_fallback_map(tgt, src)
                                          : load_fallback(trx.fallback);
      }
      EmbeddingMatrix emb = init_embeddings(table, src_emb, fallback, tgt,
                                            trx.seed, src_ptr);
      save_embeddings(emb, trx.out);
      CoverageReport cov = coverage_report(emb, tgt);
      std::cerr << "  rows: aligned " << cov.counts[0] << ", fallback "
                << cov.counts[1] << ", random backoff " << cov.counts[2]
                << "\n  matrix written to " << trx.out << '\n';
      if (!trx.coverage.empty()) {
        nlohmann::ordered_json j;
        j["aligned"] = cov.counts[0];
        j["fallback"] = cov.counts[1];
        j["random_backoff"] = cov.counts[2];
        j["aligned_fraction"] = cov.fractions[0];
        j["fallback_fraction"] = cov.fractions[1];
        j["random_backoff_fraction"] = cov.fractions[2];
        j["random_backoff_tokens"] = cov.backoff_surfaces;
        write_text_file(trx.coverage, j.dump(2) + "\n");
      }
    });
  });

  // ----- pretrain ----------------------------------------------------------
  struct {
    std::string config, corpus, init_emb = "none", out, tok;
    std::uint64_t seed = 0;
  } pre;
  auto* cmd_pre = app.add_subcommand(
      "pretrain", "Two-stage masked-LM pretraining of the encoder");
  cmd_pre->add_option("--config", pre.config,
                      "Pipeline JSON carrying 'encoder' and 'train' sections")
      ->required();
  cmd_pre->add_option("--corpus", pre.corpus,
                      "UTF-8 corpus, one document per line")
      ->required();
  cmd_pre->add_option("--init-emb", pre.init_emb,
                      "Initial embedding matrix (EMB1 path) or 'none'");
  cmd_pre->add_option("--out", pre.out,
                      "Output directory for losses.tsv and checkpoints")
      ->required();
  cmd_pre->add_option("--tok", pre.tok,
                      "Tokenizer JSON (overrides the config's 'tokenizer')");
  auto* pre_seed = cmd_pre->add_option("--seed", pre.seed,
                                       "Master seed (overrides the config)");
  cmd_pre->callback([&] {
    PipelineConfig cfg = load_pipeline_json(pre.config, PipelineConfig{});
    if (pre_seed->count() > 0) cfg.seed = pre.seed;
    const std::string tok_path = pre.tok.empty() ? cfg.tokenizer : pre.tok;
    if (tok_path.empty()) {
      throw std::invalid_argument(
          "pretrain: no tokenizer given (--tok or config 'tokenizer')");
    }
    if (!fs::exists(pre.corpus)) {
      throw std::runtime_error("pretrain: corpus does not exist: " +
                               pre.corpus);
    }
    if (!fs::exists(tok_path)) {
      throw std::runtime_error("pretrain: tokenizer does not exist: " +
                               tok_path);
    }
    if (pre.init_emb != "none" && !pre.init_emb.empty() &&
        !fs::exists(pre.init_emb)) {
      throw std::runtime_error("pretrain: initial embeddings do not exist: " +
                               pre.init_emb);
    }
    TokenizerModel tok = load_tokenizer_file(tok_path);
    EncoderConfig ecfg = cfg.encoder;
    ecfg.vocab_size = static_cast<std::size_t>(tok.vocab_size());

    EncoderModel model;
    pipeline_stage("model construction", &std::cerr, [&] {
      if (pre.init_emb == "none" || pre.init_emb.empty()) {
        model = build_model(ecfg, nullptr, sub_seed(cfg.seed, "model"));
      } else {
        EmbeddingMatrix emb = load_embeddings(pre.init_emb);
        model = build_model(ecfg, &emb, sub_seed(cfg.seed, "model"));
      }
    });
    pipeline_stage("pretraining", &std::cerr, [&] {
      TrainConfig train = cfg.train;
      train.seed = sub_seed(cfg.seed, "train");
      fs::create_directories(pre.out);
      const std::vector<int> stream =
          build_token_stream(tok, load_corpus_lines(pre.corpus));
      Checkpoint ck = make_checkpoint(std::move(model));
      TwoStageSummary s = run_two_stage(
          ck, stream, train, mask_params_from(tok, train), pre.out);
      write_text_file((fs::path(pre.out) / "losses.tsv").string(),
                      losses_to_tsv(ck.history));
      save_model(ck.model, (fs::path(pre.out) / "model.bin").string());
      save_embeddings(embeddings_of(ck.model),
                      (fs::path(pre.out) / "embeddings.emb").string());
      std::cerr << "  stage 1 held-out: "
                << format_double(s.stage1.initial_held_out) << " -> "
                << format_double(s.stage1.final_held_out) << '\n';
      if (train.stage2_steps > 0) {
        std::cerr << "  stage 2 held-out: "
                  << format_double(s.stage2.initial_held_out) << " -> "
                  << format_double(s.stage2.final_held_out) << '\n';
      }
      std::cerr << "  artifacts in " << pre.out << '\n';
    });
  });

  // ----- eval-mlm ----------------------------------------------------------
  struct {
    std::string model, tok, data, out;
    std::size_t context_len = 128, max_chunks = 0;
    double mask_rate = 0.30;
    std::uint64_t seed = 0;
  } emlm;
  auto* cmd_emlm = app.add_subcommand(
      "eval-mlm", "Masked-LM loss and perplexity at a fixed context length");
  cmd_emlm->add_option("--model", emlm.model, "Model container path")
      ->required();
  cmd_emlm->add_option("--tok", emlm.tok, "Tokenizer JSON")->required();
  cmd_emlm->add_option("--data", emlm.data,
                       "UTF-8 corpus, one document per line")
      ->required();
  cmd_emlm->add_option("--out", emlm.out,
                       "Report base path (writes .json and .tsv)")
      ->required();
  cmd_emlm->add_option("--context-len", emlm.context_len,
                       "Evaluation context length (default 128)");
  cmd_emlm->add_option("--mask-rate", emlm.mask_rate,
                       "Masking rate (default 0.30)");
  cmd_emlm->add_option("--max-chunks", emlm.max_chunks,
                       "Evaluate at most this many chunks (0 = all)");
  cmd_emlm->add_option("--seed", emlm.seed, "Masking seed (default 0)");
  cmd_emlm->callback([&] {
    EncoderModel model = load_model_file(emlm.model);
    TokenizerModel tok = load_tokenizer_file(emlm.tok);
    pipeline_stage("mlm evaluation", &std::cerr, [&] {
      MlmEval e = eval_mlm(model, tok, load_corpus_lines(emlm.data),
                           emlm.context_len, masking_from(tok, emlm.mask_rate),
                           sub_seed(emlm.seed, "eval-mlm"), emlm.max_chunks);
      emit_report(mlm_report(e, emlm.context_len, emlm.seed), emlm.out);
    });
  });

  // ----- eval-retrieval ----------------------------------------------------
  struct {
    std::string model, tok, data, queries, docs, qrels, out;
    std::vector<std::size_t> ks = {1, 5, 10};
  } eret;
  auto* cmd_eret = app.add_subcommand(
      "eval-retrieval",
      "Recall@k and MRR over cosine similarity of mean-pooled vectors");
  cmd_eret->add_option("--model", eret.model, "Model container path")
      ->required();
  cmd_eret->add_option("--tok", eret.tok, "Tokenizer JSON")->required();
  cmd_eret->add_option("--data", eret.data,
                       "Directory holding queries.tsv, documents.tsv, "
                       "qrels.tsv");
  cmd_eret->add_option("--queries", eret.queries,
                       "Queries TSV qid<TAB>text (overrides --data)");
  cmd_eret->add_option("--docs", eret.docs,
                       "Documents TSV did<TAB>text (overrides --data)");
  cmd_eret->add_option("--qrels", eret.qrels,
                       "Relevance TSV qid<TAB>did (overrides --data)");
  cmd_eret->add_option("--out", eret.out,
                       "Report base path (writes .json and .tsv)")
      ->required();
  cmd_eret->add_option("--ks", eret.ks, "Recall cutoffs (default 1 5 10)")
      ->delimiter(',');
  cmd_eret->callback([&] {
    EncoderModel model = load_model_file(eret.model);
    TokenizerModel tok = load_tokenizer_file(eret.tok);
    pipeline_stage("retrieval evaluation", &std::cerr, [&] {
      auto resolve = [&](const std::string& explicit_path,
                         const char* name) -> std::string {
        if (!explicit_path.empty()) return explicit_path;
        if (eret.data.empty()) {
          throw std::invalid_argument(
              std::string("eval-retrieval: provide --data or --") + name);
        }
        return (fs::path(eret.data) / (std::string(name) + ".tsv")).string();
      };
      RetrievalData data = load_retrieval_data(
          resolve(eret.queries, "queries"), resolve(eret.docs, "documents"),
          resolve(eret.qrels, "qrels"));
      emit_report(retrieval_eval(model, tok, data, eret.ks), eret.out);
    });
  });

  // ----- eval-classify -----------------------------------------------------
  struct {
    std::string model, tok, data, train_data, out;
    std::size_t epochs = 3, batch = 8;
    double lr = 2e-5;
    std::uint64_t seed = 0;
  } ecls;
  auto* cmd_ecls = app.add_subcommand(
      "eval-classify",
      "Accuracy and macro-F1 of a linear probe on pooled sentence vectors");
  cmd_ecls->add_option("--model", ecls.model, "Model container path")
      ->required();
  cmd_ecls->add_option("--tok", ecls.tok, "Tokenizer JSON")->required();
  cmd_ecls->add_option("--data", ecls.data,
                       "Evaluation TSV label<TAB>text[<TAB>text_b]")
      ->required();
  cmd_ecls->add_option("--train-data", ecls.train_data,
                       "Head-training TSV (defaults to --data)");
  cmd_ecls->add_option("--out", ecls.out,
                       "Report base path (writes .json and .tsv)")
      ->required();
  cmd_ecls->add_option("--epochs", ecls.epochs, "Head epochs (default 3)");
  cmd_ecls->add_option("--lr", ecls.lr, "Head learning rate (default 2e-5)");
  cmd_ecls->add_option("--batch", ecls.batch, "Head batch size (default 8)");
  cmd_ecls->add_option("--seed", ecls.seed, "Head seed (default 0)");
  cmd_ecls->callback([&] {
    EncoderModel model = load_model_file(ecls.model);
    TokenizerModel tok = load_tokenizer_file(ecls.tok);
    pipeline_stage("classification evaluation", &std::cerr, [&] {
      ClassificationData eval_set =
          parse_classification_tsv(read_text_file(ecls.data));
      ClassificationData train_set =
          ecls.train_data.empty()
              ? eval_set
              : parse_classification_tsv(read_text_file(ecls.train_data));
      HeadOptions opts;
      opts.epochs = ecls.epochs;
      opts.lr = ecls.lr;
      opts.batch = ecls.batch;
      opts.seed = sub_seed(ecls.seed, "classify-head");
      SentenceClassifier head = train_classifier(model, tok, train_set, opts);
      emit_report(classify_eval(model, tok, head, eval_set), ecls.out);
    });
  });

  // ----- eval-ner ----------------------------------------------------------
  struct {
    std::string model, tok, data, train_data, out;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t epochs = 3, batch = 8;
    double lr = 2e-5;
  } ener;
  auto* cmd_ener = app.add_subcommand(
      "eval-ner",
      "Entity-level F1 of a token-tagging probe, averaged over seeds");
  cmd_ener->add_option("--model", ener.model, "Model container path")
      ->required();
  cmd_ener->add_option("--tok", ener.tok, "Tokenizer JSON")->required();
  cmd_ener->add_option("--data", ener.data,
                       "Evaluation file, CoNLL-style 'token tag' lines")
      ->required();
  cmd_ener->add_option("--train-data", ener.train_data,
                       "Head-training file (defaults to --data)");
  cmd_ener->add_option("--out", ener.out,
                       "Report base path (writes .json and .tsv)")
      ->required();
  cmd_ener->add_option("--seeds", ener.seeds,
                       "Head seeds to average over (default 1 2 3)")
      ->delimiter(',');
  cmd_ener->add_option("--epochs", ener.epochs, "Head epochs (default 3)");
  cmd_ener->add_option("--lr", ener.lr, "Head learning rate (default 2e-5)");
  cmd_ener->add_option("--batch", ener.batch, "Head batch size (default 8)");
  cmd_ener->callback([&] {
    EncoderModel model = load_model_file(ener.model);
    TokenizerModel tok = load_tokenizer_file(ener.tok);
    pipeline_stage("ner evaluation", &std::cerr, [&] {
      std::vector<NerSequence> eval_set =
          parse_conll(read_text_file(ener.data));
      std::vector<NerSequence> train_set =
          ener.train_data.empty()
              ? eval_set
              : parse_conll(read_text_file(ener.train_data));
      HeadOptions opts;
      opts.epochs = ener.epochs;
      opts.lr = ener.lr;
      opts.batch = ener.batch;
      emit_report(ner_eval(model, tok, train_set, eval_set, ener.seeds, opts),
                  ener.out);
    });
  });

  // ----- ablation ----------------------------------------------------------
  struct {
    std::string config, source, target, parallel, work_dir;
    std::uint64_t seed = 0;
  } abl;
  auto* cmd_abl = app.add_subcommand(
      "ablation",
      "End-to-end three-way initialization comparison (transferred vs "
      "reinitialized vs random embeddings)");
  cmd_abl->add_option("--config", abl.config, "Pipeline JSON config");
  cmd_abl->add_option("--source-corpus", abl.source,
                      "Source monolingual corpus (overrides config)");
  cmd_abl->add_option("--target-corpus", abl.target,
                      "Target monolingual corpus (overrides config)");
  cmd_abl->add_option("--parallel", abl.parallel,
                      "Parallel corpus TSV (overrides config)");
  cmd_abl->add_option("--work-dir", abl.work_dir,
                      "Artifact directory (default 'ablation_out')");
  auto* abl_seed =
      cmd_abl->add_option("--seed", abl.seed, "Master seed (overrides config)");
  cmd_abl->callback([&] {
    PipelineConfig cfg = load_pipeline_json(abl.config,
                                            default_ablation_config());
    if (!abl.source.empty()) cfg.source_corpus = abl.source;
    if (!abl.target.empty()) cfg.target_corpus = abl.target;
    if (!abl.parallel.empty()) cfg.parallel_corpus = abl.parallel;
    if (!abl.work_dir.empty()) cfg.work_dir = abl.work_dir;
    if (cfg.work_dir.empty()) cfg.work_dir = "ablation_out";
    if (abl_seed->count() > 0) cfg.seed = abl.seed;
    AblationResult r = run_ablation_files(cfg, &std::cerr);
    std::cerr << "result (variant / mlm loss / perplexity):\n";
    for (const auto& row : r.rows) {
      std::cerr << "  " << row.variant << '\t' << format_double(row.mlm_loss)
                << '\t' << format_double(row.perplexity) << '\n';
    }
    std::cerr << "artifacts in " << cfg.work_dir << '\n';
  });

  // ----- longcontext -------------------------------------------------------
  struct {
    std::string config, checkpoint, tok, corpus, work_dir;
    std::size_t long_context = 0, eval_chunks = 0;
    std::vector<std::size_t> alloc;
    std::uint64_t seed = 0;
  } lc;
  auto* cmd_lc = app.add_subcommand(
      "longcontext",
      "Short- vs long-context masked-LM evaluation with local-attention "
      "score accounting (trains a fresh model when no checkpoint is given)");
  cmd_lc->add_option("--config", lc.config, "Pipeline JSON config");
  cmd_lc->add_option("--checkpoint", lc.checkpoint,
                     "Trained model container (overrides config)");
  cmd_lc->add_option("--tok", lc.tok, "Tokenizer JSON (overrides config)");
  cmd_lc->add_option("--corpus", lc.corpus,
                     "Evaluation corpus (overrides config target_corpus)");
  cmd_lc->add_option("--work-dir", lc.work_dir,
                     "Artifact directory (default 'longcontext_out')");
  cmd_lc->add_option("--long-context", lc.long_context,
                     "Long context length (default 8x the stage-1 context)");
  cmd_lc->add_option("--alloc-contexts", lc.alloc,
                     "Context sweep for score accounting")
      ->delimiter(',');
  cmd_lc->add_option("--eval-chunks", lc.eval_chunks,
                     "Cap on evaluated chunks per context (0 = all)");
  auto* lc_seed =
      cmd_lc->add_option("--seed", lc.seed, "Master seed (overrides config)");
  auto* lc_chunks_opt = cmd_lc->get_option("--eval-chunks");
  cmd_lc->callback([&] {
    PipelineConfig cfg = load_pipeline_json(lc.config,
                                            default_longcontext_config());
    if (!lc.checkpoint.empty()) cfg.checkpoint = lc.checkpoint;
    if (!lc.tok.empty()) cfg.tokenizer = lc.tok;
    if (!lc.corpus.empty()) cfg.target_corpus = lc.corpus;
    if (!lc.work_dir.empty()) cfg.work_dir = lc.work_dir;
    if (cfg.work_dir.empty()) cfg.work_dir = "longcontext_out";
    if (lc.long_context > 0) cfg.long_context = lc.long_context;
    if (!lc.alloc.empty()) cfg.allocation_contexts = lc.alloc;
    if (lc_chunks_opt->count() > 0) cfg.eval_chunks = lc.eval_chunks;
    if (lc_seed->count() > 0) cfg.seed = lc.seed;
    run_longcontext_files(cfg, &std::cerr);
    std::cerr << "artifacts in " << cfg.work_dir << '\n';
  });

  // ----- gen-toy-data ------------------------------------------------------
  struct {
    std::string out;
    ToyDataConfig cfg;
  } toy;
  auto* cmd_toy = app.add_subcommand(
      "gen-toy-data",
      "Generate the synthetic bilingual corpora (ciphered topical language) "
      "plus ready-to-run pipeline configs");
  cmd_toy->add_option("--out", toy.out, "Output directory")->required();
  cmd_toy->add_option("--seed", toy.cfg.seed, "Generator seed (default 0)");
  cmd_toy->add_option("--pairs", toy.cfg.parallel_pairs,
                      "Parallel sentence pairs (default 5000)");
  cmd_toy->add_option("--source-bytes", toy.cfg.source_bytes,
                      "Source corpus size target in bytes (default 1 MiB)");
  cmd_toy->add_option("--target-bytes", toy.cfg.target_bytes,
                      "Target corpus size target in bytes (default 1 MiB)");
  cmd_toy->add_option("--topics", toy.cfg.topics,
                      "Topic clusters (default 8)");
  cmd_toy->add_option("--words-per-topic", toy.cfg.words_per_topic,
                      "Content words per topic (default 40)");
  cmd_toy->add_option("--function-words", toy.cfg.function_words,
                      "Shared function words (default 12)");
  cmd_toy->callback([&] {
    pipeline_stage("toy data generation", &std::cerr, [&] {
      ToyCorpora data = generate_toy_corpora(toy.cfg);
      fs::create_directories(toy.out);
      const auto at = [&](const char* name) {
        return (fs::path(toy.out) / name).string();
      };
      save_toy_corpora(data, at("source_corpus.txt"), at("target_corpus.txt"),
                       at("parallel.tsv"));
      std::string dict;
      for (const auto& [s, t] : data.language.dictionary) {
        dict += s + "\t" + t + "\n";
      }
      write_text_file(at("dictionary.tsv"), dict);

      PipelineConfig abl_cfg = default_ablation_config();
      abl_cfg.source_corpus = at("source_corpus.txt");
      abl_cfg.target_corpus = at("target_corpus.txt");
      abl_cfg.parallel_corpus = at("parallel.tsv");
      abl_cfg.work_dir = at("ablation-artifacts");
      abl_cfg.seed = toy.cfg.seed;
      write_text_file(at("ablation.json"),
                      pipeline_config_to_json(abl_cfg).dump(2) + "\n");

      PipelineConfig lc_cfg = default_longcontext_config();
      lc_cfg.target_corpus = at("target_corpus.txt");
      lc_cfg.work_dir = at("longcontext-artifacts");
      lc_cfg.seed = toy.cfg.seed;
      write_text_file(at("longcontext.json"),
                      pipeline_config_to_json(lc_cfg).dump(2) + "\n");

      std::cerr << "  " << data.language.source_words.size()
                << " word types, " << data.source_corpus.size()
                << " B source, " << data.target_corpus.size()
                << " B target, " << toy.cfg.parallel_pairs
                << " parallel pairs\n  configs: " << at("ablation.json")
                << ", " << at("longcontext.json") << '\n';
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
