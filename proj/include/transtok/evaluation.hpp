#pragma once

// Evaluation harness: masked-LM loss/perplexity at configurable context
// lengths, dense-retrieval Recall@k and MRR over cosine similarity of
// mean-pooled sentence vectors, linear-probe classification (accuracy,
// macro-F1), and entity-level NER F1 from BIO tags averaged over seeds.
// Includes the plain-text data-file parsers for each task and the report
// emitters (JSON + TSV).

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "transtok/common.hpp"
#include "transtok/encoder.hpp"
#include "transtok/tokenizer.hpp"
#include "transtok/training.hpp"

namespace transtok {

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string task;
  std::size_t context_len = 0;  // 0 when not applicable
  std::vector<std::pair<std::string, double>> metrics;  // insertion-ordered
  std::size_t samples = 0;
  std::vector<std::uint64_t> seeds;

  double metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw std::out_of_range("report has no metric '" + name + "'");
  }
};

// Range checks for the metrics whose domain is known a priori.
inline void validate_report(const EvalReport& r) {
  const double tol = 1e-12;
  double loss = -1.0;
  for (const auto& [name, value] : r.metrics) {
    const bool unit_range =
        name == "accuracy" || name == "macro_f1" || name == "precision" ||
        name == "recall" || name == "f1" || name == "mrr" ||
        name.rfind("recall@", 0) == 0;
    if (unit_range && (value < -tol || value > 1.0 + tol)) {
      throw std::runtime_error("report metric '" + name +
                               "' is outside [0,1]");
    }
    if (name == "loss") {
      if (value < -tol) throw std::runtime_error("report loss is negative");
      loss = value;
    }
    if (!std::isfinite(value)) {
      throw std::runtime_error("report metric '" + name + "' is not finite");
    }
  }
  for (const auto& [name, value] : r.metrics) {
    if (name == "perplexity" && loss >= 0.0 && value < 1.0 - tol) {
      throw std::runtime_error(
          "report perplexity below 1 despite nonnegative loss");
    }
  }
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  if (r.context_len > 0) j["context_len"] = r.context_len;
  j["samples"] = r.samples;
  if (!r.seeds.empty()) j["seeds"] = r.seeds;
  nlohmann::ordered_json m;
  for (const auto& [k, v] : r.metrics) m[k] = v;
  j["metrics"] = m;
  return j;
}

inline std::string report_to_tsv(const EvalReport& r) {
  std::string out = "metric\tvalue\n";
  for (const auto& [k, v] : r.metrics) {
    out += k;
    out += '\t';
    out += format_double(v);
    out += '\n';
  }
  return out;
}

// Writes <base>.json and <base>.tsv after validation.
inline void save_report(const EvalReport& r, const std::string& base_path) {
  validate_report(r);
  write_text_file(base_path + ".json", report_to_json(r).dump(2) + "\n");
  write_text_file(base_path + ".tsv", report_to_tsv(r));
}

// ---------------------------------------------------------------------------
// MLM evaluation
// ---------------------------------------------------------------------------

struct MlmEval {
  double loss = 0.0;
  double perplexity = 1.0;
  std::size_t chunks = 0;
};

// `max_chunks` caps the evaluation to the first N chunks (0 = no cap).
inline MlmEval eval_mlm(const EncoderModel& model, const TokenizerModel& tok,
                        const std::vector<std::string>& docs,
                        std::size_t context_len, const MaskParams& mask,
                        std::uint64_t seed, std::size_t max_chunks = 0) {
  if (context_len < 2 || context_len > model.config.max_context) {
    throw std::invalid_argument(
        "eval_mlm: context_len must be in [2, max_context]");
  }
  std::vector<int> stream = build_token_stream(tok, docs);
  std::vector<std::vector<int>> chunks = chunk_stream(stream, context_len);
  if (chunks.empty()) {
    throw std::runtime_error(
        "eval_mlm: corpus yields no chunks at context length " +
        std::to_string(context_len));
  }
  if (max_chunks > 0 && chunks.size() > max_chunks) {
    chunks.resize(max_chunks);
  }
  MlmEval out;
  out.loss = masked_eval_loss(model, chunks, mask, seed);
  out.perplexity = std::exp(out.loss);
  out.chunks = chunks.size();
  return out;
}

inline EvalReport mlm_report(const MlmEval& e, std::size_t context_len,
                             std::uint64_t seed) {
  EvalReport r;
  r.task = "mlm";
  r.context_len = context_len;
  r.samples = e.chunks;
  r.seeds = {seed};
  r.metrics = {{"loss", e.loss}, {"perplexity", e.perplexity}};
  return r;
}

// ---------------------------------------------------------------------------
// Sentence vectors and retrieval
// ---------------------------------------------------------------------------

// Mean-pooled final hidden states over all content positions.
inline std::vector<double> encode_sentence(const EncoderModel& model,
                                           const TokenizerModel& tok,
                                           const std::string& text) {
  CorpusEncoder enc(tok);
  std::vector<int> ids = enc.encode(text);
  if (ids.empty()) {
    throw std::invalid_argument("encode_sentence: text has no tokens");
  }
  if (ids.size() > model.config.max_context) {
    ids.resize(model.config.max_context);
  }
  NoGradGuard ng;
  Tensor h = encoder_hidden(model, ids);
  const std::size_t T = h.dim(0), H = h.dim(1);
  std::vector<double> pooled(H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < H; ++d) pooled[d] += h.values()[t * H + d];
  }
  for (double& v : pooled) v /= static_cast<double>(T);
  return pooled;
}

inline double cosine(const std::vector<double>& a,
                     const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct RetrievalMetrics {
  std::vector<std::pair<std::size_t, double>> recall_at;  // (k, value)
  double mrr = 0.0;
};

// Pure ranking metrics: `sims[q][d]` scores document d for query q,
// `relevant[q]` lists relevant document indices (must be nonempty). Ranking
// is by descending similarity with ties kept in document order.
inline RetrievalMetrics retrieval_metrics(
    const std::vector<std::vector<double>>& sims,
    const std::vector<std::vector<std::size_t>>& relevant,
    std::vector<std::size_t> ks) {
  if (sims.size() != relevant.size()) {
    throw std::invalid_argument("retrieval_metrics: query count mismatch");
  }
  if (sims.empty()) {
    throw std::invalid_argument("retrieval_metrics: no queries");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.empty() || ks.front() == 0) {
    throw std::invalid_argument("retrieval_metrics: ks must be positive");
  }
  std::vector<std::size_t> hits(ks.size(), 0);
  double rr_sum = 0.0;
  for (std::size_t q = 0; q < sims.size(); ++q) {
    if (relevant[q].empty()) {
      throw std::runtime_error("retrieval_metrics: query " + std::to_string(q) +
                               " has no relevant document");
    }
    const std::size_t D = sims[q].size();
    std::vector<char> is_rel(D, 0);
    for (std::size_t d : relevant[q]) {
      if (d >= D) {
        throw std::out_of_range("retrieval_metrics: relevant index beyond "
                                "document count");
      }
      is_rel[d] = 1;
    }
    std::vector<std::size_t> order(D);
    for (std::size_t d = 0; d < D; ++d) order[d] = d;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return sims[q][a] > sims[q][b];
                     });
    std::size_t rank = 0;  // 1-based rank of the first relevant document
    for (std::size_t pos = 0; pos < D; ++pos) {
      if (is_rel[order[pos]]) {
        rank = pos + 1;
        break;
      }
    }
    rr_sum += 1.0 / static_cast<double>(rank);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (rank <= ks[i]) ++hits[i];
    }
  }
  RetrievalMetrics out;
  const double nq = static_cast<double>(sims.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out.recall_at.emplace_back(ks[i], static_cast<double>(hits[i]) / nq);
  }
  out.mrr = rr_sum / nq;
  return out;
}

struct RetrievalData {
  std::vector<std::pair<std::string, std::string>> queries;    // id, text
  std::vector<std::pair<std::string, std::string>> documents;  // id, text
  std::map<std::string, std::set<std::string>> qrels;          // qid -> dids
};

inline std::vector<std::pair<std::string, std::string>> parse_id_text_tsv(
    const std::string& content, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  for (const std::string& line : split_lines(content)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tab(line);
    if (cols.size() != 2 || cols[0].empty()) {
      throw std::runtime_error(what + " file: expected 'id<TAB>text', got: " +
                               line);
    }
    if (!seen.insert(cols[0]).second) {
      throw std::runtime_error(what + " file: duplicate id '" + cols[0] + "'");
    }
    out.emplace_back(cols[0], cols[1]);
  }
  if (out.empty()) throw std::runtime_error(what + " file is empty");
  return out;
}

inline std::map<std::string, std::set<std::string>> parse_qrels_tsv(
    const std::string& content) {
  std::map<std::string, std::set<std::string>> out;
  for (const std::string& line : split_lines(content)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tab(line);
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw std::runtime_error("qrels file: expected 'qid<TAB>did', got: " +
                               line);
    }
    out[cols[0]].insert(cols[1]);
  }
  if (out.empty()) throw std::runtime_error("qrels file is empty");
  return out;
}

inline RetrievalData load_retrieval_data(const std::string& queries_path,
                                         const std::string& documents_path,
                                         const std::string& qrels_path) {
  RetrievalData d;
  d.queries = parse_id_text_tsv(read_text_file(queries_path), "queries");
  d.documents = parse_id_text_tsv(read_text_file(documents_path), "documents");
  d.qrels = parse_qrels_tsv(read_text_file(qrels_path));
  std::set<std::string> doc_ids;
  for (const auto& [id, text] : d.documents) doc_ids.insert(id);
  for (const auto& [qid, dids] : d.qrels) {
    for (const auto& did : dids) {
      if (doc_ids.count(did) == 0) {
        throw std::runtime_error("qrels reference unknown document '" + did +
                                 "'");
      }
    }
  }
  return d;
}

inline EvalReport retrieval_eval(const EncoderModel& model,
                                 const TokenizerModel& tok,
                                 const RetrievalData& data,
                                 std::vector<std::size_t> ks = {1, 5, 10}) {
  std::vector<std::vector<double>> doc_vecs;
  for (const auto& [id, text] : data.documents) {
    doc_vecs.push_back(encode_sentence(model, tok, text));
  }
  std::map<std::string, std::size_t> doc_index;
  for (std::size_t i = 0; i < data.documents.size(); ++i) {
    doc_index[data.documents[i].first] = i;
  }
  std::vector<std::vector<double>> sims;
  std::vector<std::vector<std::size_t>> relevant;
  for (const auto& [qid, text] : data.queries) {
    auto it = data.qrels.find(qid);
    if (it == data.qrels.end() || it->second.empty()) {
      throw std::runtime_error("query '" + qid + "' has no relevant document");
    }
    std::vector<double> qv = encode_sentence(model, tok, text);
    std::vector<double> row;
    for (const auto& dv : doc_vecs) row.push_back(cosine(qv, dv));
    sims.push_back(std::move(row));
    std::vector<std::size_t> rel;
    for (const auto& did : it->second) rel.push_back(doc_index.at(did));
    std::sort(rel.begin(), rel.end());
    relevant.push_back(std::move(rel));
  }
  RetrievalMetrics m = retrieval_metrics(sims, relevant, std::move(ks));
  EvalReport r;
  r.task = "retrieval";
  r.samples = data.queries.size();
  for (const auto& [k, v] : m.recall_at) {
    r.metrics.emplace_back("recall@" + std::to_string(k), v);
  }
  r.metrics.emplace_back("mrr", m.mrr);
  return r;
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

inline double accuracy(const std::vector<int>& gold,
                       const std::vector<int>& pred) {
  if (gold.size() != pred.size() || gold.empty()) {
    throw std::invalid_argument("accuracy: size mismatch or empty input");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

// Unweighted mean of per-class F1 over the union of gold and predicted
// classes; a class with no true positives scores 0.
inline double macro_f1(const std::vector<int>& gold,
                       const std::vector<int>& pred) {
  if (gold.size() != pred.size() || gold.empty()) {
    throw std::invalid_argument("macro_f1: size mismatch or empty input");
  }
  std::set<int> classes(gold.begin(), gold.end());
  classes.insert(pred.begin(), pred.end());
  double sum = 0.0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == c && gold[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (gold[i] == c) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  }
  return sum / static_cast<double>(classes.size());
}

struct ClassificationData {
  std::vector<std::string> labels;
  std::vector<std::string> text_a;
  std::vector<std::string> text_b;  // empty string for single-text tasks
};

inline ClassificationData parse_classification_tsv(const std::string& content) {
  ClassificationData d;
  for (const std::string& line : split_lines(content)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tab(line);
    if (cols.size() != 2 && cols.size() != 3) {
      throw std::runtime_error(
          "classification file: expected 'label<TAB>text[<TAB>text_b]', "
          "got: " + line);
    }
    if (cols[0].empty() || cols[1].empty()) {
      throw std::runtime_error("classification file: empty label or text: " +
                               line);
    }
    d.labels.push_back(cols[0]);
    d.text_a.push_back(cols[1]);
    d.text_b.push_back(cols.size() == 3 ? cols[2] : "");
  }
  if (d.labels.empty()) {
    throw std::runtime_error("classification file is empty");
  }
  return d;
}

// Sentence-pair inputs are joined with the separator token's surface form so
// the tokenizer emits a single sequence with an explicit boundary.
inline std::string join_pair(const TokenizerModel& tok, const std::string& a,
                             const std::string& b) {
  if (b.empty()) return a;
  return a + " " + tok.special_tokens.at("separation") + " " + b;
}

struct HeadOptions {
  std::size_t epochs = 3;
  double lr = 2e-5;
  std::size_t batch = 8;
  double weight_decay = 0.0;  // linear probes train without decay
  std::uint64_t seed = 0;
};

struct SentenceClassifier {
  Tensor w;  // (hidden, n_labels)
  Tensor b;  // (n_labels)
  std::vector<std::string> labels;  // id = index

  int label_id(const std::string& name) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == name) return static_cast<int>(i);
    }
    throw std::runtime_error("label '" + name +
                             "' was not seen during head training");
  }
};

namespace detail {

// Shared affine-head fit: features (N, H) are fixed; only w and b train.
inline void fit_head(Tensor& w, Tensor& b,
                     const std::vector<std::vector<double>>& features,
                     const std::vector<int>& labels, const HeadOptions& opts) {
  const std::size_t N = features.size();
  const std::size_t H = w.dim(0);
  std::vector<std::pair<std::string, Tensor>> params = {{"head.w", w},
                                                        {"head.b", b}};
  AdamW opt;
  opt.lr = opts.lr;
  opt.weight_decay = opts.weight_decay;
  opt.warmup_steps = 0;
  opt.init(params);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    Rng rng(sub_seed(opts.seed, "head.order", epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < N; start += opts.batch) {
      const std::size_t stop = std::min(N, start + opts.batch);
      const std::size_t B = stop - start;
      std::vector<double> xdata(B * H);
      std::vector<int> ydata(B);
      for (std::size_t r = 0; r < B; ++r) {
        const std::size_t idx = order[start + r];
        std::copy(features[idx].begin(), features[idx].end(),
                  xdata.begin() + static_cast<std::ptrdiff_t>(r * H));
        ydata[r] = labels[idx];
      }
      Tensor x = Tensor::from({B, H}, std::move(xdata));
      for (auto& [name, p] : params) p.zero_grad();
      Tensor loss = mlm_loss(add_rowvec(matmul(x, w), b), ydata);
      backward(loss);
      opt.step(params);
    }
  }
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(N);
  for (std::size_t r = 0; r < N; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (logits.values()[r * C + c] > logits.values()[r * C + best]) {
        best = c;
      }
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace detail

inline SentenceClassifier train_classifier(const EncoderModel& model,
                                           const TokenizerModel& tok,
                                           const ClassificationData& train,
                                           const HeadOptions& opts = {}) {
  SentenceClassifier head;
  for (const auto& l : train.labels) {
    if (std::find(head.labels.begin(), head.labels.end(), l) ==
        head.labels.end()) {
      head.labels.push_back(l);
    }
  }
  const std::size_t H = model.config.hidden;
  const std::size_t C = head.labels.size();
  head.w = Tensor({H, C}, /*requires_grad=*/true);
  head.b = Tensor({C}, /*requires_grad=*/true);
  Rng init(sub_seed(opts.seed, "head.init"));
  for (auto& v : head.w.values()) v = init.normal(0.0, 0.02);

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (std::size_t i = 0; i < train.labels.size(); ++i) {
    features.push_back(encode_sentence(
        model, tok, join_pair(tok, train.text_a[i], train.text_b[i])));
    labels.push_back(head.label_id(train.labels[i]));
  }
  detail::fit_head(head.w, head.b, features, labels, opts);
  return head;
}

inline std::vector<int> classify_predict(const EncoderModel& model,
                                         const TokenizerModel& tok,
                                         const SentenceClassifier& head,
                                         const ClassificationData& data) {
  const std::size_t H = model.config.hidden;
  std::vector<double> xdata;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    std::vector<double> f = encode_sentence(
        model, tok, join_pair(tok, data.text_a[i], data.text_b[i]));
    xdata.insert(xdata.end(), f.begin(), f.end());
  }
  NoGradGuard ng;
  Tensor x = Tensor::from({data.labels.size(), H}, std::move(xdata));
  return detail::argmax_rows(add_rowvec(matmul(x, head.w), head.b));
}

inline EvalReport classify_eval(const EncoderModel& model,
                                const TokenizerModel& tok,
                                const SentenceClassifier& head,
                                const ClassificationData& eval_data) {
  std::vector<int> gold;
  for (const auto& l : eval_data.labels) gold.push_back(head.label_id(l));
  std::vector<int> pred = classify_predict(model, tok, head, eval_data);
  EvalReport r;
  r.task = "classification";
  r.samples = gold.size();
  r.metrics = {{"accuracy", accuracy(gold, pred)},
               {"macro_f1", macro_f1(gold, pred)}};
  return r;
}

// ---------------------------------------------------------------------------
// NER: BIO decoding, span F1, token head
// ---------------------------------------------------------------------------

struct Span {
  std::string type;
  std::size_t start = 0, end = 0;  // token indices, inclusive

  bool operator==(const Span& o) const {
    return type == o.type && start == o.start && end == o.end;
  }
  bool operator<(const Span& o) const {
    return std::tie(start, end, type) < std::tie(o.start, o.end, o.type);
  }
};

// Decodes BIO tags to typed spans. Repair rule: an I- tag whose predecessor
// is O, absent, or a different type is treated as B-.
inline std::vector<Span> decode_bio(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  auto close = [&]() {
    if (open) spans.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O") {
      close();
      continue;
    }
    if (t.size() < 3 || (t[0] != 'B' && t[0] != 'I') || t[1] != '-') {
      throw std::runtime_error("malformed BIO tag '" + t + "'");
    }
    const std::string type = t.substr(2);
    if (t[0] == 'B' || !open || cur.type != type) {
      close();
      open = true;
      cur = {type, i, i};
    } else {
      cur.end = i;
    }
  }
  close();
  return spans;
}

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline Prf from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf out;
  out.tp = tp;
  out.fp = fp;
  out.fn = fn;
  out.precision = tp + fp == 0 ? 0.0
                               : static_cast<double>(tp) /
                                     static_cast<double>(tp + fp);
  out.recall = tp + fn == 0 ? 0.0
                            : static_cast<double>(tp) /
                                  static_cast<double>(tp + fn);
  out.f1 = out.precision + out.recall == 0.0
               ? 0.0
               : 2.0 * out.precision * out.recall /
                     (out.precision + out.recall);
  return out;
}

// Exact span+type matching.
inline Prf span_prf(const std::vector<Span>& gold,
                    const std::vector<Span>& pred) {
  std::multiset<Span> g(gold.begin(), gold.end());
  std::size_t tp = 0;
  for (const Span& p : pred) {
    auto it = g.find(p);
    if (it != g.end()) {
      ++tp;
      g.erase(it);
    }
  }
  return from_counts(tp, pred.size() - tp, gold.size() - tp);
}

struct NerSequence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

inline std::vector<NerSequence> parse_conll(const std::string& content) {
  std::vector<NerSequence> out;
  NerSequence cur;
  auto flush = [&]() {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = NerSequence{};
  };
  for (const std::string& line : split_lines(content)) {
    if (line.empty()) {
      flush();
      continue;
    }
    std::vector<std::string> cols = split_whitespace_utf8(line);
    if (cols.size() != 2) {
      throw std::runtime_error("ner file: expected 'token tag', got: " + line);
    }
    cur.tokens.push_back(cols[0]);
    cur.tags.push_back(cols[1]);
  }
  flush();
  if (out.empty()) throw std::runtime_error("ner file is empty");
  for (const auto& seq : out) {
    decode_bio(seq.tags);  // malformed tag strings rejected up front
  }
  return out;
}

struct TokenClassifier {
  Tensor w, b;
  std::vector<std::string> tags;  // id = index

  int tag_id(const std::string& name) const {
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (tags[i] == name) return static_cast<int>(i);
    }
    throw std::runtime_error("tag '" + name +
                             "' was not seen during head training");
  }
};

// One feature row per word: the final hidden state of the word's first
// subword token (words are tokenized independently and concatenated).
inline std::vector<std::vector<double>> word_features(
    const EncoderModel& model, const TokenizerModel& tok,
    const std::vector<std::string>& words) {
  CorpusEncoder enc(tok);
  std::vector<int> ids;
  std::vector<std::size_t> first;  // index of each word's first subword
  for (const auto& w : words) {
    std::vector<int> sub = enc.encode(w);
    if (sub.empty()) {
      throw std::runtime_error("word_features: token '" + w +
                               "' produced no subwords");
    }
    first.push_back(ids.size());
    ids.insert(ids.end(), sub.begin(), sub.end());
  }
  if (ids.size() > model.config.max_context) {
    throw std::runtime_error("word_features: sequence exceeds max_context");
  }
  NoGradGuard ng;
  Tensor h = encoder_hidden(model, ids);
  const std::size_t H = h.dim(1);
  std::vector<std::vector<double>> out;
  for (std::size_t fi : first) {
    out.emplace_back(h.values().begin() + static_cast<std::ptrdiff_t>(fi * H),
                     h.values().begin() +
                         static_cast<std::ptrdiff_t>((fi + 1) * H));
  }
  return out;
}

inline TokenClassifier train_token_head(const EncoderModel& model,
                                        const TokenizerModel& tok,
                                        const std::vector<NerSequence>& train,
                                        const HeadOptions& opts = {}) {
  TokenClassifier head;
  for (const auto& seq : train) {
    for (const auto& t : seq.tags) {
      if (std::find(head.tags.begin(), head.tags.end(), t) ==
          head.tags.end()) {
        head.tags.push_back(t);
      }
    }
  }
  const std::size_t H = model.config.hidden;
  const std::size_t C = head.tags.size();
  head.w = Tensor({H, C}, /*requires_grad=*/true);
  head.b = Tensor({C}, /*requires_grad=*/true);
  Rng init(sub_seed(opts.seed, "token-head.init"));
  for (auto& v : head.w.values()) v = init.normal(0.0, 0.02);

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (const auto& seq : train) {
    std::vector<std::vector<double>> rows =
        word_features(model, tok, seq.tokens);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      features.push_back(std::move(rows[i]));
      labels.push_back(head.tag_id(seq.tags[i]));
    }
  }
  detail::fit_head(head.w, head.b, features, labels, opts);
  return head;
}

inline std::vector<std::string> predict_tags(const EncoderModel& model,
                                             const TokenizerModel& tok,
                                             const TokenClassifier& head,
                                             const std::vector<std::string>& words) {
  std::vector<std::vector<double>> rows = word_features(model, tok, words);
  const std::size_t H = model.config.hidden;
  std::vector<double> xdata;
  for (const auto& r : rows) xdata.insert(xdata.end(), r.begin(), r.end());
  NoGradGuard ng;
  Tensor x = Tensor::from({rows.size(), H}, std::move(xdata));
  std::vector<int> ids = detail::argmax_rows(add_rowvec(matmul(x, head.w),
                                                        head.b));
  std::vector<std::string> out;
  for (int id : ids) out.push_back(head.tags[static_cast<std::size_t>(id)]);
  return out;
}

// Fine-tunes a token head per seed, scores entity-level micro P/R/F1 on the
// eval set, and reports the mean over seeds.
inline EvalReport ner_eval(const EncoderModel& model, const TokenizerModel& tok,
                           const std::vector<NerSequence>& train,
                           const std::vector<NerSequence>& eval_set,
                           const std::vector<std::uint64_t>& seeds,
                           HeadOptions opts = {}) {
  if (seeds.empty()) {
    throw std::invalid_argument("ner_eval: need at least one seed");
  }
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  for (std::uint64_t seed : seeds) {
    opts.seed = seed;
    TokenClassifier head = train_token_head(model, tok, train, opts);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& seq : eval_set) {
      std::vector<std::string> pred = predict_tags(model, tok, head,
                                                   seq.tokens);
      Prf prf = span_prf(decode_bio(seq.tags), decode_bio(pred));
      tp += prf.tp;
      fp += prf.fp;
      fn += prf.fn;
    }
    Prf total = from_counts(tp, fp, fn);
    p_sum += total.precision;
    r_sum += total.recall;
    f_sum += total.f1;
  }
  const double n = static_cast<double>(seeds.size());
  EvalReport r;
  r.task = "ner";
  r.samples = eval_set.size();
  r.seeds = seeds;
  r.metrics = {{"precision", p_sum / n},
               {"recall", r_sum / n},
               {"f1", f_sum / n}};
  return r;
}

}  // namespace transtok
