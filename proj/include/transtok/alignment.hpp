#pragma once

// Statistical word alignment over subword tokens: IBM Model 1 trained by
// expectation-maximization, plus Viterbi (argmax) count extraction into the
// per-target-token alignment count table consumed by embedding transfer.
//
// Model 1 here has no NULL word: every target token aligns to some source
// token of its sentence. The per-iteration log-likelihood uses the uniform
// 1/|source sentence| alignment prior, and iteration k's entry is evaluated
// under the parameters entering that iteration, so the sequence is
// non-decreasing by the standard EM guarantee. Viterbi ties break toward the
// lowest source token id.

#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "transtok/common.hpp"
#include "transtok/tokenizer.hpp"

namespace transtok {

struct ParallelCorpus {
  // (target sentence, source sentence)
  std::vector<std::pair<std::string, std::string>> pairs;
};

inline bool is_blank(std::string_view s) {
  for (unsigned char c : s) {
    if (!std::isspace(c)) return false;
  }
  return true;
}

// TSV, one pair per line: target<TAB>source.
inline ParallelCorpus parse_parallel_tsv(const std::string& text) {
  ParallelCorpus corpus;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto fields = split_tab(lines[i]);
    if (fields.size() != 2 || is_blank(fields[0]) || is_blank(fields[1])) {
      throw std::runtime_error(
          "parallel corpus line " + std::to_string(i + 1) +
          ": expected non-empty target<TAB>source");
    }
    corpus.pairs.emplace_back(fields[0], fields[1]);
  }
  return corpus;
}

inline ParallelCorpus load_parallel_corpus(const std::string& path) {
  return parse_parallel_tsv(read_text_file(path));
}

// p(target token | source token), sparse over co-occurring pairs.
struct TranslationTable {
  std::map<int, std::map<int, double>> probs;  // source id -> target id -> p
  int target_vocab_size = 0;
  int source_vocab_size = 0;

  double prob(int target, int source) const {
    auto s = probs.find(source);
    if (s == probs.end()) return 0.0;
    auto t = s->second.find(target);
    return t == s->second.end() ? 0.0 : t->second;
  }
};

struct Ibm1Result {
  TranslationTable table;
  std::vector<double> log_likelihood;  // one entry per EM iteration
};

namespace detail {

inline std::vector<std::pair<std::vector<int>, std::vector<int>>>
tokenize_pairs(const ParallelCorpus& corpus, const TokenizerModel& tgt,
               const TokenizerModel& src) {
  CorpusEncoder tgt_enc(tgt), src_enc(src);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
  out.reserve(corpus.pairs.size());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    auto t = tgt_enc.encode(corpus.pairs[i].first);
    auto s = src_enc.encode(corpus.pairs[i].second);
    if (t.empty() || s.empty()) {
      throw std::runtime_error("parallel pair " + std::to_string(i + 1) +
                               " tokenizes to an empty side");
    }
    out.emplace_back(std::move(t), std::move(s));
  }
  return out;
}

}  // namespace detail

inline Ibm1Result train_ibm1(const ParallelCorpus& corpus,
                             const TokenizerModel& tgt,
                             const TokenizerModel& src, int iterations) {
  if (iterations < 1) {
    throw std::invalid_argument("train_ibm1: iterations must be >= 1");
  }
  if (corpus.pairs.empty()) {
    throw std::invalid_argument("train_ibm1: corpus is empty");
  }
  const auto tokenized = detail::tokenize_pairs(corpus, tgt, src);

  Ibm1Result res;
  res.table.target_vocab_size = tgt.vocab_size();
  res.table.source_vocab_size = src.vocab_size();

  // Initialize p(t|s) uniform over the targets each source co-occurs with.
  std::map<int, std::set<int>> cooc;
  for (const auto& [t_ids, s_ids] : tokenized) {
    for (int s : s_ids) {
      for (int t : t_ids) cooc[s].insert(t);
    }
  }
  for (const auto& [s, targets] : cooc) {
    const double u = 1.0 / static_cast<double>(targets.size());
    for (int t : targets) res.table.probs[s][t] = u;
  }

  for (int iter = 0; iter < iterations; ++iter) {
    std::map<int, std::map<int, double>> counts;  // source -> target -> c
    double ll = 0.0;
    for (const auto& [t_ids, s_ids] : tokenized) {
      const double src_len = static_cast<double>(s_ids.size());
      for (int t : t_ids) {
        double denom = 0.0;
        for (int s : s_ids) denom += res.table.prob(t, s);
        ll += std::log(denom / src_len);
        for (int s : s_ids) {
          counts[s][t] += res.table.prob(t, s) / denom;
        }
      }
    }
    res.log_likelihood.push_back(ll);
    for (auto& [s, tc] : counts) {
      double total = 0.0;
      for (const auto& [t, c] : tc) total += c;
      auto& row = res.table.probs[s];
      for (const auto& [t, c] : tc) row[t] = c / total;
    }
  }
  return res;
}

// Per-target alignment counts c_{t -> s}; absent target means unaligned.
struct AlignmentTable {
  std::map<int, std::map<int, double>> counts;  // target id -> source id -> c
  int target_vocab_size = 0;
  int source_vocab_size = 0;
};

// Each target-token occurrence votes +1 for its argmax-probability source
// token within the paired sentence.
inline AlignmentTable extract_counts(const TranslationTable& table,
                                     const ParallelCorpus& corpus,
                                     const TokenizerModel& tgt,
                                     const TokenizerModel& src) {
  if (table.target_vocab_size != tgt.vocab_size() ||
      table.source_vocab_size != src.vocab_size()) {
    throw std::runtime_error(
        "extract_counts: translation table was trained with different "
        "vocabulary sizes than the given tokenizers");
  }
  const auto tokenized = detail::tokenize_pairs(corpus, tgt, src);
  AlignmentTable out;
  out.target_vocab_size = tgt.vocab_size();
  out.source_vocab_size = src.vocab_size();
  for (const auto& [t_ids, s_ids] : tokenized) {
    for (int t : t_ids) {
      int best_s = -1;
      double best_p = -1.0;
      for (int s : s_ids) {
        const double p = table.prob(t, s);
        // Strict > plus ascending scan = ties go to the lowest source id
        // (duplicates of the same id share the same probability anyway).
        if (p > best_p || (p == best_p && s < best_s)) {
          best_p = p;
          best_s = s;
        }
      }
      out.counts[t][best_s] += 1.0;
    }
  }
  return out;
}

// TSV serialization: target_id<TAB>source_id<TAB>count, sorted by
// (target_id, source_id).
inline std::string alignment_to_tsv(const AlignmentTable& table) {
  std::string out;
  for (const auto& [t, row] : table.counts) {
    for (const auto& [s, c] : row) {
      out += std::to_string(t);
      out += '\t';
      out += std::to_string(s);
      out += '\t';
      out += format_double(c);
      out += '\n';
    }
  }
  return out;
}

inline AlignmentTable alignment_from_tsv(const std::string& text) {
  AlignmentTable table;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto fields = split_tab(lines[i]);
    if (fields.size() != 3) {
      throw std::runtime_error("alignment TSV line " + std::to_string(i + 1) +
                               ": expected target_id<TAB>source_id<TAB>count");
    }
    int t = 0, s = 0;
    double c = 0.0;
    try {
      t = std::stoi(fields[0]);
      s = std::stoi(fields[1]);
      c = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw std::runtime_error("alignment TSV line " + std::to_string(i + 1) +
                               ": malformed number");
    }
    if (t < 0 || s < 0 || c < 0.0 || !std::isfinite(c)) {
      throw std::runtime_error("alignment TSV line " + std::to_string(i + 1) +
                               ": ids and counts must be nonnegative");
    }
    if (c == 0.0) continue;  // absent means unaligned; zero rows are dropped
    table.counts[t][s] += c;
    table.target_vocab_size = std::max(table.target_vocab_size, t + 1);
    table.source_vocab_size = std::max(table.source_vocab_size, s + 1);
  }
  return table;
}

inline void save_alignment(const AlignmentTable& table,
                           const std::string& path) {
  write_text_file(path, alignment_to_tsv(table));
}

inline AlignmentTable load_alignment(const std::string& path) {
  return alignment_from_tsv(read_text_file(path));
}

}  // namespace transtok
