#pragma once

// Byte-pair-encoding subword tokenizer (character-level symbols, end-of-word
// marker) with named special tokens, JSON serialization, and a
// tokens-per-word fertility diagnostic.
//
// Determinism rules: pair counts tie-break toward the lexicographically
// smallest pair; all iteration that affects results runs over sorted
// containers. Special tokens are atomic: they are split out of words before
// merges apply, so no merge chain can reassemble one.

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "transtok/common.hpp"

namespace transtok {

inline constexpr const char* kEndOfWord = "</w>";

// Canonical special-token roles. Ids are assigned in sorted role order, so
// the defaults come out as [CLS]=0, [MASK]=1, [PAD]=2, [SEP]=3, [UNK]=4.
inline std::map<std::string, std::string> default_special_tokens() {
  return {{"classification", "[CLS]"},
          {"masking", "[MASK]"},
          {"padding", "[PAD]"},
          {"separation", "[SEP]"},
          {"unknown", "[UNK]"}};
}

// Optional normalization pass ("arabic"): strips tatweel and the common
// harakat combining marks, folds alef variants to bare alef and alef maqsura
// to ya. Off by default; stored in the model so encode always matches
// training.
inline std::string normalize_text(std::string_view text,
                                  const std::string& mode) {
  if (mode.empty()) return std::string(text);
  if (mode != "arabic") {
    throw std::invalid_argument("unknown normalization mode: " + mode);
  }
  auto cps = utf8_decode(text);
  std::string out;
  out.reserve(text.size());
  for (auto cp : cps) {
    if (cp == 0x0640) continue;                  // tatweel
    if (cp >= 0x064B && cp <= 0x0652) continue;  // fathatan..sukun
    if (cp == 0x0622 || cp == 0x0623 || cp == 0x0625 || cp == 0x0671) {
      cp = 0x0627;  // alef variants -> alef
    } else if (cp == 0x0649) {
      cp = 0x064A;  // alef maqsura -> ya
    }
    utf8_append(out, cp);
  }
  return out;
}

struct TokenizerModel {
  std::unordered_map<std::string, int> vocab;  // surface -> id
  std::vector<std::string> id_to_token;        // id -> surface
  std::vector<std::pair<std::string, std::string>> merges;  // training order
  std::map<std::string, std::string> special_tokens;        // role -> surface
  std::string normalization;  // "" or "arabic"

  // Derived lookups (rebuilt after train/load).
  std::unordered_map<std::string, int> merge_rank;
  std::unordered_set<int> special_ids;

  int vocab_size() const { return static_cast<int>(id_to_token.size()); }

  int id_of(const std::string& surface) const {
    auto it = vocab.find(surface);
    return it == vocab.end() ? -1 : it->second;
  }

  int special_id(const std::string& role) const {
    auto it = special_tokens.find(role);
    if (it == special_tokens.end()) {
      throw std::invalid_argument("tokenizer has no special token role '" +
                                  role + "'");
    }
    int id = id_of(it->second);
    if (id < 0) {
      throw std::logic_error("special token surface missing from vocab: " +
                             it->second);
    }
    return id;
  }

  int unk_id() const { return special_id("unknown"); }
  bool is_special_id(int id) const { return special_ids.count(id) > 0; }

  static std::string merge_key(const std::string& l, const std::string& r) {
    return l + '\x1e' + r;
  }

  void rebuild_derived() {
    merge_rank.clear();
    for (std::size_t i = 0; i < merges.size(); ++i) {
      merge_rank.emplace(merge_key(merges[i].first, merges[i].second),
                         static_cast<int>(i));
    }
    special_ids.clear();
    for (const auto& [role, surface] : special_tokens) {
      int id = id_of(surface);
      if (id < 0) {
        throw std::logic_error("special token surface missing from vocab: " +
                               surface);
      }
      special_ids.insert(id);
    }
  }
};

namespace detail {

// A word is segmented into plain-text runs and atomic special tokens.
struct WordSegment {
  std::string text;
  bool is_special = false;
  bool word_final = false;  // last plain segment of the word gets the marker
};

// Leftmost-longest scan for special-token surfaces inside a word.
inline std::vector<WordSegment> segment_word(
    const std::string& word, const std::vector<std::string>& special_surfaces) {
  std::vector<WordSegment> segs;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t best_at = std::string::npos;
    std::size_t best_len = 0;
    for (const auto& s : special_surfaces) {
      if (s.empty()) continue;
      const std::size_t at = word.find(s, pos);
      if (at == std::string::npos) continue;
      if (at < best_at || (at == best_at && s.size() > best_len)) {
        best_at = at;
        best_len = s.size();
      }
    }
    if (best_at == std::string::npos) {
      segs.push_back({word.substr(pos), false, false});
      break;
    }
    if (best_at > pos) {
      segs.push_back({word.substr(pos, best_at - pos), false, false});
    }
    segs.push_back({word.substr(best_at, best_len), true, false});
    pos = best_at + best_len;
  }
  // Mark the last plain segment as word-final if it ends the word.
  if (!segs.empty() && !segs.back().is_special) segs.back().word_final = true;
  return segs;
}

// Plain text segment -> initial symbol sequence (one symbol per code point;
// the final symbol of a word-final segment carries the end-of-word marker).
inline std::vector<std::string> segment_symbols(const WordSegment& seg) {
  auto cps = utf8_decode(seg.text);
  std::vector<std::string> syms;
  syms.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    std::string s;
    utf8_append(s, cps[i]);
    if (seg.word_final && i + 1 == cps.size()) s += kEndOfWord;
    syms.push_back(std::move(s));
  }
  return syms;
}

// Merge application: repeatedly merge the present pair with the lowest rank,
// all non-overlapping occurrences left to right.
inline void apply_merges(const TokenizerModel& model,
                         std::vector<std::string>& syms) {
  while (syms.size() >= 2) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = model.merge_rank.find(
          TokenizerModel::merge_key(syms[i], syms[i + 1]));
      if (it != model.merge_rank.end() && it->second < best_rank) {
        best_rank = it->second;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto& [l, r] = model.merges[static_cast<std::size_t>(best_rank)];
    std::vector<std::string> next;
    next.reserve(syms.size());
    std::size_t i = 0;
    while (i < syms.size()) {
      if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
        next.push_back(l + r);
        i += 2;
      } else {
        next.push_back(std::move(syms[i]));
        ++i;
      }
    }
    syms = std::move(next);
  }
}

inline std::vector<int> encode_word(
    const TokenizerModel& model, const std::string& word,
    const std::vector<std::string>& special_surfaces) {
  std::vector<int> out;
  for (const auto& seg : segment_word(word, special_surfaces)) {
    if (seg.is_special) {
      out.push_back(model.id_of(seg.text));
      continue;
    }
    auto syms = segment_symbols(seg);
    apply_merges(model, syms);
    for (const auto& s : syms) {
      const int id = model.id_of(s);
      out.push_back(id >= 0 ? id : model.unk_id());
    }
  }
  return out;
}

inline std::vector<std::string> sorted_special_surfaces(
    const TokenizerModel& model) {
  std::vector<std::string> s;
  for (const auto& [role, surface] : model.special_tokens) s.push_back(surface);
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace detail

struct BpeTrainResult {
  TokenizerModel model;
  bool truncated = false;  // corpus too small to reach vocab_size
};

// Train a BPE tokenizer. `vocab_size` counts specials + alphabet + merges;
// it must be at least |alphabet| + |specials| (equality gives a
// character-level tokenizer with zero merges). If the corpus runs out of
// mergeable pairs first, the result is truncated and flagged.
inline BpeTrainResult train_bpe(
    const std::string& corpus, std::size_t vocab_size,
    std::map<std::string, std::string> special_tokens =
        default_special_tokens(),
    const std::string& normalization = "") {
  if (special_tokens.find("unknown") == special_tokens.end()) {
    throw std::invalid_argument("special tokens must include an 'unknown' role");
  }
  {
    std::set<std::string> surfaces;
    for (const auto& [role, surface] : special_tokens) {
      if (surface.empty()) {
        throw std::invalid_argument("special token surface must be non-empty");
      }
      if (!surfaces.insert(surface).second) {
        throw std::invalid_argument("duplicate special token surface: " +
                                    surface);
      }
    }
  }

  TokenizerModel model;
  model.special_tokens = std::move(special_tokens);
  model.normalization = normalization;

  std::vector<std::string> special_surfaces;
  for (const auto& [role, surface] : model.special_tokens) {
    special_surfaces.push_back(surface);
  }
  std::sort(special_surfaces.begin(), special_surfaces.end());

  // Word frequency table (sorted for determinism).
  std::map<std::string, long long> word_freq;
  for (const auto& w : split_whitespace_utf8(normalize_text(corpus, normalization))) {
    ++word_freq[w];
  }
  if (word_freq.empty()) {
    throw std::invalid_argument("train_bpe: corpus contains no words");
  }

  // Expand words into symbol sequences; special surfaces are split out and
  // take no part in pair counting.
  struct Word {
    std::vector<std::string> syms;
    long long freq;
  };
  std::vector<Word> words;
  std::set<std::string> alphabet;
  for (const auto& [w, freq] : word_freq) {
    for (const auto& seg : detail::segment_word(w, special_surfaces)) {
      if (seg.is_special) continue;
      auto syms = detail::segment_symbols(seg);
      for (const auto& s : syms) alphabet.insert(s);
      words.push_back({std::move(syms), freq});
    }
  }

  const std::size_t base = model.special_tokens.size() + alphabet.size();
  if (vocab_size < base) {
    throw std::invalid_argument(
        "train_bpe: vocab_size " + std::to_string(vocab_size) +
        " below specials + alphabet = " + std::to_string(base));
  }

  // Assign ids: specials (sorted role order), then alphabet (sorted), then
  // merge outputs in training order.
  auto add_token = [&](const std::string& surface) {
    auto [it, inserted] =
        model.vocab.emplace(surface, static_cast<int>(model.id_to_token.size()));
    if (inserted) model.id_to_token.push_back(surface);
    return it->second;
  };
  for (const auto& [role, surface] : model.special_tokens) add_token(surface);
  for (const auto& s : alphabet) add_token(s);

  // Pair statistics with a word-level inverted index and a lazy max-heap.
  using Pair = std::pair<std::string, std::string>;
  std::map<Pair, long long> counts;
  std::map<Pair, std::set<std::size_t>> where;
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    const auto& syms = words[wi].syms;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      Pair p{syms[i], syms[i + 1]};
      counts[p] += words[wi].freq;
      where[p].insert(wi);
    }
  }

  struct HeapEntry {
    long long count;
    Pair pair;
    bool operator<(const HeapEntry& o) const {
      if (count != o.count) return count < o.count;
      return pair > o.pair;  // smaller pair wins ties
    }
  };
  std::priority_queue<HeapEntry> heap;
  for (const auto& [p, c] : counts) heap.push({c, p});

  bool truncated = false;
  while (model.id_to_token.size() < vocab_size) {
    // Pop until a live entry surfaces.
    Pair best;
    bool found = false;
    while (!heap.empty()) {
      HeapEntry top = heap.top();
      heap.pop();
      auto it = counts.find(top.pair);
      if (it != counts.end() && it->second == top.count && top.count > 0) {
        best = top.pair;
        found = true;
        break;
      }
    }
    if (!found) {
      truncated = true;
      break;
    }

    const auto& [l, r] = best;
    model.merges.push_back(best);
    add_token(l + r);

    std::set<Pair> touched;
    const std::set<std::size_t> affected = where[best];
    for (std::size_t wi : affected) {
      auto& word = words[wi];
      const long long freq = word.freq;
      // Retract this word's pair contributions.
      for (std::size_t i = 0; i + 1 < word.syms.size(); ++i) {
        Pair p{word.syms[i], word.syms[i + 1]};
        auto it = counts.find(p);
        it->second -= freq;
        touched.insert(p);
        if (it->second <= 0) counts.erase(it);
        where[p].erase(wi);
      }
      // Apply the merge left-to-right, non-overlapping.
      std::vector<std::string> next;
      next.reserve(word.syms.size());
      std::size_t i = 0;
      while (i < word.syms.size()) {
        if (i + 1 < word.syms.size() && word.syms[i] == l &&
            word.syms[i + 1] == r) {
          next.push_back(l + r);
          i += 2;
        } else {
          next.push_back(std::move(word.syms[i]));
          ++i;
        }
      }
      word.syms = std::move(next);
      // Re-add contributions.
      for (std::size_t i2 = 0; i2 + 1 < word.syms.size(); ++i2) {
        Pair p{word.syms[i2], word.syms[i2 + 1]};
        counts[p] += freq;
        touched.insert(p);
        where[p].insert(wi);
      }
    }
    for (const auto& p : touched) {
      auto it = counts.find(p);
      if (it != counts.end() && it->second > 0) heap.push({it->second, p});
    }
  }

  model.rebuild_derived();
  return {std::move(model), truncated};
}

// Encode text to token ids. Unknown characters become the unknown token;
// special-token surfaces are matched atomically (leftmost, longest).
inline std::vector<int> encode(const TokenizerModel& model,
                               std::string_view text) {
  const auto specials = detail::sorted_special_surfaces(model);
  std::vector<int> out;
  for (const auto& w :
       split_whitespace_utf8(normalize_text(text, model.normalization))) {
    auto ids = detail::encode_word(model, w, specials);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

// Bulk encode with a per-word cache; same results as encode(), faster on
// corpora with repeated words.
class CorpusEncoder {
 public:
  explicit CorpusEncoder(const TokenizerModel& model)
      : model_(model), specials_(detail::sorted_special_surfaces(model)) {}

  const std::vector<int>& word_ids(const std::string& word) {
    auto it = cache_.find(word);
    if (it == cache_.end()) {
      it = cache_.emplace(word, detail::encode_word(model_, word, specials_))
               .first;
    }
    return it->second;
  }

  std::vector<int> encode(std::string_view text) {
    std::vector<int> out;
    for (const auto& w : split_whitespace_utf8(
             normalize_text(text, model_.normalization))) {
      const auto& ids = word_ids(w);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

 private:
  const TokenizerModel& model_;
  std::vector<std::string> specials_;
  std::unordered_map<std::string, std::vector<int>> cache_;
};

// Decode ids back to text: end-of-word markers become spaces, special tokens
// are emitted verbatim with surrounding spacing.
inline std::string decode(const TokenizerModel& model,
                          const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= model.vocab_size()) {
      throw std::out_of_range("decode: id " + std::to_string(id) +
                              " outside vocabulary of size " +
                              std::to_string(model.vocab_size()));
    }
    const std::string& surface = model.id_to_token[static_cast<std::size_t>(id)];
    if (model.is_special_id(id)) {
      out += surface;
      out += ' ';
      continue;
    }
    const std::size_t marker_len = std::strlen(kEndOfWord);
    if (surface.size() >= marker_len &&
        surface.compare(surface.size() - marker_len, marker_len, kEndOfWord) ==
            0) {
      out += surface.substr(0, surface.size() - marker_len);
      out += ' ';
    } else {
      out += surface;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// Tokens-per-whitespace-word diagnostic, overall and bucketed by word length
// in code points (lengths >= 16 share one bucket).
struct FertilityReport {
  double overall = 0.0;
  long long total_words = 0;
  long long total_tokens = 0;
  // bucket -> (word count, token count); bucket = min(length, 16)
  std::map<std::size_t, std::pair<long long, long long>> by_length;

  double bucket_ratio(std::size_t bucket) const {
    auto it = by_length.find(bucket);
    if (it == by_length.end() || it->second.first == 0) return 0.0;
    return static_cast<double>(it->second.second) /
           static_cast<double>(it->second.first);
  }
};

inline FertilityReport fertility(const TokenizerModel& model,
                                 const std::string& corpus) {
  CorpusEncoder enc(model);
  FertilityReport rep;
  const auto words =
      split_whitespace_utf8(normalize_text(corpus, model.normalization));
  if (words.empty()) {
    throw std::invalid_argument("fertility: corpus contains no words");
  }
  for (const auto& w : words) {
    const auto n_tokens = static_cast<long long>(enc.word_ids(w).size());
    const std::size_t len = std::min<std::size_t>(utf8_decode(w).size(), 16);
    rep.total_words += 1;
    rep.total_tokens += n_tokens;
    auto& [wc, tc] = rep.by_length[len];
    wc += 1;
    tc += n_tokens;
  }
  rep.overall = static_cast<double>(rep.total_tokens) /
                static_cast<double>(rep.total_words);
  return rep;
}

// ---------------------------------------------------------------------------
// JSON serialization: {"vocab": {surface: id}, "merges": ["left right", ...],
// "special_tokens": {role: surface}} plus optional "normalization".
// ---------------------------------------------------------------------------

inline std::string tokenizer_to_json(const TokenizerModel& model) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
  for (int id = 0; id < model.vocab_size(); ++id) {
    vocab[model.id_to_token[static_cast<std::size_t>(id)]] = id;
  }
  j["vocab"] = std::move(vocab);
  std::vector<std::string> merge_strs;
  merge_strs.reserve(model.merges.size());
  for (const auto& [l, r] : model.merges) merge_strs.push_back(l + " " + r);
  j["merges"] = merge_strs;
  j["special_tokens"] = model.special_tokens;
  if (!model.normalization.empty()) j["normalization"] = model.normalization;
  return j.dump(2);
}

inline TokenizerModel tokenizer_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("tokenizer JSON parse error: ") +
                             e.what());
  }
  TokenizerModel model;
  if (!j.contains("vocab") || !j.contains("merges") ||
      !j.contains("special_tokens")) {
    throw std::runtime_error(
        "tokenizer JSON must contain vocab, merges, special_tokens");
  }
  const auto& vocab = j.at("vocab");
  model.id_to_token.assign(vocab.size(), std::string());
  std::vector<bool> seen(vocab.size(), false);
  for (auto it = vocab.begin(); it != vocab.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() || seen[id]) {
      throw std::runtime_error(
          "tokenizer vocab ids must be contiguous 0..size-1");
    }
    seen[static_cast<std::size_t>(id)] = true;
    model.id_to_token[static_cast<std::size_t>(id)] = it.key();
    model.vocab[it.key()] = id;
  }
  for (const auto& m : j.at("merges")) {
    const std::string s = m.get<std::string>();
    const auto sp = s.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == s.size()) {
      throw std::runtime_error("malformed merge rule: '" + s + "'");
    }
    model.merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
  }
  for (auto it = j.at("special_tokens").begin();
       it != j.at("special_tokens").end(); ++it) {
    model.special_tokens[it.key()] = it.value().get<std::string>();
  }
  if (j.contains("normalization")) {
    model.normalization = j.at("normalization").get<std::string>();
  }
  for (const auto& [l, r] : model.merges) {
    if (model.vocab.find(l + r) == model.vocab.end()) {
      throw std::runtime_error("merge output missing from vocab: " + l + r);
    }
  }
  model.rebuild_derived();
  return model;
}

inline void save_tokenizer(const TokenizerModel& model,
                           const std::string& path) {
  write_text_file(path, tokenizer_to_json(model) + "\n");
}

inline TokenizerModel load_tokenizer(const std::string& path) {
  return tokenizer_from_json(read_text_file(path));
}

}  // namespace transtok
