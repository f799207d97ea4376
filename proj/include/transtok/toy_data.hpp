#pragma once

// Synthetic bilingual corpus generator for desk-scale experiments. The
// source language is a topical pseudo-language: pronounceable CV-syllable
// words partitioned into topic clusters plus a shared function-word pool,
// with sentences drawn from a sticky topic chain. The target language is a
// deterministic letter-substitution cipher of the source into Arabic script,
// so the two languages share all distributional statistics while sharing no
// surface forms. The generator emits:
//   - a monolingual source corpus (one document per line),
//   - a monolingual target corpus (independently sampled, ciphered),
//   - a word-by-word parallel corpus (target<TAB>source per line) whose
//     planted word dictionary is exactly the cipher.
// Digits appear only in the monolingual corpora, never in the parallel data,
// so digit tokens exercise the fallback path of embedding transfer rather
// than the alignment path.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "transtok/common.hpp"

namespace transtok {

struct ToyDataConfig {
  std::size_t topics = 8;
  std::size_t words_per_topic = 40;
  std::size_t function_words = 12;
  std::size_t parallel_pairs = 5000;
  std::size_t source_bytes = 1u << 20;  // monolingual corpus size targets
  std::size_t target_bytes = 1u << 20;
  std::size_t min_words = 6;   // per sentence, excluding the final period
  std::size_t max_words = 12;
  std::size_t sentences_per_line = 2;
  double topic_stickiness = 0.8;   // P(keep current topic) between lines
  double function_word_rate = 0.2;
  double digit_rate = 0.3;  // P(a monolingual sentence carries one digit)
  std::uint64_t seed = 0;

  void validate() const {
    if (topics < 2) {
      throw std::invalid_argument("toy data: need at least 2 topics");
    }
    if (words_per_topic < 2 || function_words < 1) {
      throw std::invalid_argument(
          "toy data: need >= 2 words per topic and >= 1 function word");
    }
    if (parallel_pairs < 1) {
      throw std::invalid_argument("toy data: need at least 1 parallel pair");
    }
    if (min_words < 1 || max_words < min_words) {
      throw std::invalid_argument(
          "toy data: need max_words >= min_words >= 1");
    }
    if (sentences_per_line < 1) {
      throw std::invalid_argument(
          "toy data: need at least 1 sentence per line");
    }
    if (topic_stickiness < 0.0 || topic_stickiness > 1.0 ||
        function_word_rate < 0.0 || function_word_rate >= 1.0 ||
        digit_rate < 0.0 || digit_rate > 1.0) {
      throw std::invalid_argument("toy data: rate outside its valid range");
    }
    if (source_bytes < 1024 || target_bytes < 1024) {
      throw std::invalid_argument(
          "toy data: corpus byte targets must be >= 1 KiB");
    }
  }
};

// Letter-substitution cipher into Arabic script; digits and punctuation map
// to themselves. Injective over the generator's alphabet.
inline const std::map<char, std::string>& toy_cipher_alphabet() {
  static const std::map<char, std::string> table = {
      {'a', "ا"}, {'b', "ب"}, {'d', "د"}, {'e', "و"},
      {'f', "ف"}, {'g', "ج"}, {'i', "ي"}, {'k', "ك"},
      {'l', "ل"}, {'m', "م"}, {'n', "ن"}, {'o', "ه"},
      {'p', "ط"}, {'r', "ر"}, {'s', "س"}, {'t', "ت"},
      {'u', "ع"}, {'v', "ث"}, {'z', "ز"}, {'.', "."},
      {'0', "0"},      {'1', "1"},      {'2', "2"},      {'3', "3"},
      {'4', "4"},      {'5', "5"},      {'6', "6"},      {'7', "7"},
      {'8', "8"},      {'9', "9"},
  };
  return table;
}

inline std::string cipher_word(const std::string& source_word) {
  const auto& table = toy_cipher_alphabet();
  std::string out;
  for (char c : source_word) {
    auto it = table.find(c);
    if (it == table.end()) {
      throw std::logic_error(std::string("cipher_word: character '") + c +
                             "' is outside the toy alphabet");
    }
    out += it->second;
  }
  return out;
}

struct ToyLanguage {
  // Index space: [0, function_words) are function words; the rest are
  // content words grouped contiguously by topic.
  std::vector<std::string> source_words;
  std::vector<std::string> target_words;  // cipher_word of the same index
  std::vector<std::size_t> topic_of;      // `topics` for function words
  std::map<std::string, std::string> dictionary;  // source -> target surface
};

inline ToyLanguage build_toy_language(const ToyDataConfig& cfg) {
  cfg.validate();
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  Rng rng(sub_seed(cfg.seed, "toy.words"));
  const std::size_t total =
      cfg.function_words + cfg.topics * cfg.words_per_topic;

  ToyLanguage lang;
  std::set<std::string> seen;
  while (lang.source_words.size() < total) {
    const std::size_t syllables = 2 + rng.below(2);  // 2 or 3
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    if (!seen.insert(w).second) continue;
    lang.source_words.push_back(w);
  }
  for (std::size_t i = 0; i < total; ++i) {
    lang.target_words.push_back(cipher_word(lang.source_words[i]));
    lang.topic_of.push_back(
        i < cfg.function_words
            ? cfg.topics
            : (i - cfg.function_words) / cfg.words_per_topic);
    lang.dictionary[lang.source_words[i]] = lang.target_words[i];
  }
  lang.dictionary["."] = ".";  // sentence-final period, shared surface
  return lang;
}

namespace detail {

// One sentence as word indices; kNumeral + d encodes the digit d, kPeriod
// the sentence-final period.
inline constexpr std::size_t kPeriod = static_cast<std::size_t>(-1);
inline constexpr std::size_t kNumeral = static_cast<std::size_t>(-2) - 9;

inline std::vector<std::size_t> toy_sentence(const ToyDataConfig& cfg,
                                             Rng& rng, std::size_t topic,
                                             bool allow_digits) {
  const std::size_t n =
      cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < cfg.function_word_rate) {
      ids.push_back(rng.below(cfg.function_words));
    } else {
      ids.push_back(cfg.function_words + topic * cfg.words_per_topic +
                    rng.below(cfg.words_per_topic));
    }
  }
  if (allow_digits && rng.uniform() < cfg.digit_rate) {
    const std::size_t digit = rng.below(10);
    ids.insert(ids.begin() + static_cast<std::ptrdiff_t>(rng.below(n + 1)),
               kNumeral + digit);
  }
  ids.push_back(kPeriod);
  return ids;
}

inline void render_sentence(const std::vector<std::size_t>& ids,
                            const std::vector<std::string>& surfaces,
                            std::string& out) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    if (ids[i] == kPeriod) {
      out += '.';
    } else if (ids[i] >= kNumeral) {
      out += static_cast<char>('0' + (ids[i] - kNumeral));
    } else {
      out += surfaces[ids[i]];
    }
  }
}

inline std::size_t step_topic(const ToyDataConfig& cfg, Rng& rng,
                              std::size_t topic) {
  if (rng.uniform() < cfg.topic_stickiness) return topic;
  return rng.below(cfg.topics);
}

inline std::string toy_monolingual(const ToyDataConfig& cfg,
                                   const ToyLanguage& lang,
                                   std::size_t byte_target, bool ciphered,
                                   std::uint64_t seed) {
  const auto& surfaces = ciphered ? lang.target_words : lang.source_words;
  Rng rng(seed);
  std::size_t topic = rng.below(cfg.topics);
  std::string out;
  while (out.size() < byte_target) {
    topic = step_topic(cfg, rng, topic);
    std::string line;
    for (std::size_t s = 0; s < cfg.sentences_per_line; ++s) {
      if (s > 0) line += ' ';
      render_sentence(toy_sentence(cfg, rng, topic, /*allow_digits=*/true),
                      surfaces, line);
    }
    out += line;
    out += '\n';
  }
  return out;
}

inline std::string toy_parallel(const ToyDataConfig& cfg,
                                const ToyLanguage& lang, std::uint64_t seed) {
  Rng rng(seed);
  std::string out;
  for (std::size_t p = 0; p < cfg.parallel_pairs; ++p) {
    const std::size_t topic = rng.below(cfg.topics);
    const std::vector<std::size_t> ids =
        toy_sentence(cfg, rng, topic, /*allow_digits=*/false);
    std::string line;
    render_sentence(ids, lang.target_words, line);
    line += '\t';
    render_sentence(ids, lang.source_words, line);
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace detail

struct ToyCorpora {
  ToyLanguage language;
  std::string source_corpus;  // one document per line
  std::string target_corpus;
  std::string parallel_tsv;   // target<TAB>source per line
};

inline ToyCorpora generate_toy_corpora(const ToyDataConfig& cfg) {
  cfg.validate();
  ToyCorpora out;
  out.language = build_toy_language(cfg);
  out.source_corpus =
      detail::toy_monolingual(cfg, out.language, cfg.source_bytes,
                              /*ciphered=*/false, sub_seed(cfg.seed,
                                                           "toy.source"));
  out.target_corpus =
      detail::toy_monolingual(cfg, out.language, cfg.target_bytes,
                              /*ciphered=*/true, sub_seed(cfg.seed,
                                                          "toy.target"));
  out.parallel_tsv =
      detail::toy_parallel(cfg, out.language, sub_seed(cfg.seed,
                                                       "toy.parallel"));
  return out;
}

inline void save_toy_corpora(const ToyCorpora& c,
                             const std::string& source_path,
                             const std::string& target_path,
                             const std::string& parallel_path) {
  write_text_file(source_path, c.source_corpus);
  write_text_file(target_path, c.target_corpus);
  write_text_file(parallel_path, c.parallel_tsv);
}

}  // namespace transtok
