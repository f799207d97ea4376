#pragma once

// Target-embedding initialization by vocabulary transfer: each target token
// with alignment counts receives the count-weighted average of its aligned
// source rows; tokens covered by an explicit fallback mapping copy the mapped
// source row; everything else gets a seeded random row whose standard
// deviation matches the source matrix. Every row carries a provenance tag.

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "transtok/alignment.hpp"
#include "transtok/common.hpp"
#include "transtok/tokenizer.hpp"

namespace transtok {

enum class Provenance : std::uint8_t {
  aligned = 0,
  fallback = 1,
  random_backoff = 2,
};

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;              // row-major rows x dim
  std::vector<std::uint8_t> provenance;    // one tag per row

  double* row(std::size_t r) { return values.data() + r * dim; }
  const double* row(std::size_t r) const { return values.data() + r * dim; }

  static EmbeddingMatrix zeros(std::size_t rows, std::size_t dim) {
    EmbeddingMatrix m;
    m.rows = rows;
    m.dim = dim;
    m.values.assign(rows * dim, 0.0);
    m.provenance.assign(rows, static_cast<std::uint8_t>(Provenance::aligned));
    return m;
  }

  // Population standard deviation over every element.
  double element_std() const {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return std::sqrt(var);
  }
};

// ---------------------------------------------------------------------------
// Binary serialization: magic "EMB1", u64 rows, u64 dim (little-endian),
// rows*dim f64 values, then `rows` provenance bytes (0/1/2).
// ---------------------------------------------------------------------------

inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write("EMB1", 4);
  put_u64(out, m.rows);
  put_u64(out, m.dim);
  put_f64_array(out, m.values.data(), m.values.size());
  out.write(reinterpret_cast<const char*>(m.provenance.data()),
            static_cast<std::streamsize>(m.provenance.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for reading: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "EMB1") {
    throw std::runtime_error("bad embedding file magic in " + path);
  }
  EmbeddingMatrix m;
  m.rows = static_cast<std::size_t>(get_u64(in));
  m.dim = static_cast<std::size_t>(get_u64(in));
  m.values.resize(m.rows * m.dim);
  get_f64_array(in, m.values.data(), m.values.size());
  m.provenance.resize(m.rows);
  in.read(reinterpret_cast<char*>(m.provenance.data()),
          static_cast<std::streamsize>(m.provenance.size()));
  if (!in) throw std::runtime_error("embedding file truncated: " + path);
  for (auto p : m.provenance) {
    if (p > 2) {
      throw std::runtime_error("embedding file has invalid provenance tag in " +
                               path);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Fallback map: target token surface -> source token surface.
// ---------------------------------------------------------------------------

struct FallbackMap {
  std::map<std::string, std::string> entries;
};

inline std::string fallback_to_tsv(const FallbackMap& map) {
  std::string out;
  for (const auto& [t, s] : map.entries) {
    out += t;
    out += '\t';
    out += s;
    out += '\n';
  }
  return out;
}

inline FallbackMap fallback_from_tsv(const std::string& text) {
  FallbackMap map;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto fields = split_tab(lines[i]);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error("fallback map line " + std::to_string(i + 1) +
                               ": expected target_token<TAB>source_token");
    }
    map.entries[fields[0]] = fields[1];
  }
  return map;
}

inline void save_fallback(const FallbackMap& map, const std::string& path) {
  write_text_file(path, fallback_to_tsv(map));
}

inline FallbackMap load_fallback(const std::string& path) {
  return fallback_from_tsv(read_text_file(path));
}

// Default list: digits and ASCII punctuation (bare and word-final token
// forms) that exist in both vocabularies map to themselves; special-token
// surfaces map role-to-role. Purely a convenience — any hand-written TSV in
// the declared format works too.
inline FallbackMap default_fallback_map(const TokenizerModel& tgt,
                                        const TokenizerModel& src) {
  FallbackMap map;
  const std::string chars = "0123456789.,!?;:-()'\"/%+=&*@#$[]{}<>_^~|\\";
  for (char c : chars) {
    for (const char* suffix : {"", kEndOfWord}) {
      const std::string surface = std::string(1, c) + suffix;
      if (tgt.id_of(surface) >= 0 && src.id_of(surface) >= 0) {
        map.entries[surface] = surface;
      }
    }
  }
  for (const auto& [role, tgt_surface] : tgt.special_tokens) {
    auto it = src.special_tokens.find(role);
    if (it != src.special_tokens.end()) {
      map.entries[tgt_surface] = it->second;
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Embedding transfer
// ---------------------------------------------------------------------------

// Precedence per target token: alignment counts (weighted average), then
// fallback copy, then seeded random backoff. `src` resolves fallback source
// surfaces to rows and may be null when the fallback map is empty.
inline EmbeddingMatrix init_embeddings(const AlignmentTable& table,
                                       const EmbeddingMatrix& src_emb,
                                       const FallbackMap& fallback,
                                       const TokenizerModel& tgt,
                                       std::uint64_t seed,
                                       const TokenizerModel* src = nullptr) {
  if (src_emb.rows == 0 || src_emb.dim == 0) {
    throw std::invalid_argument("init_embeddings: source matrix is empty");
  }
  if (!fallback.entries.empty() && src == nullptr) {
    throw std::invalid_argument(
        "init_embeddings: fallback resolution requires the source tokenizer");
  }
  const std::size_t V = static_cast<std::size_t>(tgt.vocab_size());
  const std::size_t D = src_emb.dim;
  EmbeddingMatrix out = EmbeddingMatrix::zeros(V, D);
  const double backoff_std = src_emb.element_std();
  Rng rng(sub_seed(seed, "embedding-backoff"));

  for (std::size_t t = 0; t < V; ++t) {
    // 1) alignment counts -> weighted average of source rows
    auto it = table.counts.find(static_cast<int>(t));
    if (it != table.counts.end()) {
      double sum = 0.0;
      for (const auto& [s, c] : it->second) {
        if (c < 0.0) {
          throw std::invalid_argument("init_embeddings: negative count");
        }
        if (s < 0 || static_cast<std::size_t>(s) >= src_emb.rows) {
          throw std::out_of_range(
              "init_embeddings: alignment references source id " +
              std::to_string(s) + " outside the source matrix");
        }
        sum += c;
      }
      if (sum > 0.0) {
        double* row = out.row(t);
        for (const auto& [s, c] : it->second) {
          const double w = c / sum;
          const double* srow = src_emb.row(static_cast<std::size_t>(s));
          for (std::size_t d = 0; d < D; ++d) row[d] += w * srow[d];
        }
        out.provenance[t] = static_cast<std::uint8_t>(Provenance::aligned);
        continue;
      }
      // zero-sum counts: treated as unaligned, fall through
    }
    // 2) fallback copy
    const std::string& surface = tgt.id_to_token[t];
    auto fb = fallback.entries.find(surface);
    if (fb != fallback.entries.end()) {
      const int sid = src->id_of(fb->second);
      if (sid < 0 || static_cast<std::size_t>(sid) >= src_emb.rows) {
        throw std::runtime_error(
            "init_embeddings: fallback source token '" + fb->second +
            "' missing from the source vocabulary");
      }
      const double* srow = src_emb.row(static_cast<std::size_t>(sid));
      std::copy(srow, srow + D, out.row(t));
      out.provenance[t] = static_cast<std::uint8_t>(Provenance::fallback);
      continue;
    }
    // 3) seeded random backoff, std matched to the source matrix
    double* row = out.row(t);
    for (std::size_t d = 0; d < D; ++d) row[d] = rng.normal(0.0, backoff_std);
    out.provenance[t] = static_cast<std::uint8_t>(Provenance::random_backoff);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coverage reporting
// ---------------------------------------------------------------------------

struct CoverageReport {
  std::array<std::size_t, 3> counts{};   // indexed by Provenance
  std::array<double, 3> fractions{};
  std::vector<std::string> backoff_surfaces;  // ascending id order
};

inline CoverageReport coverage_report(const EmbeddingMatrix& emb,
                                      const TokenizerModel& tgt) {
  if (emb.provenance.size() != emb.rows) {
    throw std::invalid_argument("coverage_report: provenance not populated");
  }
  if (static_cast<std::size_t>(tgt.vocab_size()) != emb.rows) {
    throw std::invalid_argument(
        "coverage_report: tokenizer size does not match matrix rows");
  }
  CoverageReport rep;
  for (std::size_t r = 0; r < emb.rows; ++r) {
    const auto tag = emb.provenance[r];
    rep.counts[tag] += 1;
    if (tag == static_cast<std::uint8_t>(Provenance::random_backoff)) {
      rep.backoff_surfaces.push_back(tgt.id_to_token[r]);
    }
  }
  if (emb.rows > 0) {
    for (std::size_t i = 0; i < 3; ++i) {
      rep.fractions[i] =
          static_cast<double>(rep.counts[i]) / static_cast<double>(emb.rows);
    }
  }
  return rep;
}

}  // namespace transtok
