// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "harr/autodiff.hpp"
#include "harr/encoder.hpp"
#include "harr/error.hpp"

namespace harr {

struct Document {
  int id = 0;
  std::string text;

  friend bool operator==(const Document&, const Document&) = default;
};

/// Reads a JSON-lines corpus: one {"id": int, "text": string} per line, ids dense from 0.
inline std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_number_integer() ||
        !j["text"].is_string()) {
      throw DataError(where + ": expected {\"id\": int, \"text\": string}");
    }
    Document d{j["id"].get<int>(), j["text"].get<std::string>()};
    if (split_whitespace(d.text).empty()) throw DataError(where + ": empty document text");
    docs.push_back(std::move(d));
  }
  std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i].id != static_cast<int>(i)) {
      throw DataError(path + ": document ids must be dense and unique from 0; found id " +
                      std::to_string(docs[i].id) + " at position " + std::to_string(i));
    }
  }
  return docs;
}

inline void save_corpus(const std::string& path, std::span<const Document> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const auto& d : docs) out << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
}

/// Frozen document embeddings; row i belongs to document id i.
struct EmbeddingIndex {
  Array matrix;  // N x d, unit-norm rows

  std::size_t size() const { return matrix.rows(); }
  std::size_t dim() const { return matrix.cols(); }
  std::span<const double> row(int id) const { return matrix.row_span(static_cast<std::size_t>(id)); }
};

inline EmbeddingIndex build_index(const DocumentEncoder& encoder, const Vocabulary& vocab,
                                  std::span<const Document> docs) {
  const std::size_t d = encoder.snapshot().state_dim();
  EmbeddingIndex index{Array(docs.size(), d)};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const Array e = encoder.encode(vocab, docs[i].text);
    std::copy(e.data().begin(), e.data().end(), index.matrix.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return index;
}

/// Top-K restriction of the corpus for one state, scores descending.
struct CandidatePool {
  std::vector<int> ids;
  std::vector<double> scores;

  std::size_t size() const noexcept { return ids.size(); }

  /// Position of a document in the pool, or -1.
  int position(int doc_id) const {
    auto it = std::find(ids.begin(), ids.end(), doc_id);
    return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
  }

  friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

/// Ordering used everywhere a ranking is formed: score descending, then lower id.
inline bool ranks_before(double score_a, int id_a, double score_b, int id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

/// Exact top-K by full scan.
inline CandidatePool top_k_exact(const EmbeddingIndex& index, std::span<const double> state, std::size_t k) {
  if (k == 0) throw InvalidArgument("top_k_exact: K must be >= 1");
  if (state.size() != index.dim()) throw InvalidArgument("top_k_exact: state dimension mismatch");
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = kernels::dot(state, index.matrix.row_span(i));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  auto cmp = [&](int a, int b) { return ranks_before(scores[a], a, scores[b], b); };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), cmp);
  CandidatePool pool;
  for (std::size_t i = 0; i < take; ++i) {
    pool.ids.push_back(order[i]);
    pool.scores.push_back(scores[order[i]]);
  }
  return pool;
}

/// Transposed embeddings of the pool members (d x |pool|), so a 1 x d state
/// times this matrix yields the pool's score row.
inline Array pool_embeddings_t(const EmbeddingIndex& index, const CandidatePool& pool) {
  Array m(index.dim(), pool.size());
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const auto r = index.row(pool.ids[j]);
    for (std::size_t c = 0; c < r.size(); ++c) m(c, j) = r[c];
  }
  return m;
}

}  // namespace harr
