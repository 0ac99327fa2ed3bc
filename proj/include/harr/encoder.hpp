// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Text encoders for the retriever.
//
// The state encoder is trainable; the document encoder evaluates the same
// architecture with a parameter snapshot taken at initialization and never
// updated. Architecture: token embedding lookup -> mean pool -> linear
// projection -> unit normalization.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "harr/autodiff.hpp"
#include "harr/error.hpp"
#include "harr/rng.hpp"

namespace harr {

inline constexpr std::string_view kUnknownToken = "<unk>";
inline constexpr std::string_view kSeparator = "[SEP]";
inline constexpr std::string_view kQueryTag = "q:";
inline constexpr std::string_view kObservationTag = "o:";

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Token vocabulary. Ids are dense in [0, size()).
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds a vocabulary from tokens in order; duplicates are ignored. The
  /// unknown token is inserted first if absent.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    v.add(std::string(kUnknownToken));
    for (const auto& t : tokens) v.add(to_lower(t));
    v.unknown_id_ = v.ids_.at(std::string(kUnknownToken));
    return v;
  }

  /// One token per line; id = line number.
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw DataError("vocabulary " + path + ": empty line " + std::to_string(v.size()));
      if (v.ids_.count(line)) throw DataError("vocabulary " + path + ": duplicate token " + line);
      v.add(line);
    }
    auto it = v.ids_.find(std::string(kUnknownToken));
    if (it == v.ids_.end()) throw DataError("vocabulary " + path + ": missing " + std::string(kUnknownToken));
    v.unknown_id_ = it->second;
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  int unknown_id() const noexcept { return unknown_id_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unknown_id_ : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

 private:
  void add(const std::string& t) {
    if (ids_.count(t)) return;
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int unknown_id_ = 0;
};

/// Lowercase, whitespace split, vocabulary lookup with unknown fallback.
inline std::vector<int> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<int> ids;
  for (const auto& w : split_whitespace(to_lower(text))) ids.push_back(vocab.id(w));
  return ids;
}

/// theta: trainable state-encoder weights.
struct PolicyParameters {
  Array token_embeddings;  // V x d_e
  Array projection;        // d_e x d

  std::size_t vocab_size() const { return token_embeddings.rows(); }
  std::size_t embed_dim() const { return token_embeddings.cols(); }
  std::size_t state_dim() const { return projection.cols(); }

  friend bool operator==(const PolicyParameters&, const PolicyParameters&) = default;
};

inline PolicyParameters init_params(std::uint64_t seed, std::size_t vocab_size, std::size_t embed_dim,
                                    std::size_t state_dim) {
  if (vocab_size == 0 || embed_dim == 0 || state_dim == 0) {
    throw InvalidArgument("init_params: dimensions must be positive");
  }
  Rng rng(seed);
  PolicyParameters p{Array(vocab_size, embed_dim), Array(embed_dim, state_dim)};
  for (double& x : p.token_embeddings.data()) x = uniform(rng, -0.1, 0.1);
  for (double& x : p.projection.data()) x = uniform(rng, -0.1, 0.1);
  return p;
}

enum class RenderMode { kHistoryAware, kQueryOnly };

inline std::string_view render_mode_name(RenderMode m) {
  return m == RenderMode::kHistoryAware ? "history" : "query-only";
}

inline RenderMode parse_render_mode(std::string_view s) {
  if (s == "history" || s == "history_aware" || s == "history-aware") return RenderMode::kHistoryAware;
  if (s == "query-only" || s == "query_only") return RenderMode::kQueryOnly;
  throw ConfigError("unknown rendering mode '" + std::string(s) + "' (expected history|query-only)");
}

struct StateRendering {
  RenderMode mode = RenderMode::kHistoryAware;
  std::size_t max_tokens = 256;
  std::string version = "v1";
};

/// One (sub-query, observation) pair of the retrieval history. The initial
/// question is stored as an entry without an observation.
struct HistoryEntry {
  std::string sub_query;
  std::optional<std::string> observation;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

namespace detail {

inline std::string render_entry(const HistoryEntry& e) {
  std::string s = std::string(kQueryTag) + " " + e.sub_query;
  if (e.observation) s += " " + std::string(kSeparator) + " " + std::string(kObservationTag) + " " + *e.observation;
  return s;
}

inline std::size_t count_tokens(const std::string& s) { return split_whitespace(s).size(); }

}  // namespace detail

/// Serializes (history, current sub-query) into encoder input text.
///
/// history-aware: "q: q0 [SEP] q: q1 [SEP] o: o1 [SEP] ... [SEP] q: q_t".
/// query-only: q_t alone.
/// Over budget, the oldest pairs after the initial question are dropped first;
/// the initial entry and q_t are always kept.
inline std::string render_state(std::span<const HistoryEntry> history, const std::string& current,
                                const StateRendering& rendering) {
  if (split_whitespace(current).empty()) throw InvalidArgument("render_state: empty current sub-query");
  if (rendering.mode == RenderMode::kQueryOnly) return current;

  std::vector<std::string> segments;
  for (const auto& e : history) segments.push_back(detail::render_entry(e));
  const std::string last = std::string(kQueryTag) + " " + current;

  auto join = [&](std::size_t drop) {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i >= 1 && i <= drop) continue;
      out += segments[i];
      out += " ";
      out += kSeparator;
      out += " ";
    }
    return out + last;
  };

  const std::size_t droppable = segments.size() > 1 ? segments.size() - 1 : 0;
  std::size_t drop = 0;
  std::string text = join(drop);
  while (drop < droppable && detail::count_tokens(text) > rendering.max_tokens) text = join(++drop);
  return text;
}

/// Token ids fed to the encoder; empty text maps to the unknown token alone.
inline std::vector<int> encoder_input(const Vocabulary& vocab, std::string_view text) {
  auto ids = tokenize(vocab, text);
  if (ids.empty()) ids.push_back(vocab.unknown_id());
  return ids;
}

/// Parameter matrices bound as leaves of one graph.
struct ParamVars {
  Var token_embeddings;
  Var projection;
};

inline ParamVars bind_params(Graph& g, const PolicyParameters& p, bool requires_grad) {
  return {g.leaf(p.token_embeddings, requires_grad), g.leaf(p.projection, requires_grad)};
}

/// Differentiable state embedding (1 x d, unit norm).
inline Var encode_state(const ParamVars& params, const Vocabulary& vocab, std::string_view text, Graph& g) {
  const Var rows = g.gather_rows(params.token_embeddings, encoder_input(vocab, text));
  return g.unit_normalize(g.matmul(g.row_mean(rows), params.projection));
}

/// Plain-value encoder with the same arithmetic as encode_state.
inline Array encode_text(const PolicyParameters& params, const Vocabulary& vocab, std::string_view text) {
  const auto ids = encoder_input(vocab, text);
  const Array h = kernels::matmul(kernels::row_mean(kernels::gather_rows(params.token_embeddings, ids)),
                                  params.projection);
  if (!(kernels::norm(h.data()) > 1e-12)) throw InvalidArgument("encode_text: near-zero norm");
  return kernels::unit_normalize(h);
}

/// Frozen document encoder: a snapshot of the parameters taken at initialization.
class DocumentEncoder {
 public:
  explicit DocumentEncoder(PolicyParameters snapshot) : snapshot_(std::move(snapshot)) {}

  Array encode(const Vocabulary& vocab, std::string_view text) const { return encode_text(snapshot_, vocab, text); }
  const PolicyParameters& snapshot() const noexcept { return snapshot_; }

 private:
  PolicyParameters snapshot_;
};

}  // namespace harr
