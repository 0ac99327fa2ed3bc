// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Plackett-Luce ranked-retrieval policy restricted to a candidate pool.
//
// An ordered list (d^1..d^k) is drawn by k successive softmax draws without
// replacement; its probability is the product of the per-position selection
// probabilities. Log-probabilities are always computed by that sequential
// factorization, whatever the sampler.

#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "harr/autodiff.hpp"
#include "harr/corpus.hpp"
#include "harr/encoder.hpp"
#include "harr/error.hpp"
#include "harr/rng.hpp"

namespace harr {

struct RankedAction {
  std::vector<int> doc_ids;
  std::vector<double> position_log_probs;  // empty for deterministic rankings
  double log_prob = 0.0;

  std::size_t size() const noexcept { return doc_ids.size(); }
  friend bool operator==(const RankedAction&, const RankedAction&) = default;
};

namespace detail {

inline void check_pl_args(std::size_t pool_size, std::size_t k, double temperature) {
  if (k == 0 || k > pool_size) {
    throw InvalidArgument("Plackett-Luce: k=" + std::to_string(k) + " must be in [1, " +
                          std::to_string(pool_size) + "]");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("Plackett-Luce: temperature must be > 0");
}

}  // namespace detail

/// Samples an ordered k-list from the pool. `rng` fully determines the outcome.
inline RankedAction pl_sample(const CandidatePool& pool, std::size_t k, double temperature, Rng& rng) {
  detail::check_pl_args(pool.size(), k, temperature);
  std::vector<bool> masked(pool.size(), false);
  RankedAction action;
  for (std::size_t pos = 0; pos < k; ++pos) {
    const auto lp = masked_log_softmax_values(pool.scores, masked, temperature);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pick = pool.size();
    std::size_t last_open = pool.size();
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (masked[j]) continue;
      last_open = j;
      acc += std::exp(lp[j]);
      if (u < acc) {
        pick = j;
        break;
      }
    }
    if (pick == pool.size()) pick = last_open;  // rounding left u above the cumulative sum
    masked[pick] = true;
    action.doc_ids.push_back(pool.ids[pick]);
    action.position_log_probs.push_back(lp[pick]);
    action.log_prob += lp[pick];
  }
  return action;
}

/// Log-probability of `action` from plain score values.
inline double pl_log_prob_values(const CandidatePool& pool, std::span<const double> scores,
                                 const std::vector<int>& doc_ids, double temperature) {
  detail::check_pl_args(pool.size(), doc_ids.size(), temperature);
  std::vector<bool> masked(pool.size(), false);
  double total = 0.0;
  for (int id : doc_ids) {
    const int pos = pool.position(id);
    if (pos < 0) throw InvalidArgument("pl_log_prob: document " + std::to_string(id) + " not in pool");
    if (masked[static_cast<std::size_t>(pos)]) throw InvalidArgument("pl_log_prob: repeated document");
    total += masked_log_softmax_values(scores, masked, temperature)[static_cast<std::size_t>(pos)];
    masked[static_cast<std::size_t>(pos)] = true;
  }
  return total;
}

/// Differentiable log-probability of `action` under the current state encoding.
/// Scores of all pool members are recomputed from `state` (1 x d) against the
/// frozen index; pool membership is taken as given.
inline Var pl_log_prob(const CandidatePool& pool, Var state, const EmbeddingIndex& index,
                       const RankedAction& action, double temperature, Graph& g) {
  detail::check_pl_args(pool.size(), action.size(), temperature);
  const Var docs_t = g.leaf(pool_embeddings_t(index, pool), false);
  const Var scores = g.matmul(state, docs_t);
  std::vector<bool> masked(pool.size(), false);
  std::vector<Var> terms;
  for (int id : action.doc_ids) {
    const int pos = pool.position(id);
    if (pos < 0) throw InvalidArgument("pl_log_prob: document " + std::to_string(id) + " not in pool");
    const auto p = static_cast<std::size_t>(pos);
    if (masked[p]) throw InvalidArgument("pl_log_prob: repeated document");
    terms.push_back(g.element(g.masked_log_softmax(scores, masked, temperature), p));
    masked[p] = true;
  }
  return g.sum(terms);
}

/// Top-k of the pool by score, ties to the lower id. Log-prob fields stay empty.
inline RankedAction deterministic_rank(const CandidatePool& pool, std::size_t k) {
  if (k == 0 || k > pool.size()) throw InvalidArgument("deterministic_rank: k out of range");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(pool.scores[a], pool.ids[a], pool.scores[b], pool.ids[b]);
  });
  RankedAction a;
  for (std::size_t i = 0; i < k; ++i) a.doc_ids.push_back(pool.ids[order[i]]);
  return a;
}

inline constexpr std::size_t kMaxEnumerablePool = 8;

/// Exact probability of every ordered k-list (keyed by document ids).
inline std::map<std::vector<int>, double> enumerate_action_probs(const CandidatePool& pool, std::size_t k,
                                                                 double temperature) {
  if (pool.size() > kMaxEnumerablePool) {
    throw InvalidArgument("enumerate_action_probs: pool larger than " + std::to_string(kMaxEnumerablePool));
  }
  detail::check_pl_args(pool.size(), k, temperature);
  std::map<std::vector<int>, double> out;
  std::vector<bool> masked(pool.size(), false);
  std::vector<int> prefix;
  auto recurse = [&](auto&& self, double prob) -> void {
    if (prefix.size() == k) {
      out[prefix] = prob;
      return;
    }
    const auto lp = masked_log_softmax_values(pool.scores, masked, temperature);
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (masked[j]) continue;
      masked[j] = true;
      prefix.push_back(pool.ids[j]);
      self(self, prob * std::exp(lp[j]));
      prefix.pop_back();
      masked[j] = false;
    }
  };
  recurse(recurse, 1.0);
  return out;
}

}  // namespace harr
