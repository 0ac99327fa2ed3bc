// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "harr/policy.hpp"
#include "oracles.hpp"

namespace {

using harr::CandidatePool;
using harr::RankedAction;

CandidatePool make_pool(std::vector<int> ids, std::vector<double> scores) { return {std::move(ids), std::move(scores)}; }

CandidatePool random_pool(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CandidatePool p;
  for (std::size_t i = 0; i < n; ++i) {
    p.ids.push_back(static_cast<int>(10 * i + 3));
    p.scores.push_back(u(rng));
  }
  return p;
}

// Exact probability by the oracle, keyed by document ids.
std::map<std::vector<int>, double> oracle_probs(const CandidatePool& pool, std::size_t k, double tau) {
  std::map<std::vector<int>, double> out;
  for (const auto& [pos, p] : oracle::pl_enumerate(pool.scores, k, tau)) {
    std::vector<int> ids;
    for (auto i : pos) ids.push_back(pool.ids[i]);
    out[ids] = p;
  }
  return out;
}

TEST(PlSample, EqualScoresGiveUniformOrderedPairs) {
  const auto pool = make_pool({1, 2, 3}, {0.4, 0.4, 0.4});
  harr::Rng rng(1);
  std::map<std::vector<int>, int> counts;
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[harr::pl_sample(pool, 2, 0.05, rng).doc_ids];
  ASSERT_EQ(counts.size(), 6u);
  const double p = 1.0 / 6.0;
  const double sigma = std::sqrt(p * (1 - p) / n);
  for (const auto& [ids, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, p, 4 * sigma);
}

TEST(PlSample, SingleDrawIsSoftmax) {
  const auto pool = make_pool({5, 6, 7}, {0.1, 0.3, -0.2});
  const double tau = 0.5;
  const auto probs = harr::enumerate_action_probs(pool, 1, tau);
  double z = 0.0;
  for (double s : pool.scores) z += std::exp(s / tau);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(probs.at({pool.ids[i]}), std::exp(pool.scores[i] / tau) / z, 1e-15);
}

TEST(PlSample, TwoDocumentProduct) {
  // softmax (0.8, 0.2) at tau = 1: the second pick is forced.
  const auto pool = make_pool({0, 1}, {std::log(4.0), 0.0});
  const auto probs = harr::enumerate_action_probs(pool, 2, 1.0);
  EXPECT_NEAR(probs.at({0, 1}), 0.8, 1e-15);
  EXPECT_NEAR(probs.at({1, 0}), 0.2, 1e-15);
}

TEST(PlSample, RecordsLogProbsAndIsSeedDetermined) {
  std::mt19937_64 g(2);
  const auto pool = random_pool(g, 6);
  harr::Rng a(42), b(42);
  const auto x = harr::pl_sample(pool, 3, 0.3, a);
  const auto y = harr::pl_sample(pool, 3, 0.3, b);
  EXPECT_EQ(x, y);
  EXPECT_DOUBLE_EQ(x.log_prob, x.position_log_probs[0] + x.position_log_probs[1] + x.position_log_probs[2]);
  std::set<int> distinct(x.doc_ids.begin(), x.doc_ids.end());
  EXPECT_EQ(distinct.size(), 3u);
}

TEST(PlSample, Errors) {
  const auto pool = make_pool({0, 1}, {0.0, 0.0});
  harr::Rng rng(1);
  EXPECT_THROW(harr::pl_sample(pool, 3, 0.05, rng), harr::InvalidArgument);
  EXPECT_THROW(harr::pl_sample(pool, 1, 0.0, rng), harr::InvalidArgument);
  EXPECT_THROW(harr::pl_sample(pool, 0, 0.05, rng), harr::InvalidArgument);
}

TEST(PlLogProb, MatchesSamplerAtSamplingParameters) {
  // State and index chosen so pool scores come from the differentiable path.
  std::mt19937_64 g(3);
  std::normal_distribution<double> z;
  harr::EmbeddingIndex idx{harr::Array(8, 4)};
  for (double& x : idx.matrix.data()) x = z(g);
  harr::Array state = harr::Array::row({0.5, -0.5, 0.5, 0.5});
  const auto pool = harr::top_k_exact(idx, state.data(), 6);
  harr::Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = harr::pl_sample(pool, 3, 0.05, rng);
    harr::Graph graph;
    const auto s = graph.leaf(state, false);
    const double lp = graph.value(harr::pl_log_prob(pool, s, idx, a, 0.05, graph))[0];
    EXPECT_NEAR(lp, a.log_prob, 1e-10);
  }
}

TEST(PlLogProb, UniformScores) {
  const auto pool = make_pool({4, 5, 6}, {0.2, 0.2, 0.2});
  EXPECT_NEAR(harr::pl_log_prob_values(pool, pool.scores, {6, 4}, 0.05), std::log(1.0 / 6.0), 1e-12);
}

TEST(PlLogProb, MissingOrRepeatedDocument) {
  const auto pool = make_pool({4, 5, 6}, {0.2, 0.1, 0.0});
  EXPECT_THROW(harr::pl_log_prob_values(pool, pool.scores, {7}, 1.0), harr::InvalidArgument);
  EXPECT_THROW(harr::pl_log_prob_values(pool, pool.scores, {4, 4}, 1.0), harr::InvalidArgument);
}

TEST(PlLogProb, ExponentiatedSumOverAllListsIsOne) {
  std::mt19937_64 g(4);
  const auto pool = random_pool(g, 5);
  const auto exact = oracle_probs(pool, 3, 0.7);
  ASSERT_EQ(exact.size(), 60u);
  double total = 0.0;
  for (const auto& [ids, p] : exact) {
    const double lp = harr::pl_log_prob_values(pool, pool.scores, ids, 0.7);
    EXPECT_NEAR(std::exp(lp), p, 1e-12);
    total += std::exp(lp);
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(DeterministicRank, TieBreakByLowerId) {
  const auto pool = make_pool({7, 2, 5}, {0.9, 0.5, 0.5});
  EXPECT_EQ(harr::deterministic_rank(pool, 2).doc_ids, (std::vector<int>{7, 2}));
  EXPECT_EQ(harr::deterministic_rank(pool, 3).doc_ids, (std::vector<int>{7, 2, 5}));
  EXPECT_TRUE(harr::deterministic_rank(pool, 2).position_log_probs.empty());
  EXPECT_THROW(harr::deterministic_rank(pool, 4), harr::InvalidArgument);
}

TEST(DeterministicRank, IsModeOfEnumeration) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pool = random_pool(g, 5);
    const auto probs = oracle_probs(pool, 2, 1.0);
    auto best = std::max_element(probs.begin(), probs.end(), [](auto& a, auto& b) { return a.second < b.second; });
    EXPECT_EQ(harr::deterministic_rank(pool, 2).doc_ids, best->first);
  }
}

TEST(Enumerate, SumsToOneAndMatchesOracle) {
  std::mt19937_64 g(6);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::size_t k = 1; k <= std::min<std::size_t>(3, n); ++k) {
      const auto pool = random_pool(g, n);
      const auto probs = harr::enumerate_action_probs(pool, k, 0.05);
      const auto want = oracle_probs(pool, k, 0.05);
      ASSERT_EQ(probs.size(), want.size());
      double total = 0.0;
      for (const auto& [ids, p] : probs) {
        EXPECT_NEAR(p, want.at(ids), 1e-12);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Enumerate, UniformForEqualScoresAndPoolGuard) {
  const auto pool = make_pool({0, 1, 2, 3}, {0.0, 0.0, 0.0, 0.0});
  const auto probs = harr::enumerate_action_probs(pool, 2, 1.0);
  EXPECT_EQ(probs.size(), 12u);
  for (const auto& [ids, p] : probs) EXPECT_NEAR(p, 1.0 / 12.0, 1e-15);
  std::mt19937_64 g(7);
  EXPECT_THROW(harr::enumerate_action_probs(random_pool(g, 9), 1, 1.0), harr::InvalidArgument);
}

TEST(Enumerate, SamplingFrequenciesWithinBinomialBounds) {
  std::mt19937_64 g(8);
  const auto pool = random_pool(g, 5);
  const double tau = 0.5;
  const auto exact = oracle_probs(pool, 2, tau);
  harr::Rng rng(123);
  std::map<std::vector<int>, int> counts;
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[harr::pl_sample(pool, 2, tau, rng).doc_ids];
  int inside = 0;
  for (const auto& [ids, p] : exact) {
    const double sigma = std::sqrt(n * p * (1 - p));
    if (std::abs(counts[ids] - n * p) <= 3 * sigma) ++inside;
  }
  EXPECT_GE(inside, 19);  // 95% of 20 lists
}

// ---- properties

TEST(Properties, MaskedExtraMemberChangesNothing) {
  const std::vector<double> base{0.3, -0.1, 0.8};
  const std::vector<double> extended{0.3, -0.1, 0.8, 5.0};
  const auto a = harr::masked_log_softmax_values(base, {false, false, false}, 0.05);
  const auto b = harr::masked_log_softmax_values(extended, {false, false, false, true}, 0.05);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Properties, TemperatureHomogeneity) {
  std::mt19937_64 g(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto pool = random_pool(g, 5);
    const auto p1 = harr::enumerate_action_probs(pool, 3, 0.05);
    for (double& s : pool.scores) s *= 3.0;
    const auto p2 = harr::enumerate_action_probs(pool, 3, 0.15);
    for (const auto& [ids, p] : p1) EXPECT_NEAR(p, p2.at(ids), 1e-12);
  }
}

TEST(Properties, LogProbMonotoneInSelectedScore) {
  std::mt19937_64 g(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto pool = random_pool(g, 5);
    const std::vector<int> action{pool.ids[2], pool.ids[0]};
    const double before = harr::pl_log_prob_values(pool, pool.scores, action, 0.05);
    pool.scores[2] += 0.01;
    EXPECT_GT(harr::pl_log_prob_values(pool, pool.scores, action, 0.05), before);
  }
}

TEST(Properties, LowTemperatureConcentrates) {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(-1.0, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    CandidatePool pool;
    pool.ids = {0, 1, 2, 3, 4, 5};
    pool.scores = {0.5};
    for (int i = 1; i < 6; ++i) pool.scores.push_back(std::min(u(g), 0.0));
    const auto probs = harr::enumerate_action_probs(pool, 1, 0.05);
    EXPECT_GE(probs.at({0}), 0.9999);
  }
}

}  // namespace
