// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "harr/reward.hpp"

namespace {

using Tokens = std::vector<std::string>;

TEST(NormalizeAnswer, Examples) {
  EXPECT_EQ(harr::normalize_answer("The Blue Car!"), (Tokens{"blue", "car"}));
  EXPECT_EQ(harr::normalize_answer("paris"), (Tokens{"paris"}));
  EXPECT_TRUE(harr::normalize_answer("").empty());
  EXPECT_EQ(harr::normalize_answer("  An apple,  a  PEAR. "), (Tokens{"apple", "pear"}));
  // Articles only match whole tokens.
  EXPECT_EQ(harr::normalize_answer("theatre anchor"), (Tokens{"theatre", "anchor"}));
}

TEST(TokenF1, Examples) {
  EXPECT_DOUBLE_EQ(harr::token_f1("paris", "paris"), 1.0);
  EXPECT_DOUBLE_EQ(harr::token_f1("blue car", "red car"), 0.5);
  EXPECT_DOUBLE_EQ(harr::token_f1("the blue car", "blue car"), 1.0);
  EXPECT_DOUBLE_EQ(harr::token_f1("", ""), 1.0);
  EXPECT_DOUBLE_EQ(harr::token_f1("", "paris"), 0.0);
  EXPECT_DOUBLE_EQ(harr::token_f1("the", "paris"), 0.0);
}

TEST(TokenF1, SetAndMultisetDiffer) {
  // Sets {x} vs {x, y}: 2*1/(1+2). Multiset: one shared x, precision 1/2, recall 1/2.
  EXPECT_DOUBLE_EQ(harr::token_f1("x x", "x y"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(harr::token_f1("x x", "x y", harr::F1Variant::kTokenMultiset), 0.5);
  EXPECT_DOUBLE_EQ(harr::token_f1("blue car", "red car", harr::F1Variant::kTokenMultiset), 0.5);
}

TEST(ExactMatch, Examples) {
  EXPECT_EQ(harr::exact_match("e17", "e17"), 1);
  EXPECT_EQ(harr::exact_match("blue car", "car blue"), 0);
  EXPECT_EQ(harr::exact_match("The Paris", "paris"), 1);
}

TEST(TerminalReward, Examples) {
  EXPECT_EQ(harr::terminal_reward("paris", "paris", 1, 3), 0.0);
  EXPECT_EQ(harr::terminal_reward("paris", "paris", 3, 3), 1.0);
  EXPECT_EQ(harr::terminal_reward("london", "paris", 3, 3), 0.0);
}

// ---- properties

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"a", "the", "x", "y", "z", "Paris", "car!", "blue", "an"};
  std::uniform_int_distribution<std::size_t> len(0, 5), pick(0, words.size() - 1);
  std::string s;
  for (std::size_t i = len(rng); i > 0; --i) s += words[pick(rng)] + " ";
  return s;
}

TEST(Properties, F1SymmetricBoundedAndOneIffSetsEqual) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto y = random_text(rng);
    const auto g = random_text(rng);
    const double f = harr::token_f1(y, g);
    EXPECT_DOUBLE_EQ(f, harr::token_f1(g, y));
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    const auto ny = harr::normalize_answer(y);
    const auto ng = harr::normalize_answer(g);
    const bool sets_equal = std::set<std::string>(ny.begin(), ny.end()) == std::set<std::string>(ng.begin(), ng.end());
    EXPECT_EQ(f == 1.0, sets_equal) << y << " | " << g;
    if (harr::exact_match(y, g) == 1) {
      EXPECT_EQ(f, 1.0);
    }
  }
}

TEST(Properties, NonFinalRewardIsZero) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto y = random_text(rng);
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(harr::terminal_reward(y, y, t, 4), 0.0);
  }
}

}  // namespace
