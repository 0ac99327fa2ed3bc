// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "harr/encoder.hpp"

namespace harr {

/// SQuAD-style: lowercase, strip ASCII punctuation, drop articles, split on whitespace.
inline std::vector<std::string> normalize_answer(std::string_view text) {
  std::string s = to_lower(text);
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return std::ispunct(static_cast<unsigned char>(c)); }),
          s.end());
  std::vector<std::string> tokens;
  for (auto& w : split_whitespace(s)) {
    if (w == "a" || w == "an" || w == "the") continue;
    tokens.push_back(std::move(w));
  }
  return tokens;
}

enum class F1Variant {
  kTokenSet,       // overlap of distinct tokens
  kTokenMultiset,  // SQuAD counting
};

inline double token_f1(std::string_view prediction, std::string_view gold, F1Variant variant = F1Variant::kTokenSet) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  if (variant == F1Variant::kTokenSet) {
    const std::set<std::string> ps(p.begin(), p.end());
    const std::set<std::string> gs(g.begin(), g.end());
    std::size_t common = 0;
    for (const auto& t : ps) common += gs.count(t);
    return 2.0 * static_cast<double>(common) / static_cast<double>(ps.size() + gs.size());
  }
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t same = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double precision = static_cast<double>(same) / static_cast<double>(p.size());
  const double recall = static_cast<double>(same) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline int exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1 : 0;
}

/// Sparse terminal reward: F1 at the final step t == T, zero before.
inline double terminal_reward(std::string_view answer, std::string_view gold, std::size_t t, std::size_t horizon,
                              F1Variant variant = F1Variant::kTokenSet) {
  return t == horizon ? token_f1(answer, gold, variant) : 0.0;
}

}  // namespace harr
