// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen tiny retrieval instance shared by the GRPO tests and the
// acceptance gate.

#ifndef HARR_TESTS_TINY_INSTANCE_HPP_
#define HARR_TESTS_TINY_INSTANCE_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "harr/grpo.hpp"

namespace tiny {

using harr::Array;
using harr::PolicyParameters;
using harr::RolloutGroup;
using harr::TrainConfig;

// V=20, d=8, pool 4, k=2, G=2, one hop.
struct Tiny {
  harr::Vocabulary vocab;
  std::vector<harr::Document> docs;
  PolicyParameters params;
  harr::EmbeddingIndex index;
  TrainConfig cfg;

  Tiny() : vocab(make_vocab()), params(harr::init_params(21, vocab.size(), 8, 8)) {
    for (int i = 0; i < 10; ++i) {
      docs.push_back({i, vocab.token(static_cast<std::size_t>(1 + i)) + " " +
                             vocab.token(static_cast<std::size_t>(1 + (i * 7 + 3) % 19))});
    }
    index = harr::build_index(harr::DocumentEncoder(harr::init_params(22, vocab.size(), 8, 8)), vocab, docs);
    cfg.group_size = 2;
    cfg.top_k = 2;
    cfg.pool_size = 4;
    cfg.temperature = 0.5;
  }

  static harr::Vocabulary make_vocab() {
    std::vector<std::string> t;
    for (int i = 0; i < 19; ++i) t.push_back("w" + std::to_string(i));
    return harr::Vocabulary::from_tokens(t);
  }

  harr::RetrievalContext ctx() const { return {vocab, docs, index}; }

  // Independent value path: direct PL product over pool scores.
  double log_prob(const PolicyParameters& p, const harr::TrajectoryStep& s) const {
    const Array st = harr::encode_text(p, vocab, s.state_text);
    std::vector<double> scores;
    for (int id : s.pool.ids) {
      double dot = 0.0;
      for (std::size_t c = 0; c < st.size(); ++c) dot += st[c] * index.matrix(static_cast<std::size_t>(id), c);
      scores.push_back(dot);
    }
    std::vector<bool> used(scores.size(), false);
    double lp = 0.0;
    for (int id : s.action.doc_ids) {
      const auto j = static_cast<std::size_t>(std::find(s.pool.ids.begin(), s.pool.ids.end(), id) - s.pool.ids.begin());
      double z = 0.0;
      for (std::size_t i = 0; i < scores.size(); ++i)
        if (!used[i]) z += std::exp(scores[i] / cfg.temperature);
      lp += scores[j] / cfg.temperature - std::log(z);
      used[j] = true;
    }
    return lp;
  }

  double objective(const PolicyParameters& p, const std::vector<RolloutGroup>& groups) const {
    double total = 0.0;
    std::size_t active = 0;
    for (const auto& g : groups) {
      if (g.degenerate) continue;
      ++active;
      double group = 0.0;
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const auto& tr = g.trajectories[i];
        double sum = 0.0;
        for (const auto& s : tr.steps) {
          const double rho = std::exp(log_prob(p, s) - s.old_log_prob);
          const double a = g.advantages[i];
          sum += std::min(rho * a, std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a);
        }
        group += sum / static_cast<double>(tr.steps.size());
      }
      total += group / static_cast<double>(g.trajectories.size());
    }
    return total / static_cast<double>(active);
  }

  // Two groups of two one-hop trajectories sampled under `params`.
  std::vector<RolloutGroup> groups(std::uint64_t seed) const {
    std::vector<RolloutGroup> out;
    harr::Rng rng(seed);
    const char* texts[2][2] = {{"w1 w4 w4", "w2 w9"}, {"w3 w17 w5", "w11"}};
    for (int gi = 0; gi < 2; ++gi) {
      RolloutGroup g;
      g.task_id = static_cast<std::size_t>(gi);
      for (int i = 0; i < 2; ++i) {
        harr::TrajectoryStep s;
        s.state_text = texts[gi][i];
        const Array st = harr::encode_text(params, vocab, s.state_text);
        s.pool = harr::top_k_exact(index, st.data(), cfg.pool_size);
        s.action = harr::pl_sample(s.pool, cfg.top_k, cfg.temperature, rng);
        s.old_log_prob = s.action.log_prob;
        harr::Trajectory t;
        t.steps.push_back(s);
        t.reward = i == 0 ? 1.0 : 0.0;
        g.trajectories.push_back(t);
      }
      const auto adv = harr::advantages(std::vector<double>{1.0, 0.0});
      g.advantages = adv.values;
      out.push_back(g);
    }
    return out;
  }
};

inline std::vector<double> flatten(const PolicyParameters& p) {
  std::vector<double> x(p.token_embeddings.data().begin(), p.token_embeddings.data().end());
  x.insert(x.end(), p.projection.data().begin(), p.projection.data().end());
  return x;
}

inline PolicyParameters unflatten(const PolicyParameters& shape, const std::vector<double>& x) {
  PolicyParameters p = shape;
  std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(p.token_embeddings.size()), p.token_embeddings.data().begin());
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(p.token_embeddings.size()), x.end(), p.projection.data().begin());
  return p;
}

struct LossEval {
  double loss;
  double clip_fraction;
  std::vector<double> grad;
};

inline LossEval ad_loss(const Tiny& t, const PolicyParameters& p, const std::vector<RolloutGroup>& groups) {
  harr::Graph g;
  const auto pv = harr::bind_params(g, p, true);
  const auto ctx = t.ctx();
  const auto lo = harr::grpo_loss(pv, groups, t.cfg, ctx, g);
  const double loss = g.value(lo.loss)[0];
  auto grads = g.backward(lo.loss);
  std::vector<double> flat(grads.at(pv.token_embeddings.id).data().begin(), grads.at(pv.token_embeddings.id).data().end());
  flat.insert(flat.end(), grads.at(pv.projection.id).data().begin(), grads.at(pv.projection.id).data().end());
  return {loss, lo.clip_fraction, flat};
}

}  // namespace tiny

#endif  // HARR_TESTS_TINY_INSTANCE_HPP_
