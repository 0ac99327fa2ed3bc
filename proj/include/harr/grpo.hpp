// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative policy optimization of the retriever.
//
// Per training step: sample a batch of questions, roll out G episodes per
// question under the current parameters (which become theta_old), normalize
// terminal rewards within each group, and take one AdamW step on the clipped
// surrogate. No critic and no KL term.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "harr/autodiff.hpp"
#include "harr/corpus.hpp"
#include "harr/encoder.hpp"
#include "harr/env.hpp"
#include "harr/error.hpp"
#include "harr/policy.hpp"
#include "harr/reward.hpp"
#include "harr/rng.hpp"

namespace harr {

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double temperature = 0.05;
  std::size_t top_k = 3;
  std::size_t pool_size = 30;
  std::size_t batch_size = 16;
  std::size_t steps = 100;
  AdamWConfig adamw;
  StateRendering rendering;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  F1Variant f1 = F1Variant::kTokenSet;
};

/// Read-only retrieval resources shared by every episode.
struct RetrievalContext {
  const Vocabulary& vocab;
  std::span<const Document> docs;
  const EmbeddingIndex& index;
};

struct TrajectoryStep {
  std::string state_text;
  CandidatePool pool;
  RankedAction action;
  double old_log_prob = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  double reward = 0.0;
  int exact_match = 0;
  std::string answer;
  std::size_t task_id = 0;
  std::uint64_t stream = 0;
};

struct RolloutGroup {
  std::size_t task_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;
  bool degenerate = false;
};

/// Per-hop record for human-readable traces.
struct HopTrace {
  std::size_t hop = 0;
  std::string state_text;
  CandidatePool pool;
  RankedAction action;
  std::string observation;
};

inline std::string render_for(const EpisodeState& s, const StateRendering& rendering) {
  return render_state(std::span<const HistoryEntry>(s.history), s.current_query, rendering);
}

/// Runs one episode. With `rng` the policy samples (training); without it the
/// ranking is deterministic top-k (inference).
inline Trajectory run_episode(const PolicyParameters& params, const RetrievalContext& ctx, const Backend& backend,
                              const ChainTask& task, const TrainConfig& cfg, Rng* rng,
                              std::vector<HopTrace>* trace = nullptr) {
  if (backend.k() != cfg.top_k) throw ConfigError("backend k differs from the retrieval top-k");
  auto session = backend.open(task);
  EpisodeState state = session->reset();
  Trajectory traj;
  while (!state.terminal) {
    TrajectoryStep step;
    step.state_text = render_for(state, cfg.rendering);
    const Array s = encode_text(params, ctx.vocab, step.state_text);
    step.pool = top_k_exact(ctx.index, s.data(), cfg.pool_size);
    step.action = rng ? pl_sample(step.pool, cfg.top_k, cfg.temperature, *rng) : deterministic_rank(step.pool, cfg.top_k);
    step.old_log_prob = step.action.log_prob;
    std::vector<RetrievedDoc> retrieved;
    for (int id : step.action.doc_ids) retrieved.push_back({id, ctx.docs[static_cast<std::size_t>(id)].text});
    const std::size_t hop = state.hop;
    const Transition tr = session->step(state, retrieved);
    if (trace) trace->push_back({hop, step.state_text, step.pool, step.action, tr.observation});
    traj.steps.push_back(std::move(step));
  }
  traj.answer = state.answer;
  traj.reward = terminal_reward(state.answer, task.answer, traj.steps.size(), traj.steps.size(), cfg.f1);
  traj.exact_match = exact_match(state.answer, task.answer);
  return traj;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome is schedule-independent.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;
};

inline constexpr double kDegenerateStd = 1e-8;

/// A_i = (r_i - mean) / std with the population std. Zero-variance groups get
/// all-zero advantages and are flagged degenerate.
inline Advantages advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidArgument("advantages: group size must be >= 2");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  Advantages out{std::vector<double>(rewards.size(), 0.0), sd < kDegenerateStd};
  if (!out.degenerate)
    for (std::size_t i = 0; i < rewards.size(); ++i) out.values[i] = (rewards[i] - mean) / sd;
  return out;
}

inline std::uint64_t episode_stream(std::uint64_t seed, std::uint64_t step, std::size_t task_id, std::size_t member) {
  return stream_id({seed, step, static_cast<std::uint64_t>(task_id), static_cast<std::uint64_t>(member)});
}

/// G sampled episodes for one question under a fixed parameter snapshot.
inline RolloutGroup rollout_group(const PolicyParameters& params, const RetrievalContext& ctx, const Backend& backend,
                                  const ChainTask& task, std::size_t task_id, const TrainConfig& cfg,
                                  std::uint64_t step) {
  RolloutGroup group;
  group.task_id = task_id;
  for (std::size_t m = 0; m < cfg.group_size; ++m) {
    const auto stream = episode_stream(cfg.seed, step, task_id, m);
    Rng rng(stream);
    Trajectory t;
    try {
      t = run_episode(params, ctx, backend, task, cfg, &rng);
    } catch (const BackendError& e) {
      throw BackendError("task " + std::to_string(task_id) + " member " + std::to_string(m) + ": " + e.what());
    }
    t.task_id = task_id;
    t.stream = stream;
    group.trajectories.push_back(std::move(t));
  }
  std::vector<double> rewards;
  for (const auto& t : group.trajectories) rewards.push_back(t.reward);
  if (cfg.group_size >= 2) {
    auto adv = advantages(rewards);
    group.advantages = std::move(adv.values);
    group.degenerate = adv.degenerate;
  } else {
    group.advantages.assign(cfg.group_size, 0.0);
    group.degenerate = true;
  }
  return group;
}

struct LossOutput {
  Var loss;
  bool skip = false;            // every group degenerate; no update should be taken
  double objective = 0.0;       // J (the loss is -J)
  double clip_fraction = 0.0;   // share of (i,t) terms where the clipped branch binds
  std::size_t active_groups = 0;
};

/// -J for the clipped group-relative surrogate
///   J = mean_groups (1/G) sum_i (1/|tau_i|) sum_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i),
/// rho = exp(log pi_theta(a|s) - log pi_old(a|s)), recomputed against each step's stored pool.
inline LossOutput grpo_loss(const ParamVars& params, std::span<const RolloutGroup> groups, const TrainConfig& cfg,
                            const RetrievalContext& ctx, Graph& g) {
  LossOutput out;
  std::vector<Var> group_terms;
  std::size_t terms = 0;
  std::size_t clipped = 0;
  for (const auto& group : groups) {
    if (group.degenerate) continue;
    const double inv_g = 1.0 / static_cast<double>(group.trajectories.size());
    std::vector<Var> traj_terms;
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      const double adv = group.advantages[i];
      std::vector<Var> step_terms;
      for (const auto& step : traj.steps) {
        const Var state = encode_state(params, ctx.vocab, step.state_text, g);
        const Var lp = pl_log_prob(step.pool, state, ctx.index, step.action, cfg.temperature, g);
        const double rho = std::exp(g.value(lp)[0] - step.old_log_prob);
        if (rho * adv > std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv) ++clipped;
        ++terms;
        step_terms.push_back(g.clipped_surrogate(lp, step.old_log_prob, adv, cfg.clip_eps));
      }
      traj_terms.push_back(g.scale(g.sum(step_terms), inv_g / static_cast<double>(traj.steps.size())));
    }
    group_terms.push_back(g.sum(traj_terms));
  }
  out.active_groups = group_terms.size();
  if (group_terms.empty()) {
    out.skip = true;
    out.loss = g.leaf(Array::scalar(0.0), false);
    return out;
  }
  const Var objective = g.scale(g.sum(group_terms), 1.0 / static_cast<double>(group_terms.size()));
  out.objective = g.value(objective)[0];
  out.loss = g.scale(objective, -1.0);
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(terms);
  return out;
}

/// Global L2 norm over all parameter gradients.
inline double grad_norm(std::span<const Array> grads) {
  double s = 0.0;
  for (const auto& a : grads)
    for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

struct AdamWState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

inline std::array<Array*, 2> tensors(PolicyParameters& p) { return {&p.token_embeddings, &p.projection}; }
inline std::array<const Array*, 2> tensors(const PolicyParameters& p) { return {&p.token_embeddings, &p.projection}; }

inline AdamWState init_adamw(const PolicyParameters& p) {
  AdamWState s;
  for (const Array* t : tensors(p)) {
    s.m.emplace_back(t->rows(), t->cols());
    s.v.emplace_back(t->rows(), t->cols());
  }
  return s;
}

/// AdamW with bias correction and decoupled weight decay (applied as
/// w <- w (1 - lr wd) before the adaptive step). Constant learning rate.
inline void adamw_step(std::span<Array* const> params, std::span<const Array> grads, AdamWState& state,
                       const AdamWConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidArgument("adamw_step: tensor count mismatch");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Array& g = grads[t];
    if (params[t]->rows() != g.rows() || params[t]->cols() != g.cols() || state.m[t].size() != g.size() ||
        state.v[t].size() != g.size()) {
      throw InvalidArgument("adamw_step: shape mismatch on tensor " + std::to_string(t));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Array& w = *params[t];
    Array& m = state.m[t];
    Array& v = state.v[t];
    const Array& g = grads[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - cfg.learning_rate * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

struct StepMetrics {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double clip_fraction = 0.0;
  double degenerate_fraction = 0.0;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

inline nlohmann::json to_json(const StepMetrics& m) {
  return nlohmann::json{{"step", m.step},
                        {"mean_reward", m.mean_reward},
                        {"loss", m.loss},
                        {"grad_norm", m.grad_norm},
                        {"clip_fraction", m.clip_fraction},
                        {"degenerate_fraction", m.degenerate_fraction}};
}

inline StepMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("step").get<std::uint64_t>(),  j.at("mean_reward").get<double>(),
          j.at("loss").get<double>(),         j.at("grad_norm").get<double>(),
          j.at("clip_fraction").get<double>(), j.at("degenerate_fraction").get<double>()};
}

/// Everything needed to continue training bit-exactly.
struct TrainerState {
  PolicyParameters params;
  AdamWState optimizer;
  std::uint64_t step = 0;
  Rng rng;

  static TrainerState initial(PolicyParameters params, std::uint64_t seed) {
    TrainerState s{params, init_adamw(params), 0, Rng(stream_id({seed, 0x6261746368ULL}))};
    return s;
  }
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const RetrievalContext& ctx, const Backend& backend, std::vector<ChainTask> tasks,
          TrainerState state)
      : cfg_(std::move(cfg)), ctx_(ctx), backend_(backend), tasks_(std::move(tasks)), state_(std::move(state)) {
    if (tasks_.empty()) throw TrainingError("no training tasks");
    if (cfg_.group_size < 2) throw ConfigError("group size must be >= 2");
  }

  /// One on-policy update: rollouts under the current snapshot, then one optimizer step.
  StepMetrics step() {
    std::vector<std::size_t> order(tasks_.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, state_.rng);
    order.resize(std::min(cfg_.batch_size, order.size()));

    const std::uint64_t step_no = state_.step + 1;
    std::vector<RolloutGroup> groups(order.size());
    const PolicyParameters& snapshot = state_.params;
    parallel_for(order.size(), cfg_.threads, [&](std::size_t b) {
      groups[b] = rollout_group(snapshot, ctx_, backend_, tasks_[order[b]], order[b], cfg_, step_no);
    });

    StepMetrics m;
    m.step = step_no;
    double reward_sum = 0.0;
    std::size_t episodes = 0;
    std::size_t degenerate = 0;
    for (const auto& g : groups) {
      degenerate += g.degenerate ? 1 : 0;
      for (const auto& t : g.trajectories) {
        reward_sum += t.reward;
        ++episodes;
      }
    }
    m.mean_reward = reward_sum / static_cast<double>(episodes);
    m.degenerate_fraction = static_cast<double>(degenerate) / static_cast<double>(groups.size());

    Graph graph;
    const ParamVars pv = bind_params(graph, state_.params, true);
    const LossOutput lo = grpo_loss(pv, groups, cfg_, ctx_, graph);
    if (!lo.skip) {
      m.loss = graph.value(lo.loss)[0];
      if (!std::isfinite(m.loss)) throw TrainingError("non-finite loss at step " + std::to_string(step_no));
      m.clip_fraction = lo.clip_fraction;
      auto grads = graph.backward(lo.loss);
      const std::array<Array, 2> g{std::move(grads.at(pv.token_embeddings.id)), std::move(grads.at(pv.projection.id))};
      m.grad_norm = grad_norm(g);
      if (!std::isfinite(m.grad_norm)) throw TrainingError("non-finite gradient at step " + std::to_string(step_no));
      const auto ps = tensors(state_.params);
      adamw_step(ps, g, state_.optimizer, cfg_.adamw);
    }
    state_.step = step_no;
    return m;
  }

  /// Steps until `total_steps` have been taken in total (resumes count).
  void run(std::uint64_t total_steps, const std::function<void(const StepMetrics&, const TrainerState&)>& on_step) {
    while (state_.step < total_steps) {
      const StepMetrics m = step();
      if (on_step) on_step(m, state_);
    }
  }

  const TrainerState& state() const noexcept { return state_; }
  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  TrainConfig cfg_;
  RetrievalContext ctx_;
  const Backend& backend_;
  std::vector<ChainTask> tasks_;
  TrainerState state_;
};

}  // namespace harr
