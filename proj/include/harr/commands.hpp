// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The command layer behind the CLI. Each command is a function of the run
// configuration and the files it names; outputs go to files under paths.dir
// and a short report is written to `log`.

#include <filesystem>
#include <iomanip>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "harr/checkpoint.hpp"
#include "harr/config.hpp"
#include "harr/corpus.hpp"
#include "harr/encoder.hpp"
#include "harr/env.hpp"
#include "harr/grpo.hpp"
#include "harr/http_llm.hpp"
#include "harr/metrics.hpp"
#include "harr/policy.hpp"
#include "harr/reward.hpp"

namespace harr {

inline std::uint64_t init_seed(std::uint64_t seed) { return stream_id({seed, 0x696e6974ULL}); }

inline PolicyParameters initial_params(const RunConfig& cfg, std::size_t vocab_size) {
  return init_params(init_seed(cfg.seed), vocab_size, cfg.encoder.embed_dim, cfg.encoder.dim);
}

inline std::uint64_t file_hash(const std::string& path) { return fnv1a64(Checkpoint::read_file_bytes(path)); }

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------- gen-env

struct GenEnvReport {
  std::size_t docs = 0;
  std::size_t train = 0;
  std::size_t eval = 0;
  std::size_t vocab = 0;
  std::string config_hash;
};

inline GenEnvReport cmd_gen_env(const RunConfig& cfg, std::ostream& log) {
  const auto env = chainqa_generate(cfg.env, cfg.seed);
  const auto vocab = build_vocabulary(env);
  ensure_dir(cfg.paths.dir);
  save_corpus(cfg.paths.corpus_path(), env.docs);
  save_tasks(cfg.paths.train_tasks_path(), env.train);
  save_tasks(cfg.paths.eval_tasks_path(), env.eval);
  vocab.save(cfg.paths.vocab_path());

  GenEnvReport r{env.docs.size(), env.train.size(), env.eval.size(), vocab.size(), config_hash(cfg)};
  const nlohmann::json manifest{
      {"seed", cfg.seed},
      {"config_hash", r.config_hash},
      {"env", config_to_json(cfg).at("env")},
      {"counts", {{"docs", r.docs}, {"train", r.train}, {"eval", r.eval}, {"vocab", r.vocab}}},
      {"files",
       {{"corpus", hex64(file_hash(cfg.paths.corpus_path()))},
        {"train_tasks", hex64(file_hash(cfg.paths.train_tasks_path()))},
        {"eval_tasks", hex64(file_hash(cfg.paths.eval_tasks_path()))},
        {"vocab", hex64(file_hash(cfg.paths.vocab_path()))}}}};
  std::ofstream out(cfg.paths.manifest_path(), std::ios::binary);
  if (!out) throw IoError("cannot write " + cfg.paths.manifest_path());
  out << manifest.dump(2) << '\n';
  log << "gen-env: " << r.docs << " docs, " << r.train << " train / " << r.eval << " eval tasks, vocab " << r.vocab
      << " -> " << cfg.paths.dir << "\n";
  return r;
}

// ---------------------------------------------------------------- index

inline void save_index(const std::string& path, const PolicyParameters& snapshot, const EmbeddingIndex& index) {
  Checkpoint c;
  c.put_f64("doc_encoder.token_embeddings", snapshot.token_embeddings);
  c.put_f64("doc_encoder.projection", snapshot.projection);
  c.put_f64("index", index.matrix);
  c.save(path);
}

struct LoadedIndex {
  PolicyParameters snapshot;
  EmbeddingIndex index;
};

inline LoadedIndex load_index(const std::string& path) {
  const auto c = Checkpoint::load(path);
  return {{c.get_f64("doc_encoder.token_embeddings"), c.get_f64("doc_encoder.projection")}, {c.get_f64("index")}};
}

/// Hash of the embedding matrix payload alone.
inline std::string index_hash(const EmbeddingIndex& index) {
  Checkpoint c;
  c.put_f64("index", index.matrix);
  const auto& p = c.get("index").payload;
  return hex64(fnv1a64(p));
}

struct IndexReport {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::string hash;
  bool from_checkpoint = false;
};

/// Builds the frozen index. The document-encoder snapshot comes from the
/// training checkpoint when one exists, otherwise from the seed.
inline IndexReport cmd_index(const RunConfig& cfg, std::ostream& log) {
  const auto docs = load_corpus(cfg.paths.corpus_path());
  const auto vocab = Vocabulary::load(cfg.paths.vocab_path());
  IndexReport r;
  PolicyParameters snapshot;
  if (std::filesystem::exists(cfg.paths.checkpoint_path())) {
    const auto c = Checkpoint::load(cfg.paths.checkpoint_path());
    snapshot = {c.get_f64("doc_encoder.token_embeddings"), c.get_f64("doc_encoder.projection")};
    r.from_checkpoint = true;
  } else {
    snapshot = initial_params(cfg, vocab.size());
  }
  if (snapshot.vocab_size() != vocab.size()) {
    throw DataError("index: encoder snapshot has " + std::to_string(snapshot.vocab_size()) +
                    " token rows but the vocabulary has " + std::to_string(vocab.size()));
  }
  const DocumentEncoder encoder(snapshot);
  const auto index = build_index(encoder, vocab, docs);
  save_index(cfg.paths.index_path(), snapshot, index);
  r.rows = index.size();
  r.dim = index.dim();
  r.hash = index_hash(index);
  log << "index: " << r.rows << " x " << r.dim << " hash " << r.hash
      << (r.from_checkpoint ? " (snapshot from checkpoint)" : " (snapshot from seed)") << "\n";
  return r;
}

// ---------------------------------------------------------------- workspace

/// Everything a rollout needs, loaded from the files of a run directory.
struct Workspace {
  RunConfig cfg;
  std::vector<Document> docs;
  Vocabulary vocab;
  PolicyParameters initial;  // also the frozen document-encoder snapshot
  EmbeddingIndex index;
  std::unique_ptr<Backend> backend;

  RetrievalContext context() const { return {vocab, docs, index}; }
};

inline std::unique_ptr<Backend> make_backend(const RunConfig& cfg, std::span<const Document> docs) {
  if (cfg.backend == BackendKind::kHttp) {
    return std::make_unique<HttpLlmBackend>(cfg.http, cfg.train.top_k, cfg.env.horizon);
  }
  return std::make_unique<ScriptedChainQA>(docs, cfg.env.relations, cfg.env.aliasing, cfg.train.top_k,
                                           cfg.env.horizon);
}

inline std::unique_ptr<Workspace> open_workspace(const RunConfig& cfg) {
  auto ws = std::make_unique<Workspace>();
  ws->cfg = cfg;
  ws->docs = load_corpus(cfg.paths.corpus_path());
  ws->vocab = Vocabulary::load(cfg.paths.vocab_path());
  if (std::filesystem::exists(cfg.paths.index_path())) {
    auto li = load_index(cfg.paths.index_path());
    ws->initial = std::move(li.snapshot);
    ws->index = std::move(li.index);
  } else {
    ws->initial = initial_params(cfg, ws->vocab.size());
    ws->index = build_index(DocumentEncoder(ws->initial), ws->vocab, ws->docs);
  }
  if (ws->index.size() != ws->docs.size()) {
    throw DataError("index has " + std::to_string(ws->index.size()) + " rows but the corpus has " +
                    std::to_string(ws->docs.size()) + " documents; rerun index");
  }
  if (ws->initial.vocab_size() != ws->vocab.size()) throw DataError("index snapshot does not match the vocabulary");
  ws->backend = make_backend(cfg, ws->docs);
  return ws;
}

// ---------------------------------------------------------------- filter

struct FilterReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

/// Keeps tasks whose rewards vary across `filter_rollouts` samples of the
/// initial policy. With `filter_rollouts == 0` every task is kept.
inline std::vector<ChainTask> filter_tasks(const Workspace& ws, std::span<const ChainTask> tasks) {
  if (ws.cfg.filter_rollouts == 0) return {tasks.begin(), tasks.end()};
  TrainConfig tc = ws.cfg.train;
  tc.group_size = ws.cfg.filter_rollouts;
  std::vector<char> keep(tasks.size(), 0);
  const auto ctx = ws.context();
  parallel_for(tasks.size(), tc.threads, [&](std::size_t i) {
    keep[i] = rollout_group(ws.initial, ctx, *ws.backend, tasks[i], i, tc, 0).degenerate ? 0 : 1;
  });
  std::vector<ChainTask> kept;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (keep[i]) kept.push_back(tasks[i]);
  return kept;
}

inline FilterReport cmd_filter(const RunConfig& cfg, std::ostream& log) {
  const auto ws = open_workspace(cfg);
  const auto tasks = load_tasks(cfg.paths.train_tasks_path());
  const auto kept = filter_tasks(*ws, tasks);
  FilterReport r{kept.size(), tasks.size() - kept.size()};
  log << "filter: kept " << r.kept << ", dropped " << r.dropped << " of " << tasks.size() << "\n";
  if (kept.empty()) {
    throw DataError("filter: no task has non-zero reward variance under the initial policy; "
                    "try a larger pool, a different top_k or temperature, or another seed");
  }
  save_tasks(cfg.paths.filtered_tasks_path(), kept);
  return r;
}

// ---------------------------------------------------------------- checkpoints

inline Checkpoint make_checkpoint(const TrainerState& s, const PolicyParameters& frozen) {
  Checkpoint c;
  c.put_f64("params.token_embeddings", s.params.token_embeddings);
  c.put_f64("params.projection", s.params.projection);
  c.put_f64("doc_encoder.token_embeddings", frozen.token_embeddings);
  c.put_f64("doc_encoder.projection", frozen.projection);
  for (std::size_t i = 0; i < s.optimizer.m.size(); ++i) {
    c.put_f64("adamw.m." + std::to_string(i), s.optimizer.m[i]);
    c.put_f64("adamw.v." + std::to_string(i), s.optimizer.v[i]);
  }
  c.put_u64("adamw.step", s.optimizer.step);
  c.put_u64("step", s.step);
  c.put_bytes("rng", serialize_rng(s.rng));
  return c;
}

struct LoadedCheckpoint {
  TrainerState state;
  PolicyParameters frozen;
};

inline LoadedCheckpoint read_checkpoint(const Checkpoint& c) {
  LoadedCheckpoint out;
  out.state.params = {c.get_f64("params.token_embeddings"), c.get_f64("params.projection")};
  out.frozen = {c.get_f64("doc_encoder.token_embeddings"), c.get_f64("doc_encoder.projection")};
  for (std::size_t i = 0; c.contains("adamw.m." + std::to_string(i)); ++i) {
    out.state.optimizer.m.push_back(c.get_f64("adamw.m." + std::to_string(i)));
    out.state.optimizer.v.push_back(c.get_f64("adamw.v." + std::to_string(i)));
  }
  out.state.optimizer.step = c.get_u64("adamw.step");
  out.state.step = c.get_u64("step");
  out.state.rng = deserialize_rng(c.get_bytes("rng"));
  return out;
}

inline void save_trainer_checkpoint(const std::string& path, const TrainerState& s, const PolicyParameters& frozen) {
  make_checkpoint(s, frozen).save(path);
}

inline LoadedCheckpoint load_trainer_checkpoint(const std::string& path) {
  return read_checkpoint(Checkpoint::load(path));
}

// ---------------------------------------------------------------- train

struct TrainReport {
  std::uint64_t first_step = 0;  // steps already done when this run started
  std::uint64_t final_step = 0;
  std::vector<StepMetrics> metrics;  // only the steps taken by this call
};

/// Trains on the filtered task file. With `resume`, continues from the
/// checkpoint and keeps the first `step` records of the metrics file.
inline TrainReport cmd_train(const RunConfig& cfg, bool resume, std::ostream& log) {
  if (!cfg.ablation.rl) {
    throw ConfigError("train: ablation.rl is false, which means evaluation with frozen parameters; run eval instead");
  }
  const auto ws = open_workspace(cfg);
  if (!std::filesystem::exists(cfg.paths.filtered_tasks_path())) {
    throw IoError("train: " + cfg.paths.filtered_tasks_path() + " not found; run filter first");
  }
  auto tasks = load_tasks(cfg.paths.filtered_tasks_path());

  TrainerState state = TrainerState::initial(ws->initial, cfg.seed);
  std::vector<std::string> kept_lines;
  if (resume && std::filesystem::exists(cfg.paths.checkpoint_path())) {
    auto lc = load_trainer_checkpoint(cfg.paths.checkpoint_path());
    if (!(lc.frozen == ws->initial)) throw DataError("train: checkpoint was made with a different document encoder");
    state = std::move(lc.state);
    std::ifstream in(cfg.paths.metrics_path());
    std::string line;
    while (kept_lines.size() < state.step && std::getline(in, line))
      if (!line.empty()) kept_lines.push_back(line);
    if (kept_lines.size() != state.step) throw DataError("train: metrics file is shorter than the checkpoint step");
  }

  {
    std::ofstream out(cfg.paths.metrics_path(), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + cfg.paths.metrics_path());
    for (const auto& l : kept_lines) out << l << '\n';
  }
  JsonlWriter metrics(cfg.paths.metrics_path(), true);

  TrainReport r;
  r.first_step = state.step;
  Trainer trainer(cfg.train, ws->context(), *ws->backend, std::move(tasks), std::move(state));
  trainer.run(cfg.train.steps, [&](const StepMetrics& m, const TrainerState& s) {
    metrics.write(to_json(m));
    r.metrics.push_back(m);
    if (cfg.checkpoint_interval > 0 && s.step % cfg.checkpoint_interval == 0) {
      save_trainer_checkpoint(cfg.paths.checkpoint_path(), s, ws->initial);
    }
    log << "step " << m.step << " reward " << m.mean_reward << " loss " << m.loss << " grad_norm " << m.grad_norm
        << "\n";
  });
  save_trainer_checkpoint(cfg.paths.checkpoint_path(), trainer.state(), ws->initial);
  r.final_step = trainer.state().step;
  return r;
}

// ---------------------------------------------------------------- eval

struct EvalReport {
  std::size_t tasks = 0;
  double exact_match = 0.0;
  double f1 = 0.0;
  double mean_reward = 0.0;
  std::uint64_t step = 0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  return nlohmann::json{{"tasks", r.tasks}, {"exact_match", r.exact_match}, {"f1", r.f1},
                        {"mean_reward", r.mean_reward}, {"step", r.step}};
}

/// Deterministic top-k evaluation over every task.
inline EvalReport evaluate(const PolicyParameters& params, const RetrievalContext& ctx, const Backend& backend,
                           std::span<const ChainTask> tasks, const TrainConfig& tc) {
  EvalReport r;
  r.tasks = tasks.size();
  if (tasks.empty()) return r;
  std::vector<Trajectory> out(tasks.size());
  parallel_for(tasks.size(), tc.threads,
               [&](std::size_t i) { out[i] = run_episode(params, ctx, backend, tasks[i], tc, nullptr); });
  for (std::size_t i = 0; i < out.size(); ++i) {
    r.exact_match += out[i].exact_match;
    r.f1 += token_f1(out[i].answer, tasks[i].answer, tc.f1);
    r.mean_reward += out[i].reward;
  }
  const double n = static_cast<double>(tasks.size());
  r.exact_match /= n;
  r.f1 /= n;
  r.mean_reward /= n;
  return r;
}

/// Evaluates the checkpoint (or, with ablation.rl false, the initial
/// parameters) on the full eval split and writes eval.json.
inline EvalReport cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto ws = open_workspace(cfg);
  const auto tasks = load_tasks(cfg.paths.eval_tasks_path());
  PolicyParameters params = ws->initial;
  std::uint64_t step = 0;
  if (cfg.ablation.rl) {
    if (!std::filesystem::exists(cfg.paths.checkpoint_path())) {
      throw IoError("eval: no checkpoint at " + cfg.paths.checkpoint_path() + "; train first or set ablation.rl=false");
    }
    auto lc = load_trainer_checkpoint(cfg.paths.checkpoint_path());
    if (!(lc.frozen == ws->initial)) throw DataError("eval: checkpoint was made with a different document encoder");
    params = std::move(lc.state.params);
    step = lc.state.step;
  }
  auto r = evaluate(params, ws->context(), *ws->backend, tasks, cfg.train);
  r.step = step;
  std::ofstream out(cfg.paths.dir + "/eval.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + cfg.paths.dir + "/eval.json");
  out << to_json(r).dump(2) << '\n';
  log << "eval: " << r.tasks << " tasks, EM " << r.exact_match << ", F1 " << r.f1 << ", mean reward "
      << r.mean_reward << " (step " << r.step << ", mode " << render_mode_name(cfg.train.rendering.mode) << ")\n";
  return r;
}

// ---------------------------------------------------------------- rollout-debug

struct DebugTrace {
  std::vector<HopTrace> hops;
  Trajectory trajectory;
  std::vector<double> recomputed_log_probs;
};

inline DebugTrace rollout_trace(const PolicyParameters& params, const RetrievalContext& ctx, const Backend& backend,
                                const ChainTask& task, const TrainConfig& tc, std::uint64_t seed) {
  DebugTrace d;
  Rng rng(stream_id({seed, 0x6465627567ULL}));
  d.trajectory = run_episode(params, ctx, backend, task, tc, &rng, &d.hops);
  for (const auto& step : d.trajectory.steps) {
    Graph g;
    const auto pv = bind_params(g, params, false);
    const Var s = encode_state(pv, ctx.vocab, step.state_text, g);
    d.recomputed_log_probs.push_back(g.value(pl_log_prob(step.pool, s, ctx.index, step.action, tc.temperature, g))[0]);
  }
  return d;
}

/// Samples one episode of an eval task (or train task with `train_split`)
/// and prints every hop.
inline DebugTrace cmd_rollout_debug(const RunConfig& cfg, std::size_t task_id, std::uint64_t seed, bool train_split,
                                    std::ostream& out) {
  const auto ws = open_workspace(cfg);
  const auto tasks = load_tasks(train_split ? cfg.paths.train_tasks_path() : cfg.paths.eval_tasks_path());
  if (task_id >= tasks.size()) {
    throw InvalidArgument("rollout-debug: task id " + std::to_string(task_id) + " out of range (" +
                          std::to_string(tasks.size()) + " tasks)");
  }
  PolicyParameters params = ws->initial;
  if (std::filesystem::exists(cfg.paths.checkpoint_path())) {
    params = load_trainer_checkpoint(cfg.paths.checkpoint_path()).state.params;
  }
  const auto& task = tasks[task_id];
  auto d = rollout_trace(params, ws->context(), *ws->backend, task, cfg.train, seed);
  out << "task " << task_id << ": " << task.question << " (gold: " << task.answer << ", hops " << task.hops << ")\n";
  out << std::setprecision(6);
  for (std::size_t h = 0; h < d.hops.size(); ++h) {
    const auto& hop = d.hops[h];
    out << "hop " << hop.hop << "\n  state: " << hop.state_text << "\n  pool:";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, hop.pool.size()); ++i) {
      out << " [" << hop.pool.ids[i] << " " << hop.pool.scores[i] << " \""
          << ws->docs[static_cast<std::size_t>(hop.pool.ids[i])].text << "\"]";
    }
    out << "\n  action:";
    for (int id : hop.action.doc_ids) out << " " << id;
    out << "  log_prob " << hop.action.log_prob << " (recomputed " << d.recomputed_log_probs[h] << ")\n";
    out << "  observation: " << hop.observation << "\n";
  }
  out << "answer: " << d.trajectory.answer << "  reward " << d.trajectory.reward << "  EM "
      << d.trajectory.exact_match << "\n";
  return d;
}

}  // namespace harr
