// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: a JSON document with one object per section.
//
//   { "seed": 7,
//     "env":      { "entities": 200, ... },
//     "encoder":  { "embed_dim": 48, "dim": 96, "max_tokens": 256 },
//     "train":    { "learning_rate": 1e-3, ... },
//     "backend":  { "kind": "scripted", ... },
//     "paths":    { "dir": "run" },
//     "ablation": { "history_aware": true, "rl": true } }
//
// Every key is optional; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "harr/checkpoint.hpp"
#include "harr/env.hpp"
#include "harr/error.hpp"
#include "harr/grpo.hpp"
#include "harr/http_llm.hpp"

namespace harr {

enum class BackendKind { kScripted, kHttp };

inline BackendKind parse_backend_kind(const std::string& s) {
  if (s == "scripted") return BackendKind::kScripted;
  if (s == "http") return BackendKind::kHttp;
  throw ConfigError("unknown backend '" + s + "' (expected scripted|http)");
}

inline std::string backend_kind_name(BackendKind k) { return k == BackendKind::kScripted ? "scripted" : "http"; }

inline F1Variant parse_f1_variant(const std::string& s) {
  if (s == "set") return F1Variant::kTokenSet;
  if (s == "multiset") return F1Variant::kTokenMultiset;
  throw ConfigError("unknown f1 variant '" + s + "' (expected set|multiset)");
}

inline std::string f1_variant_name(F1Variant v) { return v == F1Variant::kTokenSet ? "set" : "multiset"; }

struct EncoderConfig {
  std::size_t embed_dim = 48;  // d_e
  std::size_t dim = 96;        // d
};

/// File locations. Empty entries resolve to `dir/<default name>`.
struct PathsConfig {
  std::string dir = "run";
  std::string corpus;
  std::string train_tasks;
  std::string eval_tasks;
  std::string filtered_tasks;
  std::string vocab;
  std::string index;
  std::string checkpoint;
  std::string metrics;

  std::string resolve(const std::string& explicit_path, const std::string& name) const {
    return explicit_path.empty() ? dir + "/" + name : explicit_path;
  }
  std::string corpus_path() const { return resolve(corpus, "corpus.jsonl"); }
  std::string train_tasks_path() const { return resolve(train_tasks, "train_tasks.jsonl"); }
  std::string eval_tasks_path() const { return resolve(eval_tasks, "eval_tasks.jsonl"); }
  std::string filtered_tasks_path() const { return resolve(filtered_tasks, "train_filtered.jsonl"); }
  std::string vocab_path() const { return resolve(vocab, "vocab.txt"); }
  std::string index_path() const { return resolve(index, "index.harr"); }
  std::string checkpoint_path() const { return resolve(checkpoint, "checkpoint.harr"); }
  std::string metrics_path() const { return resolve(metrics, "metrics.jsonl"); }
  std::string manifest_path() const { return dir + "/manifest.json"; }
};

struct AblationConfig {
  bool history_aware = true;
  bool rl = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  EnvConfig env;
  EncoderConfig encoder;
  TrainConfig train;
  std::size_t checkpoint_interval = 0;  // 0: only at the end
  std::size_t filter_rollouts = 8;  // 0: keep every task, rely on per-batch degenerate skipping
  BackendKind backend = BackendKind::kScripted;
  HttpBackendConfig http;
  PathsConfig paths;
  AblationConfig ablation;

  /// Cross-section consistency; also syncs derived fields.
  void finalize() {
    train.rendering.mode = ablation.history_aware ? RenderMode::kHistoryAware : RenderMode::kQueryOnly;
    env.k = train.top_k;
    train.seed = seed;
    env.validate();
    if (encoder.embed_dim == 0 || encoder.dim == 0) throw ConfigError("encoder: dimensions must be positive");
    if (train.top_k == 0 || train.top_k > train.pool_size) throw ConfigError("train: need 1 <= top_k <= pool_size");
    if (train.group_size < 2) throw ConfigError("train: group_size must be >= 2");
    if (train.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(train.temperature > 0.0)) throw ConfigError("train: temperature must be > 0");
    if (train.clip_eps < 0.0) throw ConfigError("train: clip_eps must be >= 0");
    if (train.threads == 0) throw ConfigError("train: threads must be >= 1");
    if (train.rendering.max_tokens == 0) throw ConfigError("encoder: max_tokens must be >= 1");
    if (filter_rollouts == 1) throw ConfigError("train: filter_rollouts must be 0 or >= 2");
    if (backend == BackendKind::kHttp) http.validate();
  }
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: " + name_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + name_ + "." + it.key());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& root) {
  RunConfig c;
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> kTopKeys{"seed", "env", "encoder", "train", "backend", "paths", "ablation"};
  for (auto it = root.begin(); it != root.end(); ++it) {
    if (!kTopKeys.count(it.key())) throw ConfigError("config: unknown key " + it.key());
  }
  if (auto it = root.find("seed"); it != root.end()) {
    if (!it->is_number_unsigned()) throw ConfigError("config: seed must be a non-negative integer");
    c.seed = it->get<std::uint64_t>();
  }
  const nlohmann::json empty = nlohmann::json::object();
  auto sub = [&](const char* name) {
    auto it = root.find(name);
    return detail::Section(it == root.end() ? empty : *it, name);
  };
  std::string s;

  auto env = sub("env");
  env.get("entities", c.env.entities);
  env.get("relations", c.env.relations);
  env.get("min_hops", c.env.min_hops);
  env.get("max_hops", c.env.max_hops);
  env.get("distractor_rate", c.env.distractor_rate);
  s = aliasing_mode_name(c.env.aliasing);
  env.get("aliasing", s);
  c.env.aliasing = parse_aliasing_mode(s);
  env.get("horizon", c.env.horizon);
  env.get("hub_fraction", c.env.hub_fraction);
  env.get("eval_fraction", c.env.eval_fraction);
  env.finish();

  auto enc = sub("encoder");
  enc.get("embed_dim", c.encoder.embed_dim);
  enc.get("dim", c.encoder.dim);
  enc.get("max_tokens", c.train.rendering.max_tokens);
  enc.finish();

  auto tr = sub("train");
  tr.get("group_size", c.train.group_size);
  tr.get("clip_eps", c.train.clip_eps);
  tr.get("temperature", c.train.temperature);
  tr.get("top_k", c.train.top_k);
  tr.get("pool_size", c.train.pool_size);
  tr.get("batch_size", c.train.batch_size);
  tr.get("steps", c.train.steps);
  tr.get("learning_rate", c.train.adamw.learning_rate);
  tr.get("beta1", c.train.adamw.beta1);
  tr.get("beta2", c.train.adamw.beta2);
  tr.get("adam_eps", c.train.adamw.eps);
  tr.get("weight_decay", c.train.adamw.weight_decay);
  tr.get("threads", c.train.threads);
  s = f1_variant_name(c.train.f1);
  tr.get("f1", s);
  c.train.f1 = parse_f1_variant(s);
  tr.get("checkpoint_interval", c.checkpoint_interval);
  tr.get("filter_rollouts", c.filter_rollouts);
  tr.finish();

  auto be = sub("backend");
  s = backend_kind_name(c.backend);
  be.get("kind", s);
  c.backend = parse_backend_kind(s);
  be.get("base_url", c.http.base_url);
  be.get("model", c.http.model);
  be.get("timeout_s", c.http.timeout_s);
  be.get("max_retries", c.http.max_retries);
  be.get("auth_env", c.http.auth_env);
  be.get("max_in_flight", c.http.max_in_flight);
  be.get("temperature", c.http.temperature);
  be.get("backoff_ms", c.http.backoff_ms);
  be.get("observe_template", c.http.observe_template);
  be.get("next_query_template", c.http.next_query_template);
  be.get("answer_template", c.http.answer_template);
  be.finish();

  auto pa = sub("paths");
  pa.get("dir", c.paths.dir);
  pa.get("corpus", c.paths.corpus);
  pa.get("train_tasks", c.paths.train_tasks);
  pa.get("eval_tasks", c.paths.eval_tasks);
  pa.get("filtered_tasks", c.paths.filtered_tasks);
  pa.get("vocab", c.paths.vocab);
  pa.get("index", c.paths.index);
  pa.get("checkpoint", c.paths.checkpoint);
  pa.get("metrics", c.paths.metrics);
  pa.finish();

  auto ab = sub("ablation");
  ab.get("history_aware", c.ablation.history_aware);
  ab.get("rl", c.ablation.rl);
  ab.finish();

  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"seed", c.seed},
      {"env",
       {{"entities", c.env.entities},
        {"relations", c.env.relations},
        {"min_hops", c.env.min_hops},
        {"max_hops", c.env.max_hops},
        {"distractor_rate", c.env.distractor_rate},
        {"aliasing", aliasing_mode_name(c.env.aliasing)},
        {"horizon", c.env.horizon},
        {"hub_fraction", c.env.hub_fraction},
        {"eval_fraction", c.env.eval_fraction}}},
      {"encoder",
       {{"embed_dim", c.encoder.embed_dim}, {"dim", c.encoder.dim}, {"max_tokens", c.train.rendering.max_tokens}}},
      {"train",
       {{"group_size", c.train.group_size},
        {"clip_eps", c.train.clip_eps},
        {"temperature", c.train.temperature},
        {"top_k", c.train.top_k},
        {"pool_size", c.train.pool_size},
        {"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"learning_rate", c.train.adamw.learning_rate},
        {"beta1", c.train.adamw.beta1},
        {"beta2", c.train.adamw.beta2},
        {"adam_eps", c.train.adamw.eps},
        {"weight_decay", c.train.adamw.weight_decay},
        {"threads", c.train.threads},
        {"f1", f1_variant_name(c.train.f1)},
        {"checkpoint_interval", c.checkpoint_interval},
        {"filter_rollouts", c.filter_rollouts}}},
      {"backend",
       {{"kind", backend_kind_name(c.backend)},
        {"base_url", c.http.base_url},
        {"model", c.http.model},
        {"timeout_s", c.http.timeout_s},
        {"max_retries", c.http.max_retries},
        {"auth_env", c.http.auth_env},
        {"max_in_flight", c.http.max_in_flight},
        {"temperature", c.http.temperature},
        {"backoff_ms", c.http.backoff_ms},
        {"observe_template", c.http.observe_template},
        {"next_query_template", c.http.next_query_template},
        {"answer_template", c.http.answer_template}}},
      {"paths",
       {{"dir", c.paths.dir},
        {"corpus", c.paths.corpus},
        {"train_tasks", c.paths.train_tasks},
        {"eval_tasks", c.paths.eval_tasks},
        {"filtered_tasks", c.paths.filtered_tasks},
        {"vocab", c.paths.vocab},
        {"index", c.paths.index},
        {"checkpoint", c.paths.checkpoint},
        {"metrics", c.paths.metrics}}},
      {"ablation", {{"history_aware", c.ablation.history_aware}, {"rl", c.ablation.rl}}},
  };
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Fingerprint of the settings that shape generated data and training.
inline std::string config_hash(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("paths");
  const auto text = j.dump();
  return hex64(fnv1a64(std::vector<std::uint8_t>(text.begin(), text.end())));
}

/// Command-line overrides; unset fields leave the file value alone.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> mode;
  std::optional<std::string> backend;
  std::optional<std::size_t> k;
  std::optional<std::string> out;
};

inline void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.steps) c.train.steps = *o.steps;
  if (o.mode) c.ablation.history_aware = parse_render_mode(*o.mode) == RenderMode::kHistoryAware;
  if (o.backend) c.backend = parse_backend_kind(*o.backend);
  if (o.k) c.train.top_k = *o.k;
  if (o.out) c.paths.dir = *o.out;
}

}  // namespace harr
