// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Retrieval MDP environment.
//
// An episode starts from a question q0. At hop t the retriever sees the state
// (history, q_t), returns a ranked list of k documents, and the backend
// produces an observation, extends the history with (q_t, o_t) and emits
// either the next sub-query or, at the final hop, an answer.
//
// ScriptedChainQA plays the language model on synthetic fact chains. Its
// sub-queries name only the current entity in aliased mode, so a query-only
// retriever cannot tell which relation's fact is needed.

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "harr/corpus.hpp"
#include "harr/encoder.hpp"
#include "harr/error.hpp"
#include "harr/rng.hpp"

namespace harr {

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what) : Error(ErrorCategory::kBackend, what) {}
};

enum class AliasingMode { kAliased, kDisambiguated };

inline AliasingMode parse_aliasing_mode(const std::string& s) {
  if (s == "aliased") return AliasingMode::kAliased;
  if (s == "disambiguated") return AliasingMode::kDisambiguated;
  throw ConfigError("unknown aliasing mode '" + s + "' (expected aliased|disambiguated)");
}

inline std::string aliasing_mode_name(AliasingMode m) {
  return m == AliasingMode::kAliased ? "aliased" : "disambiguated";
}

inline constexpr std::string_view kNoFactObservation = "no relevant fact found";
inline const std::vector<std::string>& distractor_fillers() {
  static const std::vector<std::string> words{"mentions", "resembles", "neighbors", "follows"};
  return words;
}

struct EnvConfig {
  std::size_t entities = 200;
  std::vector<std::string> relations{"founder", "location"};
  std::size_t min_hops = 1;
  std::size_t max_hops = 2;
  double distractor_rate = 0.1;
  std::size_t k = 3;
  AliasingMode aliasing = AliasingMode::kAliased;
  std::size_t horizon = 4;  // T: maximum hops per episode
  // Objects of relation r are drawn from a hub set S_r; hub sets are disjoint.
  double hub_fraction = 0.1;
  double eval_fraction = 0.25;

  std::size_t hubs_per_relation() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(hub_fraction * static_cast<double>(entities) + 0.5));
  }

  void validate() const {
    if (entities < 2) throw ConfigError("env: need at least 2 entities");
    if (relations.empty()) throw ConfigError("env: need at least 1 relation");
    std::set<std::string> uniq(relations.begin(), relations.end());
    if (uniq.size() != relations.size()) throw ConfigError("env: duplicate relation names");
    for (const auto& r : relations) {
      if (split_whitespace(r).size() != 1 || to_lower(r) != r) {
        throw ConfigError("env: relation '" + r + "' must be a single lowercase token");
      }
      const auto& f = distractor_fillers();
      if (std::find(f.begin(), f.end(), r) != f.end()) throw ConfigError("env: relation '" + r + "' is reserved");
    }
    if (min_hops < 1 || min_hops > max_hops) throw ConfigError("env: need 1 <= min_hops <= max_hops");
    if (max_hops > horizon) throw ConfigError("env: hop count exceeds the episode horizon (max hops T)");
    if (max_hops > relations.size()) {
      throw ConfigError("env: chains use distinct relations, so max_hops must not exceed the relation count");
    }
    if (k < 1) throw ConfigError("env: k must be >= 1");
    if (distractor_rate < 0.0) throw ConfigError("env: distractor_rate must be >= 0");
    if (!(hub_fraction > 0.0) || hubs_per_relation() * relations.size() > entities) {
      throw ConfigError("env: hub sets for all relations do not fit in the entity count");
    }
    if (eval_fraction < 0.0 || eval_fraction >= 1.0) throw ConfigError("env: eval_fraction must be in [0,1)");
  }
};

/// A multi-hop question: follow `relations` in order from `start`.
struct ChainTask {
  std::string question;
  std::string answer;
  std::string start;
  std::vector<std::string> relations;
  std::size_t hops = 0;

  friend bool operator==(const ChainTask&, const ChainTask&) = default;
};

inline nlohmann::json task_to_json(const ChainTask& t) {
  return nlohmann::json{{"question", t.question},
                        {"answer", t.answer},
                        {"start", t.start},
                        {"relations", t.relations},
                        {"hops", t.hops}};
}

inline void save_tasks(const std::string& path, std::span<const ChainTask> tasks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write task file " + path);
  for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
}

inline std::vector<ChainTask> load_tasks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file " + path);
  std::vector<ChainTask> tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      ChainTask t{j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
                  j.at("start").get<std::string>(), j.at("relations").get<std::vector<std::string>>(),
                  j.at("hops").get<std::size_t>()};
      if (t.hops == 0 || t.hops != t.relations.size()) throw DataError(where + ": hops must equal |relations| >= 1");
      tasks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed task: " + e.what());
    }
  }
  return tasks;
}

/// Markov state s_t = (H_{t-1}, q_t).
struct EpisodeState {
  std::vector<HistoryEntry> history;  // entry 0 is (q0, none)
  std::string current_query;
  std::size_t hop = 1;
  bool terminal = false;
  std::string answer;

  const std::string& question() const { return history.front().sub_query; }
};

struct RetrievedDoc {
  int id = 0;
  std::string text;
};

struct Transition {
  std::string observation;
  std::optional<std::string> next_query;
  std::optional<std::string> answer;

  bool terminal() const { return answer.has_value(); }
};

/// One episode's conversation with the environment.
class Session {
 public:
  virtual ~Session() = default;
  virtual EpisodeState reset() = 0;
  /// Consumes the retrieved list for the current hop, appends (q_t, o_t) to the
  /// history and advances `state`.
  virtual Transition step(EpisodeState& state, std::span<const RetrievedDoc> retrieved) = 0;
  virtual std::unique_ptr<Session> clone() const = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Thread-safe; every episode gets its own session.
  virtual std::unique_ptr<Session> open(const ChainTask& task) const = 0;
  virtual std::size_t k() const = 0;
};

namespace detail {

inline void apply_transition(EpisodeState& state, const Transition& tr) {
  state.history.push_back({state.current_query, tr.observation});
  if (tr.answer) {
    state.terminal = true;
    state.answer = *tr.answer;
  } else {
    state.current_query = *tr.next_query;
    ++state.hop;
  }
}

inline void check_step(const EpisodeState& state, std::span<const RetrievedDoc> retrieved, std::size_t k) {
  if (state.terminal) throw InvalidArgument("step: episode already terminated");
  if (retrieved.size() != k) {
    throw InvalidArgument("step: expected " + std::to_string(k) + " retrieved documents, got " +
                          std::to_string(retrieved.size()));
  }
}

}  // namespace detail

/// Fact table recovered from "<subject> <relation> <object>" documents.
class FactGraph {
 public:
  FactGraph(std::span<const Document> docs, const std::vector<std::string>& relations) {
    const std::set<std::string> rels(relations.begin(), relations.end());
    for (const auto& d : docs) {
      const auto toks = split_whitespace(d.text);
      if (toks.size() != 3 || !rels.count(toks[1])) continue;
      facts_[{toks[0], toks[1]}] = Fact{d.id, toks[2]};
    }
  }

  struct Fact {
    int doc_id;
    std::string object;
  };

  const Fact* find(const std::string& subject, const std::string& relation) const {
    auto it = facts_.find({subject, relation});
    return it == facts_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return facts_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, Fact> facts_;
};

/// Scripted stand-in for the LLM over ChainQA fact chains.
///
/// Hop t looks for the fact (current entity, r_t) anywhere in the retrieved
/// list. A hit quotes the fact as the observation and moves to its object; a
/// miss stalls on the current entity. After hop H (or T) the answer is the
/// current entity.
class ScriptedChainQA : public Backend {
 public:
  ScriptedChainQA(std::span<const Document> docs, const std::vector<std::string>& relations, AliasingMode mode,
                  std::size_t k, std::size_t horizon)
      : facts_(std::make_shared<FactGraph>(docs, relations)), mode_(mode), k_(k), horizon_(horizon) {}

  std::unique_ptr<Session> open(const ChainTask& task) const override {
    return std::make_unique<ScriptedSession>(facts_, task, mode_, k_, horizon_);
  }
  std::size_t k() const override { return k_; }

 private:
  class ScriptedSession : public Session {
   public:
    ScriptedSession(std::shared_ptr<const FactGraph> facts, ChainTask task, AliasingMode mode, std::size_t k,
                    std::size_t horizon)
        : facts_(std::move(facts)), task_(std::move(task)), mode_(mode), k_(k), horizon_(horizon) {
      if (task_.hops == 0) throw InvalidArgument("ScriptedChainQA: task has zero hops");
    }

    EpisodeState reset() override {
      entity_ = task_.start;
      EpisodeState s;
      s.history.push_back({task_.question, std::nullopt});
      s.current_query = sub_query(1);
      s.hop = 1;
      return s;
    }

    Transition step(EpisodeState& state, std::span<const RetrievedDoc> retrieved) override {
      detail::check_step(state, retrieved, k_);
      const std::size_t t = state.hop;
      Transition tr;
      const auto* fact = facts_->find(entity_, task_.relations.at(t - 1));
      const auto hit = fact ? std::find_if(retrieved.begin(), retrieved.end(),
                                           [&](const RetrievedDoc& d) { return d.id == fact->doc_id; })
                            : retrieved.end();
      if (hit != retrieved.end()) {
        tr.observation = hit->text;
        entity_ = fact->object;
      } else {
        tr.observation = std::string(kNoFactObservation);
      }
      if (t >= task_.hops || t >= horizon_) {
        tr.answer = entity_;
      } else {
        tr.next_query = sub_query(t + 1);
      }
      detail::apply_transition(state, tr);
      return tr;
    }

    std::unique_ptr<Session> clone() const override { return std::make_unique<ScriptedSession>(*this); }

   private:
    std::string sub_query(std::size_t t) const {
      if (mode_ == AliasingMode::kAliased) return entity_;
      return entity_ + " " + task_.relations.at(t - 1);
    }

    std::shared_ptr<const FactGraph> facts_;
    ChainTask task_;
    AliasingMode mode_;
    std::size_t k_;
    std::size_t horizon_;
    std::string entity_;
  };

  std::shared_ptr<const FactGraph> facts_;
  AliasingMode mode_;
  std::size_t k_;
  std::size_t horizon_;
};

struct GeneratedEnv {
  std::vector<Document> docs;
  std::vector<ChainTask> train;
  std::vector<ChainTask> eval;
  std::vector<std::string> entities;
};

namespace detail {

inline std::vector<std::string> entity_names(std::size_t n, Rng& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> names;
  while (names.size() < n) {
    std::string s;
    for (int syl = 0; syl < 3; ++syl) {
      s += consonants[uniform_index(rng, consonants.size())];
      s += vowels[uniform_index(rng, vowels.size())];
    }
    if (seen.insert(s).second) names.push_back(s);
  }
  return names;
}

inline std::string question_text(const std::string& start, const std::vector<std::string>& relations) {
  // English nesting: the last relation applied is named first.
  std::string q = "what is";
  for (auto it = relations.rbegin(); it != relations.rend(); ++it) q += " the " + *it + " of";
  return q + " " + start;
}

}  // namespace detail

/// Builds a synthetic multi-hop corpus and question set.
///
/// Every entity has one fact per relation, so a bare entity sub-query matches
/// several facts. Relation chains use distinct relations in configuration
/// order, objects of relation r come from a hub set S_r (disjoint across
/// relations), and chains start outside S_{r_1}; together these keep every hop's
/// needed fact the only document pairing its entity with its relation as subject.
inline GeneratedEnv chainqa_generate(const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  GeneratedEnv env;
  env.entities = detail::entity_names(cfg.entities, rng);
  const std::size_t n = cfg.entities;
  const std::size_t r_count = cfg.relations.size();
  const std::size_t h = cfg.hubs_per_relation();

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  std::vector<std::vector<std::size_t>> hubs(r_count);
  std::vector<std::vector<bool>> is_hub(r_count, std::vector<bool>(n, false));
  for (std::size_t r = 0; r < r_count; ++r) {
    for (std::size_t i = 0; i < h; ++i) {
      hubs[r].push_back(perm[r * h + i]);
      is_hub[r][perm[r * h + i]] = true;
    }
  }

  // object[e][r]
  std::vector<std::vector<std::size_t>> object(n, std::vector<std::size_t>(r_count));
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t r = 0; r < r_count; ++r) {
      std::vector<std::size_t> choices;
      for (std::size_t x : hubs[r])
        if (x != e) choices.push_back(x);
      if (choices.empty()) {
        for (std::size_t x = 0; x < n; ++x)
          if (x != e) choices.push_back(x);
      }
      object[e][r] = choices[uniform_index(rng, choices.size())];
      env.docs.push_back({static_cast<int>(env.docs.size()),
                          env.entities[e] + " " + cfg.relations[r] + " " + env.entities[object[e][r]]});
    }
  }
  const auto fact_count = env.docs.size();
  const auto distractors = static_cast<std::size_t>(cfg.distractor_rate * static_cast<double>(fact_count) + 0.5);
  for (std::size_t i = 0; i < distractors; ++i) {
    const auto a = uniform_index(rng, n);
    auto b = uniform_index(rng, n - 1);
    if (b >= a) ++b;
    const auto& filler = distractor_fillers()[uniform_index(rng, distractor_fillers().size())];
    env.docs.push_back({static_cast<int>(env.docs.size()), env.entities[a] + " " + filler + " " + env.entities[b]});
  }

  // Relation sequences: strictly increasing relation indices of each length.
  std::vector<ChainTask> tasks;
  for (std::size_t hops = cfg.min_hops; hops <= cfg.max_hops; ++hops) {
    std::vector<std::vector<std::size_t>> seqs;
    std::vector<std::size_t> cur;
    auto gen = [&](auto&& self, std::size_t from) -> void {
      if (cur.size() == hops) {
        seqs.push_back(cur);
        return;
      }
      for (std::size_t r = from; r < r_count; ++r) {
        cur.push_back(r);
        self(self, r + 1);
        cur.pop_back();
      }
    };
    gen(gen, 0);
    for (const auto& seq : seqs) {
      for (std::size_t s = 0; s < n; ++s) {
        if (is_hub[seq[0]][s]) continue;
        // Final entity under every hit/miss pattern; only the all-hit walk may reach the gold answer.
        std::size_t gold = 0;
        bool unique = true;
        std::set<std::size_t> wrong;
        for (std::size_t mask = 0; mask < (std::size_t{1} << hops); ++mask) {
          std::size_t ent = s;
          for (std::size_t t = 0; t < hops; ++t)
            if (mask & (std::size_t{1} << t)) ent = object[ent][seq[t]];
          if (mask + 1 == (std::size_t{1} << hops)) {
            gold = ent;
          } else {
            wrong.insert(ent);
          }
        }
        if (wrong.count(gold)) unique = false;
        if (!unique) continue;
        ChainTask t;
        t.start = env.entities[s];
        for (auto r : seq) t.relations.push_back(cfg.relations[r]);
        t.hops = hops;
        t.answer = env.entities[gold];
        t.question = detail::question_text(t.start, t.relations);
        tasks.push_back(std::move(t));
      }
    }
  }
  // Split by start entity: no eval question shares its start with a training question.
  std::vector<std::string> starts;
  for (const auto& t : tasks)
    if (std::find(starts.begin(), starts.end(), t.start) == starts.end()) starts.push_back(t.start);
  shuffle(starts, rng);
  const auto n_eval = static_cast<std::size_t>(cfg.eval_fraction * static_cast<double>(starts.size()) + 0.5);
  const std::set<std::string> eval_starts(starts.begin(), starts.begin() + static_cast<std::ptrdiff_t>(n_eval));
  for (auto& t : tasks) (eval_starts.count(t.start) ? env.eval : env.train).push_back(std::move(t));
  shuffle(env.train, rng);
  shuffle(env.eval, rng);
  return env;
}

/// Vocabulary over the corpus, the questions and the state template tokens.
inline Vocabulary build_vocabulary(const GeneratedEnv& env) {
  std::vector<std::string> tokens{std::string(kQueryTag), std::string(kObservationTag), to_lower(kSeparator)};
  for (const auto& w : split_whitespace(kNoFactObservation)) tokens.push_back(w);
  for (const auto& d : env.docs)
    for (auto& w : split_whitespace(to_lower(d.text))) tokens.push_back(std::move(w));
  for (const auto* split : {&env.train, &env.eval})
    for (const auto& t : *split)
      for (auto& w : split_whitespace(to_lower(t.question))) tokens.push_back(std::move(w));
  return Vocabulary::from_tokens(tokens);
}

}  // namespace harr
