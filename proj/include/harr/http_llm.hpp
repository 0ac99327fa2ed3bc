// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Environment backend that delegates the language-model roles to a remote
// chat-completions endpoint (POST <base>/v1/chat/completions).
//
// Prompts are plain templates with {question}, {query}, {documents} and
// {history} placeholders. Every episode runs exactly task.hops hops; the
// final hop asks the model for the answer instead of a new sub-query.

#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "harr/env.hpp"
#include "harr/error.hpp"

namespace harr {

class HttpTimeoutError : public BackendError {
 public:
  using BackendError::BackendError;
};

class HttpStatusError : public BackendError {
 public:
  HttpStatusError(int status, const std::string& what) : BackendError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class MalformedResponseError : public BackendError {
 public:
  using BackendError::BackendError;
};

enum class LlmRole { kObserve, kNextQuery, kAnswer };

inline std::string llm_role_name(LlmRole r) {
  switch (r) {
    case LlmRole::kObserve: return "observe";
    case LlmRole::kNextQuery: return "next_query";
    case LlmRole::kAnswer: return "answer";
  }
  return "unknown";
}

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "default";
  double timeout_s = 30.0;
  int max_retries = 2;
  std::string auth_env;  // empty: no Authorization header
  int max_in_flight = 4;
  double temperature = 0.0;
  int backoff_ms = 200;  // doubled after every failed attempt
  std::string observe_template =
      "Question: {question}\nSearch query: {query}\nRetrieved documents:\n{documents}\n"
      "Write the single fact from the documents that answers the search query.";
  std::string next_query_template =
      "Question: {question}\nSo far:\n{history}\nWrite the next short search query.";
  std::string answer_template =
      "Question: {question}\nSo far:\n{history}\nAnswer with the entity name only.";

  void validate() const {
    if (base_url.rfind("http://", 0) != 0) {
      throw ConfigError("backend.base_url must start with http:// (TLS is not compiled in)");
    }
    if (!(timeout_s > 0.0)) throw ConfigError("backend.timeout_s must be > 0");
    if (max_retries < 0) throw ConfigError("backend.max_retries must be >= 0");
    if (max_in_flight < 1) throw ConfigError("backend.max_in_flight must be >= 1");
    if (backoff_ms < 0) throw ConfigError("backend.backoff_ms must be >= 0");
  }
};

/// Replaces every {key} occurrence in `tmpl`.
inline std::string fill_template(std::string tmpl, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string needle = "{" + key + "}";
    for (auto pos = tmpl.find(needle); pos != std::string::npos; pos = tmpl.find(needle, pos + value.size())) {
      tmpl.replace(pos, needle.size(), value);
    }
  }
  return tmpl;
}

class HttpLlmClient {
 public:
  explicit HttpLlmClient(HttpBackendConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))), slots_(cfg_.max_in_flight) {
    const auto rest = cfg_.base_url.substr(7);
    const auto slash = rest.find('/');
    host_ = "http://" + rest.substr(0, slash);
    if (slash != std::string::npos) prefix_ = rest.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (!cfg_.auth_env.empty()) {
      const char* token = std::getenv(cfg_.auth_env.c_str());
      if (token == nullptr) throw ConfigError("environment variable " + cfg_.auth_env + " is not set");
      token_ = token;
    }
  }

  const HttpBackendConfig& config() const noexcept { return cfg_; }
  std::string endpoint() const { return host_ + prefix_ + "/v1/chat/completions"; }

  /// One chat completion; retries transport failures, 429 and 5xx.
  std::string call(LlmRole role, const std::string& prompt) const {
    const nlohmann::json body{{"model", cfg_.model},
                              {"temperature", cfg_.temperature},
                              {"messages", {{{"role", "user"}, {"content", prompt}}}},
                              {"metadata", {{"role", llm_role_name(role)}}}};
    const auto payload = body.dump();
    const int attempts = cfg_.max_retries + 1;
    for (int attempt = 0;; ++attempt) {
      try {
        return call_once(payload);
      } catch (const HttpStatusError& e) {
        const bool retryable = e.status() == 429 || e.status() >= 500;
        if (!retryable || attempt + 1 >= attempts) throw;
      } catch (const HttpTimeoutError&) {
        if (attempt + 1 >= attempts) throw;
      } catch (const MalformedResponseError&) {
        throw;
      } catch (const BackendError&) {
        if (attempt + 1 >= attempts) throw;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(cfg_.backoff_ms) << attempt));
    }
  }

 private:
  std::string call_once(const std::string& payload) const {
    struct Slot {
      std::counting_semaphore<>& s;
      explicit Slot(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
      ~Slot() { s.release(); }
    } slot(slots_);

    httplib::Client client(host_);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg_.timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    const auto res = client.Post(prefix_ + "/v1/chat/completions", headers, payload, "application/json");
    if (!res) {
      const auto err = res.error();
      const auto msg = "request to " + endpoint() + " failed: " + httplib::to_string(err);
      if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
        throw HttpTimeoutError(msg);
      }
      throw BackendError(msg);
    }
    if (res->status < 200 || res->status >= 300) {
      throw HttpStatusError(res->status, "HTTP " + std::to_string(res->status) + " from " + endpoint());
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponseError("malformed completion from " + endpoint() + ": " + e.what());
    }
  }

  HttpBackendConfig cfg_;
  std::string host_;
  std::string prefix_;
  std::string token_;
  mutable std::counting_semaphore<> slots_;
};

/// Backend whose observations, sub-queries and answers come from the model.
class HttpLlmBackend : public Backend {
 public:
  HttpLlmBackend(HttpBackendConfig cfg, std::size_t k, std::size_t horizon)
      : client_(std::make_shared<HttpLlmClient>(std::move(cfg))), k_(k), horizon_(horizon) {}

  std::unique_ptr<Session> open(const ChainTask& task) const override {
    return std::make_unique<HttpSession>(client_, task, k_, horizon_);
  }
  std::size_t k() const override { return k_; }
  const HttpLlmClient& client() const { return *client_; }

 private:
  class HttpSession : public Session {
   public:
    HttpSession(std::shared_ptr<const HttpLlmClient> client, ChainTask task, std::size_t k, std::size_t horizon)
        : client_(std::move(client)), task_(std::move(task)), k_(k), horizon_(horizon) {
      if (task_.hops == 0) throw InvalidArgument("HttpLlm: task has zero hops");
    }

    EpisodeState reset() override {
      EpisodeState s;
      s.history.push_back({task_.question, std::nullopt});
      s.current_query = ask(LlmRole::kNextQuery, client_->config().next_query_template, s, "", "");
      s.hop = 1;
      return s;
    }

    Transition step(EpisodeState& state, std::span<const RetrievedDoc> retrieved) override {
      detail::check_step(state, retrieved, k_);
      std::string docs;
      for (std::size_t i = 0; i < retrieved.size(); ++i) {
        docs += "[" + std::to_string(i + 1) + "] " + retrieved[i].text + "\n";
      }
      Transition tr;
      tr.observation = ask(LlmRole::kObserve, client_->config().observe_template, state, state.current_query, docs);
      // The history passed to the next prompt already includes this hop.
      EpisodeState next = state;
      next.history.push_back({state.current_query, tr.observation});
      if (state.hop >= task_.hops || state.hop >= horizon_) {
        tr.answer = ask(LlmRole::kAnswer, client_->config().answer_template, next, "", "");
      } else {
        tr.next_query = ask(LlmRole::kNextQuery, client_->config().next_query_template, next, "", "");
      }
      detail::apply_transition(state, tr);
      return tr;
    }

    std::unique_ptr<Session> clone() const override { return std::make_unique<HttpSession>(*this); }

   private:
    std::string ask(LlmRole role, const std::string& tmpl, const EpisodeState& s, const std::string& query,
                    const std::string& docs) const {
      std::string history;
      for (std::size_t i = 1; i < s.history.size(); ++i) {
        history += "search: " + s.history[i].sub_query + "\nfound: " + s.history[i].observation.value_or("") + "\n";
      }
      auto text = client_->call(role, fill_template(tmpl, {{"question", task_.question},
                                                           {"query", query},
                                                           {"documents", docs},
                                                           {"history", history}}));
      // Trim surrounding whitespace; an empty sub-query would be unrenderable.
      const auto b = text.find_first_not_of(" \t\r\n");
      const auto e = text.find_last_not_of(" \t\r\n");
      text = b == std::string::npos ? std::string() : text.substr(b, e - b + 1);
      if (text.empty() && role == LlmRole::kNextQuery) text = task_.question;
      return text;
    }

    std::shared_ptr<const HttpLlmClient> client_;
    ChainTask task_;
    std::size_t k_;
    std::size_t horizon_;
  };

  std::shared_ptr<const HttpLlmClient> client_;
  std::size_t k_;
  std::size_t horizon_;
};

}  // namespace harr
