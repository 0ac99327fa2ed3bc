// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0

// harr: command-line front end.
//
//   harr gen-env --config run.json
//   harr index --config run.json
//   harr filter --config run.json
//   harr train --config run.json [--resume]
//   harr eval --config run.json
//   harr rollout-debug --config run.json --task 3 --seed 1

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "harr/commands.hpp"
#include "harr/config.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> mode;
  std::optional<std::string> backend;
  std::optional<std::size_t> k;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "override the run seed");
  cmd->add_option("--steps", o.steps, "override train.steps");
  cmd->add_option("--mode", o.mode, "state rendering: history | query-only");
  cmd->add_option("--backend", o.backend, "environment backend: scripted | http");
  cmd->add_option("--k", o.k, "documents retrieved per hop");
  cmd->add_option("--out", o.out, "run directory (paths.dir)");
}

harr::RunConfig resolve(const CommonOptions& o) {
  harr::RunConfig cfg = o.config.empty() ? harr::RunConfig{} : harr::load_config(o.config);
  harr::apply_overrides(cfg, {o.seed, o.steps, o.mode, o.backend, o.k, o.out});
  cfg.finalize();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement fine-tuning of a history-aware dense retriever on synthetic multi-hop QA"};
  app.require_subcommand(1);

  CommonOptions opts;
  bool resume = false;
  std::size_t task_id = 0;
  std::uint64_t trace_seed = 0;
  bool train_split = false;

  auto* gen = app.add_subcommand("gen-env", "generate corpus, task splits and vocabulary");
  auto* index = app.add_subcommand("index", "build the frozen document-embedding index");
  auto* filter = app.add_subcommand("filter", "keep training tasks with reward variance under the initial policy");
  auto* train = app.add_subcommand("train", "GRPO training on the filtered tasks");
  auto* eval = app.add_subcommand("eval", "deterministic evaluation on the eval split");
  auto* debug = app.add_subcommand("rollout-debug", "print one sampled episode hop by hop");
  for (auto* c : {gen, index, filter, train, eval, debug}) add_common(c, opts);
  train->add_flag("--resume", resume, "continue from the checkpoint in the run directory");
  debug->add_option("--task", task_id, "task index")->required();
  debug->add_option("--trace-seed", trace_seed, "sampling seed for the episode");
  debug->add_flag("--train-split", train_split, "pick the task from the training split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(harr::ErrorCategory::kInvalidArgument);
  }

  try {
    const auto cfg = resolve(opts);
    if (gen->parsed()) {
      harr::cmd_gen_env(cfg, std::cout);
    } else if (index->parsed()) {
      harr::cmd_index(cfg, std::cout);
    } else if (filter->parsed()) {
      harr::cmd_filter(cfg, std::cout);
    } else if (train->parsed()) {
      harr::cmd_train(cfg, resume, std::cout);
    } else if (eval->parsed()) {
      harr::cmd_eval(cfg, std::cout);
    } else if (debug->parsed()) {
      harr::cmd_rollout_debug(cfg, task_id, trace_seed, train_split, std::cout);
    }
  } catch (const harr::Error& e) {
    std::cerr << "error [" << harr::category_name(e.category()) << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
