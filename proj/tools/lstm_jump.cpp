// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0

#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "lstmjump/cli.hpp"

namespace {

lstmjump::RolloutMode parse_mode(const std::string& s) {
  if (s == "sample") return lstmjump::RolloutMode::Sample;
  if (s == "greedy") return lstmjump::RolloutMode::Greedy;
  throw lstmjump::InputError("--mode must be sample or greedy");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace lstmjump;
  CLI::App app{"LSTM-Jump: a recurrent reader that learns to skip text"};
  app.require_subcommand(1);

  cli::GlobalOptions g;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", g.config_path, "flat key = value run configuration");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--threads", threads, "worker threads (results do not depend on this)");
    sub->add_option("--override", g.overrides, "key=value, repeatable (e.g. R=9, N=2)");
  };

  cli::GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "write synthetic train/valid/test files");
  add_globals(gen_cmd);
  gen_cmd->add_option("--out", gen.out_dir, "output directory");
  gen_cmd->add_option("--seq-len,-T", gen.seq_len, "sequence length T");
  gen_cmd->add_option("--train", gen.n_train, "training examples");
  gen_cmd->add_option("--valid", gen.n_valid, "validation examples");
  gen_cmd->add_option("--test", gen.n_test, "test examples");

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write the best-validation checkpoint");
  add_globals(train_cmd);
  train_cmd->add_option("--resume", train.resume_path, "continue from this checkpoint");

  cli::EvalOptions eval;
  std::string mode;
  std::size_t n_traces = 10;
  bool no_jump = false;
  auto add_eval = [&](CLI::App* sub) {
    add_globals(sub);
    sub->add_option("--checkpoint", eval.checkpoint, "trained checkpoint")->required();
    sub->add_option("--data", eval.data_path, "dataset file (default: test_path or fresh synthetic data)");
    sub->add_option("--mode", mode, "sample or greedy jump decisions");
    sub->add_option("--examples", eval.synthetic_n, "fresh synthetic examples when no file is given");
    sub->add_flag("--no-jump", no_jump, "read every token (plain LSTM behaviour)");
  };
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_eval(eval_cmd);
  eval_cmd->add_option("--baseline-report", eval.baseline_report, "file with an earlier eval record, for speedup");
  eval_cmd->add_option("--limit", eval.limit, "evaluate only the first n examples");
  auto* trace_cmd = app.add_subcommand("inspect-trace", "dump reading traces");
  add_eval(trace_cmd);
  trace_cmd->add_option("-n", n_traces, "number of examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) g.seed = seed;
    if (sub->count("--threads")) g.threads = threads;
    if (!mode.empty()) eval.mode = parse_mode(mode);
    if (no_jump) eval.jumping = false;

    if (sub == gen_cmd) return cli::cmd_gen(cli::resolve_config(g), gen, std::cout, std::cerr);
    if (sub == train_cmd) return cli::cmd_train(cli::resolve_config(g), train, std::cout, std::cerr);
    if (sub == eval_cmd) return cli::cmd_eval(g, eval, std::cout, std::cerr);
    if (sub == trace_cmd) return cli::cmd_inspect_trace(g, eval, n_traces, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
