// Copyright 2026 The LSTM-Jump Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lstmjump/cli.hpp"

using namespace lstmjump;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lstmjump_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

RunConfig tiny_synthetic(const fs::path& dir) {
  RunConfig c;
  c.vocab_size = 20;
  c.num_classes = 20;
  c.embed_dim = 4;
  c.hidden = 8;
  c.jump = JumpConfig{3, 5, 2};  // N, K, R
  c.batch_size = 8;
  c.curriculum = {6, 12};
  c.synthetic_train_size = 64;
  c.synthetic_valid_size = 32;
  c.max_steps = 6;
  c.eval_every = 3;
  c.checkpoint_path = (dir / "model.ljmp").string();
  return c;
}

Checkpoint small_checkpoint(std::uint64_t seed) {
  Checkpoint ck;
  ck.config = tiny_synthetic(fs::temp_directory_path());
  Rng rng(seed);
  ck.params = ModelParams<float>::initialized(ck.config.model_shape(), rng);
  ck.adam = make_adam(ck.params);
  ck.adam->t = 3;
  ck.adam->m.front() = Matrix<float>(ck.adam->m.front().rows(), ck.adam->m.front().cols(), 0.25f);
  ck.step = 42;
  ck.stage = 1;
  Vocabulary v;
  v.add("hello");
  ck.vocab = v;
  return ck;
}

}  // namespace

TEST_CASE("config text round-trips") {
  RunConfig c;
  c.task = Task::Classify;
  c.seed = 77;
  c.learning_rate = 3.5e-4;
  c.curriculum = {5, 7, 9};
  c.level = CorpusLevel::Sentence;
  c.eval_mode = RolloutMode::Greedy;
  c.train_path = "a b.tsv";
  std::istringstream in(to_text(c));
  CHECK(parse_config(in) == c);
}

TEST_CASE("config errors") {
  SECTION("unknown key names the line") {
    std::istringstream in("seed = 1\n\n# note\nbogus = 3\n");
    try {
      parse_config(in);
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(e.line() == 4);
    }
  }
  SECTION("override errors") {
    RunConfig c;
    CHECK_THROWS_AS(apply_override(c, "nonsense"), InputError);
    CHECK_THROWS_AS(apply_override(c, "bogus=1"), InputError);
    CHECK_THROWS_AS(apply_override(c, "hidden=-3"), InputError);
    apply_override(c, "R = 9");
    apply_override(c, "N=2");
    CHECK(c.jump.read_len == 9);
    CHECK(c.jump.n_jumps == 2);
  }
}

TEST_CASE("shipped configs parse and validate") {
  for (const char* name : {"synthetic", "synthetic_lstm", "rt", "imdb", "ag", "cbt"}) {
    INFO(name);
    const RunConfig c = load_config(std::string(LSTMJUMP_SOURCE_DIR) + "/configs/" + name + ".cfg");
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("checkpoint round-trip is byte-identical") {
  const Checkpoint ck = small_checkpoint(5);
  std::stringstream first;
  save_checkpoint(first, ck);
  const std::string bytes = first.str();
  std::istringstream in(bytes);
  const Checkpoint back = load_checkpoint(in);
  CHECK(back.config == ck.config);
  CHECK(back.step == 42);
  CHECK(back.stage == 1);
  REQUIRE(back.vocab);
  CHECK(back.vocab->words() == ck.vocab->words());
  REQUIRE(back.adam);
  CHECK(back.adam->t == 3);
  std::vector<float> a, b;
  ck.params.for_each_tensor([&](const std::string&, const Matrix<float>& t, std::size_t) {
    a.insert(a.end(), t.values().begin(), t.values().end());
  });
  back.params.for_each_tensor([&](const std::string&, const Matrix<float>& t, std::size_t) {
    b.insert(b.end(), t.values().begin(), t.values().end());
  });
  CHECK(a == b);
  std::ostringstream second;
  save_checkpoint(second, back);
  CHECK(second.str() == bytes);
}

TEST_CASE("checkpoint header is checked") {
  std::stringstream s;
  save_checkpoint(s, small_checkpoint(6));
  std::string bytes = s.str();
  SECTION("bad magic") {
    bytes[0] = 'X';
    std::istringstream in(bytes);
    CHECK_THROWS_AS(load_checkpoint(in), FormatError);
  }
  SECTION("future version") {
    bytes[4] = 2;
    std::istringstream in(bytes);
    CHECK_THROWS_WITH(load_checkpoint(in), Catch::Matchers::ContainsSubstring("version"));
  }
  SECTION("truncated") {
    std::istringstream in(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS(load_checkpoint(in));
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_checkpoint("/nonexistent/model.ljmp"),
                      Catch::Matchers::ContainsSubstring("/nonexistent/model.ljmp"));
  }
}

TEST_CASE("gen is deterministic") {
  const fs::path a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  RunConfig c;
  c.seed = 7;
  std::ostringstream out, log;
  cli::GenOptions o{a.string(), 100, 1000, 50, 50};
  REQUIRE(cli::cmd_gen(c, o, out, log) == 0);
  o.out_dir = b.string();
  REQUIRE(cli::cmd_gen(c, o, out, log) == 0);
  for (const char* f : {"train.txt", "valid.txt", "test.txt"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto ds = read_synthetic_file((a / "train.txt").string(), 100);
  CHECK(ds.size() == 1000);
  CHECK(ds[0].tokens.size() == 100);
  CHECK(slurp(a / "train.txt") != slurp(a / "test.txt"));

  o.seq_len = 1;
  CHECK_THROWS_AS(cli::cmd_gen(c, o, out, log), InputError);
}

TEST_CASE("train, eval and inspect-trace") {
  const fs::path dir = scratch_dir("train");
  const RunConfig c = tiny_synthetic(dir);
  std::ostringstream out, log;
  REQUIRE(cli::cmd_train(c, {}, out, log) == 0);
  const auto records = json_lines(out.str());
  REQUIRE(!records.empty());
  CHECK(records.back()["event"] == "train_done");
  CHECK(records.back()["steps"] == 6);
  REQUIRE(fs::exists(c.checkpoint_path));

  SECTION("same seed, same run") {
    const fs::path dir2 = scratch_dir("train2");
    RunConfig c2 = c;
    c2.checkpoint_path = (dir2 / "model.ljmp").string();
    std::ostringstream out2, log2;
    REQUIRE(cli::cmd_train(c2, {}, out2, log2) == 0);
    auto r2 = json_lines(out2.str());
    REQUIRE(r2.size() == records.size());
    for (std::size_t i = 0; i < r2.size(); ++i) {
      auto x = records[i], y = r2[i];
      x.erase("wall_time");
      y.erase("wall_time");
      CHECK(x == y);
    }
    // Only the stored path differs between the two checkpoints.
    Checkpoint k1 = load_checkpoint(c.checkpoint_path), k2 = load_checkpoint(c2.checkpoint_path);
    k2.config.checkpoint_path = k1.config.checkpoint_path;
    std::ostringstream s1, s2;
    save_checkpoint(s1, k1);
    save_checkpoint(s2, k2);
    CHECK(s1.str() == s2.str());
  }

  SECTION("eval honours R and N overrides and leaves the checkpoint alone") {
    const std::string before = slurp(c.checkpoint_path);
    cli::EvalOptions eo;
    eo.checkpoint = c.checkpoint_path;
    eo.synthetic_n = 200;
    std::ostringstream o1, o2, l;
    REQUIRE(cli::cmd_eval(cli::GlobalOptions{"", {}, {}, {"R=9", "N=2"}}, eo, o1, l) == 0);
    REQUIRE(cli::cmd_eval(cli::GlobalOptions{"", {}, {}, {"R=7", "N=4"}}, eo, o2, l) == 0);
    const auto j1 = nlohmann::json::parse(o1.str()), j2 = nlohmann::json::parse(o2.str());
    CHECK(j1["read_len"] == 9);
    CHECK(j1["n_jumps"] == 2);
    CHECK(j2["read_len"] == 7);
    CHECK(j2["n_jumps"] == 4);
    CHECK(j1["examples"] == 200);
    CHECK(j1["avg_tokens_read"] != j2["avg_tokens_read"]);
    CHECK(slurp(c.checkpoint_path) == before);

    CHECK_THROWS_AS(cli::cmd_eval(cli::GlobalOptions{"", {}, {}, {"K=4"}}, eo, o1, l), InputError);
  }

  SECTION("eval against a baseline report") {
    cli::EvalOptions eo;
    eo.checkpoint = c.checkpoint_path;
    eo.synthetic_n = 100;
    eo.jumping = false;
    std::ostringstream plain, l;
    REQUIRE(cli::cmd_eval({}, eo, plain, l) == 0);
    const auto pj = nlohmann::json::parse(plain.str());
    CHECK(pj["jumping"] == false);
    CHECK(pj["avg_tokens_read"] == 12.0);
    const fs::path report = dir / "plain.jsonl";
    std::ofstream(report) << "not json\n" << plain.str();

    eo.jumping.reset();
    eo.baseline_report = report.string();
    std::ostringstream jumped;
    REQUIRE(cli::cmd_eval({}, eo, jumped, l) == 0);
    const auto jj = nlohmann::json::parse(jumped.str());
    CHECK(jj["baseline_wall_time"] == pj["wall_time"]);
    CHECK_THAT(jj["tokens_read_reduction"].get<double>(),
               Catch::Matchers::WithinRel(12.0 / jj["avg_tokens_read"].get<double>(), 1e-12));
    if (jj["wall_time"].get<double>() > 0) {
      CHECK_THAT(jj["speedup"].get<double>(),
                 Catch::Matchers::WithinRel(pj["wall_time"].get<double>() / jj["wall_time"].get<double>(), 1e-12));
    }
  }

  SECTION("missing checkpoint") {
    cli::EvalOptions eo;
    eo.checkpoint = (dir / "absent.ljmp").string();
    std::ostringstream o, l;
    CHECK_THROWS_WITH(cli::cmd_eval({}, eo, o, l), Catch::Matchers::ContainsSubstring("absent.ljmp"));
  }

  SECTION("inspect-trace") {
    cli::EvalOptions eo;
    eo.checkpoint = c.checkpoint_path;
    std::ostringstream o, l;
    REQUIRE(cli::cmd_inspect_trace({}, eo, 0, o, l) == 0);
    CHECK(o.str().empty());
    REQUIRE(cli::cmd_inspect_trace({}, eo, 5, o, l) == 0);
    std::istringstream in(o.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 5);
      CHECK(line.rfind(std::to_string(n) + "\t", 0) == 0);
      ++n;
    }
    CHECK(n == 5);
  }

  SECTION("a policy that always jumps one reads contiguously") {
    Checkpoint ck = load_checkpoint(c.checkpoint_path);
    ck.params.jump.w.set_zero();
    ck.params.jump.bias.set_zero();
    ck.params.jump.bias[1] = 50.0f;
    const std::string path = (dir / "stub.ljmp").string();
    save_checkpoint(path, ck);
    cli::EvalOptions eo;
    eo.checkpoint = path;
    std::ostringstream o, l;
    REQUIRE(cli::cmd_inspect_trace({}, eo, 3, o, l) == 0);
    // R = 2, N = 3 on 12 tokens: 8 contiguous tokens, then the jump budget runs out.
    std::istringstream in(o.str());
    std::string line;
    while (std::getline(in, line)) CHECK(line.find("\tMaxJumps\t8\t0,1,2,3,4,5,6,7\t1,1,1\t") != std::string::npos);
  }

  SECTION("resume continues the step counter") {
    RunConfig more = c;
    more.max_steps = 10;
    more.checkpoint_path = (dir / "resumed.ljmp").string();
    std::ostringstream o, l;
    const auto saved_step = load_checkpoint(c.checkpoint_path).step;
    REQUIRE(cli::cmd_train(more, cli::TrainOptions{c.checkpoint_path}, o, l) == 0);
    const auto r = json_lines(o.str());
    REQUIRE(!r.empty());
    CHECK(r.back()["steps"] == 10);
    std::uint64_t prev = saved_step;
    for (const auto& rec : r) {
      if (rec["event"] == "train_done") continue;
      CHECK(rec["step"].get<std::uint64_t>() > prev);
      prev = rec["step"].get<std::uint64_t>();
    }
    RunConfig other = more;
    other.hidden = 9;
    CHECK_THROWS_AS(cli::cmd_train(other, cli::TrainOptions{c.checkpoint_path}, o, l), InputError);
  }
}

TEST_CASE("corpus training stores its vocabulary") {
  const fs::path dir = scratch_dir("corpus");
  RunConfig c = load_config(std::string(LSTMJUMP_SOURCE_DIR) + "/configs/rt.cfg");
  c.train_path = std::string(LSTMJUMP_SOURCE_DIR) + "/data/toy_rt.tsv";
  c.valid_path = c.train_path;
  c.test_path = c.train_path;
  c.hidden = 8;
  c.embed_dim = 4;
  c.embeddings_path.clear();
  c.max_steps = 2;
  c.eval_every = 1;
  c.checkpoint_path = (dir / "rt.ljmp").string();
  std::ostringstream out, log;
  REQUIRE(cli::cmd_train(c, {}, out, log) == 0);
  const Checkpoint ck = load_checkpoint(c.checkpoint_path);
  REQUIRE(ck.vocab);
  CHECK(ck.vocab->size() == ck.params.shape.vocab_size);
  CHECK(ck.vocab->lookup("movie") != Vocabulary::kUnk);

  cli::EvalOptions eo;
  eo.checkpoint = c.checkpoint_path;
  std::ostringstream o, l;
  REQUIRE(cli::cmd_eval({}, eo, o, l) == 0);
  CHECK(nlohmann::json::parse(o.str())["examples"].get<std::size_t>() > 0);
}
