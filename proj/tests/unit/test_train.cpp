#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "coex/train.hpp"

using namespace coex;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("coex_test_" + name)).string();
}

TrainConfig tiny_train() {
  TrainConfig c = TrainConfig::desk();
  c.episodes_per_batch = 6;
  c.total_episodes = 18;
  c.minibatches = 2;
  c.epochs = 2;
  return c;
}

EpisodeConfig short_env(double p_multi) {
  EpisodeConfig c = EpisodeConfig::smoke();
  c.p_multi = p_multi;
  c.step_limit = 60;
  return c;
}

StageProgress progress(int depth, int done) {
  StageProgress p = StageProgress::fresh(depth);
  for (int s = 0; s < done; ++s) {
    p.completed[static_cast<std::size_t>(s)] = true;
    p.completed_at[static_cast<std::size_t>(s)] = 10 * (s + 1);
  }
  return p;
}

}  // namespace

TEST_SUITE("trainer") {
TEST_CASE("collected streams are per agent and rewards are joint in shared worlds") {
  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 1);
  EpisodeConfig env = short_env(0.5);
  env.depth = 2;
  env.sampler = {};
  const CollectedBatch b = collect_batch({&agents.nets[0], &agents.nets[1]}, env, 12, 7, 0);
  REQUIRE(b.episodes.size() == 12);
  int multi = 0, single = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const AgentEpisode& e0 = b.experience[0][i];
    const AgentEpisode& e1 = b.experience[1][i];
    CHECK(e0.length == e1.length);
    CHECK(e0.obs.size() == static_cast<std::size_t>(e0.length * kSymbolicWidth));
    CHECK(e0.reward.size() == static_cast<std::size_t>(e0.length));
    CHECK(e0.value.size() == static_cast<std::size_t>(e0.length));
    if (b.episodes[i].mode == Mode::kMulti) {
      ++multi;
      CHECK(e0.reward == e1.reward);
      CHECK(b.episodes[i].progress[0] == b.episodes[i].progress[1]);
    } else {
      ++single;
    }
    // The first step has no previous action or reward.
    for (int k = 0; k < kPrevWidth; ++k) CHECK(e0.prev[static_cast<std::size_t>(k)] == 0.0);
  }
  CHECK(multi > 0);
  CHECK(single > 0);
}

TEST_CASE("collection is a pure function of its seeds") {
  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 2);
  const EpisodeConfig env = short_env(0.5);
  const auto a = collect_batch({&agents.nets[0], &agents.nets[1]}, env, 5, 11, 40);
  const auto b = collect_batch({&agents.nets[0], &agents.nets[1]}, env, 5, 11, 40);
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(a.experience[k][i].obs == b.experience[k][i].obs);
      CHECK(a.experience[k][i].reward == b.experience[k][i].reward);
    }
  }
  // Episode i of a batch starting at index 40 is episode 40 + i.
  const auto c = collect_batch({&agents.nets[0], &agents.nets[1]}, env, 1, 11, 42);
  CHECK(c.episodes[0].seed == a.episodes[2].seed);
  CHECK(c.experience[0][0].obs == a.experience[0][2].obs);
}

TEST_CASE("an agent's update ignores the other agent's experience") {
  const AgentPair start = AgentPair::fresh(NetShape::symbolic(), 3);
  const CollectedBatch full =
      collect_batch({&start.nets[0], &start.nets[1]}, short_env(0.5), 8, 5, 0);
  const TrainConfig cfg = tiny_train();
  const Rng rng(9);

  AgentPair a = start;
  update_agents(a, full, cfg, 1e-3, rng);

  CollectedBatch without = full;
  without.experience[1].clear();
  AgentPair b = start;
  update_agents(b, without, cfg, 1e-3, rng);
  CHECK(a.nets[0].params() == b.nets[0].params());
  CHECK(b.nets[1].params() == start.nets[1].params());

  // Swapping in someone else's stream changes nothing for agent 0 either.
  CollectedBatch foreign = full;
  foreign.experience[1] = collect_batch({&start.nets[0], &start.nets[1]}, short_env(0.0), 3, 77, 0).experience[1];
  AgentPair c = start;
  update_agents(c, foreign, cfg, 1e-3, rng);
  CHECK(c.nets[0].params() == a.nets[0].params());
  CHECK(c.nets[1].params() != a.nets[1].params());
}

TEST_CASE("three seeded batches are reproducible") {
  auto run = [] {
    TrainSetup s;
    s.env = short_env(0.5);
    s.train = tiny_train();
    s.seed = 4;
    s.eval_every = 3;
    s.eval_episodes = 4;
    AgentPair agents = AgentPair::fresh(s.shape, s.seed);
    TrainResult r = train(s, agents);
    return std::make_pair(r, agents);
  };
  const auto [r1, a1] = run();
  const auto [r2, a2] = run();
  REQUIRE(r1.history.size() == 3);
  REQUIRE(r2.history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1.history[i].update == r2.history[i].update);
    CHECK(r1.history[i].train.stage_success == r2.history[i].train.stage_success);
  }
  CHECK(a1.nets[0].params() == a2.nets[0].params());
  CHECK(a1.nets[1].params() == a2.nets[1].params());
  CHECK(r1.episodes == 18);
  CHECK(r1.history.back().eval.has_value());
  CHECK_FALSE(r1.history.front().eval.has_value());
  CHECK(r1.history[1].lr < r1.history[0].lr);
}

TEST_CASE("metrics records carry the per-batch triplet") {
  const std::string path = temp_path("metrics.jsonl");
  std::filesystem::remove(path);
  TrainSetup s;
  s.env = short_env(0.5);
  s.train = tiny_train();
  s.train.total_episodes = 12;
  s.eval_every = 1;
  s.eval_episodes = 4;
  s.metrics_path = path;
  AgentPair agents = AgentPair::fresh(s.shape, 0);
  train(s, agents);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("batch"));
    CHECK(j["train"].contains("stage_success"));
    CHECK(j["eval"].contains("single_success"));
    CHECK(j["eval"].contains("skill_difference"));
    CHECK(j["update"].size() == 2);
    ++lines;
  }
  CHECK(lines == 2);
  std::filesystem::remove(path);
}

TEST_CASE("a non-finite loss aborts with a checkpoint") {
  const std::string path = temp_path("nan.ckpt");
  std::filesystem::remove(path);
  TrainSetup s;
  s.env = short_env(0.5);
  s.train = tiny_train();
  s.checkpoint_path = path;
  AgentPair agents = AgentPair::fresh(s.shape, 0);
  agents.nets[0].view("v.b3")[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(s, agents), std::runtime_error);
  CHECK(std::filesystem::exists(path));
  std::filesystem::remove(path);
}

TEST_CASE("summaries count worlds, single-agent success and skill difference") {
  std::vector<EpisodeRecord> recs;
  // Multi: one world, two of three stages.
  recs.push_back({1, Mode::kMulti, 3, {progress(3, 2), progress(3, 2)}});
  // Single: agent 0 solves all, agent 1 reaches stage 1.
  recs.push_back({2, Mode::kSingle, 3, {progress(3, 3), progress(3, 1)}});
  recs.push_back({3, Mode::kSingle, 3, {progress(3, 3), progress(3, 0)}});
  const Summary s = summarize(recs);
  CHECK(s.episodes == 3);
  CHECK(s.multi_episodes == 1);
  CHECK(s.single_episodes == 2);
  // Five worlds: stage 1 in 4, stage 2 in 3, stage 3 in 2.
  CHECK(s.stage_success == std::vector<double>{0.8, 0.6, 0.4});
  CHECK(s.single_success[0] == 1.0);
  CHECK(s.single_success[1] == 0.0);
  CHECK(s.skill_difference == 1.0);
  CHECK(s.multi_success == 0.0);
  CHECK_THROWS_AS(summarize({}), std::invalid_argument);

  const Summary m = summarize({recs[0]});
  CHECK(std::isnan(m.skill_difference));
  CHECK(std::isnan(m.single_success[0]));
}

TEST_CASE("single-agent evaluation runs only single-agent episodes") {
  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 6);
  const Summary s = evaluate_single(agents, short_env(1.0), 6, 3);
  CHECK(s.single_episodes == 6);
  CHECK(s.multi_episodes == 0);
  const Summary again = evaluate_single(agents, short_env(1.0), 6, 3);
  CHECK(again.stage_success == s.stage_success);
}

TEST_CASE("networks must match the observation mode") {
  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 0);
  EpisodeConfig env = short_env(0.5);
  env.obs = ObsMode::kPixel;
  CHECK_THROWS_AS(collect_batch({&agents.nets[0], &agents.nets[1]}, env, 2, 0, 0), std::invalid_argument);
}

TEST_CASE("learned policy is deterministic when greedy") {
  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 8);
  EpisodeConfig env = short_env(1.0);
  env.seed = 12;
  auto run = [&] {
    Episode ep(env);
    ep.reset();
    LearnedPolicy policy(agents.nets, 0, true);
    std::vector<double> turns;
    while (!ep.done()) {
      const auto cmds = policy.act(ep);
      turns.push_back(cmds[0].turn);
      ep.step(cmds);
    }
    return turns;
  };
  const auto a = run();
  CHECK(a.size() == 60);
  CHECK(a == run());
}

TEST_CASE("checkpoint round trip") {
  const std::string path = temp_path("rt.ckpt");
  AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 10);
  save_checkpoint(path, agents, 0xabcdef, 4242);
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.config_hash == 0xabcdef);
  CHECK(c.episodes == 4242);
  CHECK(c.nets[0].params() == agents.nets[0].params());
  CHECK(c.nets[1].params() == agents.nets[1].params());
  CHECK(c.nets[1].shape() == agents.nets[1].shape());

  const AgentPair pixel = AgentPair::fresh(NetShape::pixel(), 1);
  save_checkpoint(path, pixel, 1, 2);
  CHECK(load_checkpoint(path).nets[0].shape() == NetShape::pixel());
  std::filesystem::remove(path);
}

TEST_CASE("bad checkpoints are rejected") {
  const std::string path = temp_path("bad.ckpt");
  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), std::runtime_error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  const AgentPair agents = AgentPair::fresh(NetShape::symbolic(), 10);
  save_checkpoint(path, agents, 1, 1);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 16);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  save_checkpoint(path, agents, 1, 1);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t version = 99;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}
}
