#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "coex/oracle.hpp"

using namespace coex;

namespace {

WorldState lone_agent(Vec2 p, double heading) {
  WorldState w = WorldState::empty(ArenaConfig{});
  w.agents.push_back({0, p, heading, std::nullopt});
  w.agents.push_back({1, {300, 300}, 0.0, std::nullopt});
  return w;
}

int steps_to_arrive(WorldState w, Vec2 target, int cap) {
  for (int t = 0; t < cap; ++t) {
    if (distance(w.agents[0].position, target) <= w.arena.reach) return t;
    const ActionCommand cmds[] = {navigate(w, 0, target), {}};
    advance_physics(w, cmds);
  }
  return cap;
}

EpisodeConfig custom(TaskType type, std::uint64_t seed) {
  EpisodeConfig c;
  c.depth = 1;
  c.p_multi = 1.0;
  c.seed = seed;
  c.terminate_on_success = true;
  c.sampler.allowed_types = {type};
  return c;
}

}  // namespace

TEST_SUITE("oracle_agents") {
TEST_CASE("navigate: same room arrives within the geometric bound") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec2 from{rng.uniform(20, 140), rng.uniform(20, 140)};
    const Vec2 to{rng.uniform(20, 140), rng.uniform(20, 140)};
    const double heading = rng.uniform(0, 2 * std::numbers::pi);
    const WorldState w = lone_agent(from, heading);
    const double d = distance(from, to);
    const int bound = static_cast<int>(std::ceil(d / w.arena.v_max)) +
                      static_cast<int>(std::ceil(std::numbers::pi / w.arena.turn_max)) + 1;
    CHECK(steps_to_arrive(w, to, 400) <= bound);
  }
}

TEST_CASE("navigate: diagonal rooms route through two doorways") {
  const ArenaConfig a;
  const auto wps = route(a, {60, 60}, {260, 260});
  REQUIRE(wps.size() >= 3);
  std::set<std::pair<int, int>> rooms;
  for (const Vec2& p : wps) rooms.insert(room_of(a, p));
  CHECK(rooms.size() >= 2);
  const WorldState w = lone_agent({60, 60}, 0.0);
  CHECK(steps_to_arrive(w, {260, 260}, 2000) < 2000);
}

TEST_CASE("navigate: at the target there is no motion") {
  const WorldState w = lone_agent({80, 80}, 1.0);
  const ActionCommand c = navigate(w, 0, {80, 80});
  CHECK(c.forward == 0.0);
  CHECK(c.turn == 0.0);
}

TEST_CASE("privileged oracle solves depth-3 trees alone") {
  int solved = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EpisodeConfig c;
    c.seed = seed;
    c.p_multi = 1.0;
    c.terminate_on_success = true;
    Episode ep(c);
    ep.reset();
    solved += solve_tree(ep, 1).success;
  }
  CHECK(solved >= 95);
}

TEST_CASE("two agents solve forced landmarks") {
  int tried = 0;
  for (std::uint64_t seed = 0; tried < 20 && seed < 500; ++seed) {
    EpisodeConfig c;
    c.depth = 2;
    c.forced = true;
    c.p_multi = 1.0;
    c.seed = seed;
    c.terminate_on_success = true;
    c.sampler.allowed_types = {TaskType::kForcedLandmarks, TaskType::kCrafting};
    Episode ep(c);
    ep.reset();
    if (ep.slot(0).tree.stage(1).type != TaskType::kForcedLandmarks) continue;
    ++tried;
    const OracleResult r = solve_tree(ep, 2);
    CHECK_MESSAGE(r.success, "seed " << seed << ": " << r.cause);
  }
  CHECK(tried == 20);
}

TEST_CASE("two agents are not slower than one on average") {
  long one = 0, two = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    EpisodeConfig c;
    c.seed = 5000 + seed;
    c.p_multi = 1.0;
    c.terminate_on_success = true;
    Episode a(c), b(c);
    a.reset();
    b.reset();
    one += solve_tree(a, 1).steps;
    two += solve_tree(b, 2).steps;
  }
  CHECK(two <= one);
}

TEST_CASE("brute force: depth-1 crafting within k(k-1)/2 pairings") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EpisodeConfig c = custom(TaskType::kCrafting, seed);
    Episode ep(c);
    ep.reset();
    const int k = ep.slot(0).tree.initial_object_count();
    BruteForceExplorer ex(1);
    const OracleResult r = brute_force_explore(ep, 1, &ex);
    CHECK(r.success);
    CHECK(static_cast<int>(ex.pairing_log(0).size()) <= k * (k - 1) / 2);
  }
}

TEST_CASE("brute force: depth-1 in-out machine within k deliveries") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EpisodeConfig c = custom(TaskType::kInOutMachine, seed);
    Episode ep(c);
    ep.reset();
    const int k = ep.slot(0).tree.initial_object_count();
    REQUIRE(ep.slot(0).tree.stage(1).type == TaskType::kInOutMachine);
    BruteForceExplorer ex(1);
    const OracleResult r = brute_force_explore(ep, 1, &ex);
    CHECK(r.success);
    int deliveries = 0;
    for (const WorldEvent& e : ep.slot(0).log) deliveries += e.kind == EventKind::kMachineSwitched;
    CHECK(deliveries <= k);
  }
}

TEST_CASE("brute force never repeats a pairing across two agents") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    EpisodeConfig c;
    c.seed = seed;
    c.p_multi = 1.0;
    c.terminate_on_success = true;
    Episode ep(c);
    ep.reset();
    BruteForceExplorer ex(2);
    brute_force_explore(ep, 2, &ex);
    const auto& log = ex.pairing_log(0);
    const std::set<std::pair<int, int>> unique(log.begin(), log.end());
    CHECK(unique.size() == log.size());
  }
}

TEST_CASE("brute force solves most depth-3 trees without the tree") {
  int solved = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    EpisodeConfig c;
    c.seed = 700 + seed;
    c.p_multi = 1.0;
    c.terminate_on_success = true;
    Episode ep(c);
    ep.reset();
    solved += brute_force_explore(ep, 2).success;
  }
  CHECK(solved >= 30);
}

TEST_CASE("random policy rarely reaches stage 3") {
  int stage3 = 0, worlds = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    EpisodeConfig c;
    c.seed = seed;
    Episode ep(c);
    ep.reset();
    run_random(ep, seed);
    for (int s = 0; s < ep.slot_count(); ++s) {
      ++worlds;
      stage3 += ep.slot(s).progress.completed[2];
    }
  }
  CHECK(static_cast<double>(stage3) / worlds < 0.02);
}

TEST_CASE("oracle commands only reference live entities") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EpisodeConfig c;
    c.depth = 4;
    c.seed = seed;
    Episode ep(c);
    ep.reset();
    ScriptedOracle o(2);
    while (!ep.done()) {
      ep.step(o.act(ep));
      for (int s = 0; s < ep.slot_count(); ++s) {
        for (const AgentBody& a : ep.slot(s).task.world.agents) {
          if (a.held) REQUIRE(ep.slot(s).task.world.find(*a.held) != nullptr);
        }
      }
    }
  }
}
}
