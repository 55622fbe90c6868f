#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "coex/reward.hpp"
#include "coex/rng.hpp"

using namespace coex;

namespace {

StageProgress completed_through(int depth, int k) {
  StageProgress p = StageProgress::fresh(depth);
  for (int s = 1; s <= k; ++s) {
    const StageCompletion c{s, 10 * s};
    on_events(p, {&c, 1}, RewardConfig{});
  }
  return p;
}

}  // namespace

TEST_SUITE("reward_machine") {
TEST_CASE("bonuses") {
  RewardConfig cfg;
  StageProgress p = StageProgress::fresh(3);
  const StageCompletion s1{1, 120};
  CHECK(on_events(p, {&s1, 1}, cfg) == 1.0);
  const StageCompletion s2{2, 130};
  CHECK(on_events(p, {&s2, 1}, cfg) == 3.0);
  const StageCompletion s3{3, 131};
  CHECK(on_events(p, {&s3, 1}, cfg) == 9.0);
  CHECK(p.all_complete());

  cfg.bonus_enabled = false;
  StageProgress q = StageProgress::fresh(3);
  const StageCompletion all[] = {{1, 5}, {2, 6}, {3, 7}};
  CHECK(on_events(q, all, cfg) == 0.0);
  CHECK(q.completed == std::vector<bool>{true, true, true});
}

TEST_CASE("timestep reward formula") {
  const RewardConfig cfg;
  CHECK(timestep_reward(StageProgress::fresh(3), cfg) == 0.0);
  CHECK(timestep_reward(completed_through(3, 1), cfg) == doctest::Approx(0.02));
  CHECK(timestep_reward(completed_through(3, 3), cfg) == doctest::Approx(0.26));
  CHECK(timestep_reward(completed_through(6, 6), cfg) == doctest::Approx(0.02 * 364));
}

TEST_CASE("out-of-order completions are rejected") {
  StageProgress p = StageProgress::fresh(3);
  const StageCompletion skip{2, 4};
  CHECK_THROWS_AS(on_events(p, {&skip, 1}, RewardConfig{}), std::logic_error);
  const StageCompletion a{1, 4}, same{2, 4};
  on_events(p, {&a, 1}, RewardConfig{});
  CHECK_THROWS_AS(on_events(p, {&same, 1}, RewardConfig{}), std::logic_error);
}

TEST_CASE("config validation") {
  RewardConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta = 1.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.r0 = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.b0 = -1.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("episode outcomes") {
  CHECK(episode_outcome(completed_through(3, 3)) == EpisodeOutcome{{true, true, true}, 3});
  CHECK(episode_outcome(completed_through(3, 1)) == EpisodeOutcome{{true, false, false}, 1});
  CHECK(episode_outcome(completed_through(6, 4)).highest_stage == 4);
  CHECK(episode_outcome(StageProgress::fresh(2)).highest_stage == 0);
}

TEST_CASE("exponential dominance for beta >= 2 and depth <= 6") {
  for (double beta : {2.0, 3.0, 4.5}) {
    RewardConfig cfg;
    cfg.beta = beta;
    for (int d = 1; d <= 6; ++d) {
      for (int s = 0; s < d; ++s) {
        const double below = timestep_reward(completed_through(d, s), cfg);
        const double increment = timestep_reward(completed_through(d, s + 1), cfg) - below;
        CHECK(increment > below);
        // Geometric series: the increment is r0 * beta^s, the rest r0 * (beta^s - 1) / (beta - 1).
        CHECK(increment == doctest::Approx(cfg.r0 * std::pow(beta, s)));
      }
    }
  }
}

TEST_CASE("property: progress stays prefix-closed and returns are monotone") {
  Rng rng(2024);
  const RewardConfig cfg;
  for (int stream = 0; stream < 1000; ++stream) {
    const int depth = 1 + static_cast<int>(rng.below(6));
    StageProgress p = StageProgress::fresh(depth);
    double total = 0.0;
    int t = 0;
    for (int step = 0; step < 200; ++step) {
      ++t;
      if (p.frontier() <= depth && rng.bernoulli(0.05)) {
        const StageCompletion c{p.frontier(), t};
        const double bonus = on_events(p, {&c, 1}, cfg);
        REQUIRE(bonus >= 0.0);
        total += bonus;
      }
      const double r = timestep_reward(p, cfg);
      REQUIRE(r >= 0.0);
      total += r;
      for (int s = 1; s < depth; ++s) {
        if (p.completed[static_cast<std::size_t>(s)]) REQUIRE(p.completed[static_cast<std::size_t>(s - 1)]);
        if (p.completed[static_cast<std::size_t>(s)]) REQUIRE(p.completed_at[static_cast<std::size_t>(s)] > p.completed_at[static_cast<std::size_t>(s - 1)]);
      }
    }
    REQUIRE(total >= 0.0);
  }
}

TEST_CASE("earlier completion never lowers the return") {
  const RewardConfig cfg;
  auto episode_return = [&](std::vector<int> times, int limit) {
    StageProgress p = StageProgress::fresh(static_cast<int>(times.size()));
    double total = 0.0;
    for (int t = 0; t < limit; ++t) {
      for (std::size_t s = 0; s < times.size(); ++s) {
        if (times[s] == t) {
          const StageCompletion c{static_cast<int>(s) + 1, t};
          total += on_events(p, {&c, 1}, cfg);
        }
      }
      total += timestep_reward(p, cfg);
    }
    return total;
  };
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<int> times;
    int t = 0;
    for (int s = 0; s < 3; ++s) {
      t += 1 + static_cast<int>(rng.below(100));
      times.push_back(t);
    }
    const double base = episode_return(times, 400);
    std::vector<int> earlier = times;
    const auto s = static_cast<std::size_t>(rng.below(3));
    const int floor = s == 0 ? 0 : earlier[s - 1] + 1;
    if (earlier[s] > floor) earlier[s] -= 1;
    CHECK(episode_return(earlier, 400) >= base);
  }
}
}
