#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <numbers>
#include <sstream>

#include "coex/episode.hpp"
#include "coex/oracle.hpp"

using namespace coex;

namespace {

using Joint = std::array<ActionCommand, kNumAgents>;

EpisodeConfig config(int depth, double p_multi, std::uint64_t seed) {
  EpisodeConfig c;
  c.depth = depth;
  c.p_multi = p_multi;
  c.seed = seed;
  return c;
}

std::string record(EpisodeConfig c, int steps) {
  c.record_trace = true;
  Episode ep(c);
  ep.reset();
  RandomPolicy pol(c.seed);
  for (int i = 0; i < steps && !ep.done(); ++i) ep.step(pol.act(ep));
  ScriptedOracle oracle(2);
  while (!ep.done()) ep.step(oracle.act(ep));
  std::ostringstream out;
  ep.write_trace(out);
  return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + '\n';
  return s;
}

}  // namespace

TEST_SUITE("episode_engine") {
TEST_CASE("mode sampling") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) CHECK(sample_mode(rng, 1.0) == Mode::kMulti);
  for (int i = 0; i < 200; ++i) CHECK(sample_mode(rng, 0.0) == Mode::kSingle);
  int multi = 0;
  for (int i = 0; i < 10000; ++i) multi += sample_mode(rng, 0.5) == Mode::kMulti;
  CHECK(multi >= 4800);
  CHECK(multi <= 5200);
}

TEST_CASE("config validation and presets") {
  EpisodeConfig c;
  CHECK(c.depth == 3);
  CHECK(c.step_limit == 1000);
  CHECK(c.p_multi == 0.5);
  CHECK_FALSE(c.terminate_on_success);
  const EpisodeConfig open = EpisodeConfig::open_ended();
  CHECK(open.depth == 6);
  CHECK(open.step_limit == 4000);
  CHECK_FALSE(open.reward.bonus_enabled);
  c.step_limit = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.p_multi = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  EpisodeConfig j = EpisodeConfig::smoke();
  j.seed = 123456789012345ULL;
  CHECK(config_from_json(config_to_json(j)) == j);
  CHECK_THROWS_AS(config_from_json("{not json"), std::invalid_argument);
}

TEST_CASE("reset: single mode has two worlds, multi mode one shared world") {
  Episode single(config(3, 0.0, 4));
  const auto o1 = single.reset();
  CHECK(single.mode() == Mode::kSingle);
  CHECK(single.slot_count() == 2);
  CHECK(single.slot(0).task.world.agents.size() == 1);
  for (const auto& o : o1) {
    CHECK(o.prev_reward == 0.0);
    CHECK(o.prev_action == std::array<double, 4>{});
    CHECK(static_cast<int>(o.view.size()) == kSymbolicWidth);
  }
  Episode multi(config(3, 1.0, 4));
  multi.reset();
  CHECK(multi.mode() == Mode::kMulti);
  CHECK(multi.slot_count() == 1);
  CHECK(multi.slot(0).task.world.agents.size() == 2);
  CHECK(multi.slot_of(0) == multi.slot_of(1));
}

TEST_CASE("same config and seed, same observations") {
  Episode a(config(3, 0.5, 77)), b(config(3, 0.5, 77));
  const auto oa = a.reset();
  const auto ob = b.reset();
  for (std::size_t k = 0; k < kNumAgents; ++k) CHECK(oa[k].view == ob[k].view);
}

TEST_CASE("single mode isolation: agent 0 never affects agent 1's world") {
  Episode a(config(2, 0.0, 9)), b(config(2, 0.0, 9));
  a.reset();
  b.reset();
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    const ActionCommand other{rng.uniform(-1, 1), rng.uniform(), rng.bernoulli(0.5), rng.bernoulli(0.2)};
    const ActionCommand mine{0.3, 0.5, true, false};
    const Joint ja{other, mine};
    const Joint jb{ActionCommand{}, mine};
    a.step(ja);
    b.step(jb);
    REQUIRE(a.slot(1).task.world == b.slot(1).task.world);
  }
}

TEST_CASE("no-op steps time out with zero reward") {
  Episode ep(config(3, 0.5, 5));
  ep.reset();
  int steps = 0;
  StepResult r;
  while (!ep.done()) {
    r = ep.step(Joint{});
    ++steps;
    CHECK(r.reward[0] == 0.0);
    CHECK(r.reward[1] == 0.0);
  }
  CHECK(steps == 1000);
  CHECK(episode_outcome(ep.progress(0)).stage_success == std::vector<bool>{false, false, false});
  CHECK_THROWS_AS(ep.step(Joint{}), std::logic_error);
}

TEST_CASE("reward becomes r0 from the step after stage 1 completes") {
  EpisodeConfig c = config(3, 1.0, 11);
  c.reward.bonus_enabled = false;
  Episode ep(c);
  ep.reset();
  ScriptedOracle oracle(2);
  int k = -1;
  while (!ep.done()) {
    const StepResult r = ep.step(oracle.act(ep));
    if (k < 0 && r.progress[0].completed[0]) {
      k = r.progress[0].completed_at[0];
      // The completing step itself pays nothing without bonuses.
      CHECK(r.reward[0] == 0.0);
      continue;
    }
    if (k >= 0 && !r.progress[0].completed[1]) {
      CHECK(r.reward[0] == doctest::Approx(c.reward.r0));
      CHECK(r.reward[1] == r.reward[0]);
    }
  }
  CHECK(k >= 0);
}

TEST_CASE("terminate_on_success ends the episode at completion") {
  EpisodeConfig c = config(3, 1.0, 12);
  c.terminate_on_success = true;
  Episode ep(c);
  ep.reset();
  ScriptedOracle oracle(2);
  while (!ep.done()) ep.step(oracle.act(ep));
  CHECK(ep.progress(0).all_complete());
  CHECK(ep.t() < c.step_limit);
  CHECK(ep.t() == ep.progress(0).completed_at[2] + 1);
}

TEST_CASE("sequentiality: stages complete strictly in order") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EpisodeConfig c = config(4, 0.5, seed);
    Episode ep(c);
    ep.reset();
    ScriptedOracle oracle(2);
    while (!ep.done()) {
      const StepResult r = ep.step(oracle.act(ep));
      for (const StageProgress& p : r.progress) {
        for (int s = 1; s < p.depth; ++s) {
          if (p.completed[static_cast<std::size_t>(s)]) REQUIRE(p.completed[static_cast<std::size_t>(s - 1)]);
        }
      }
    }
  }
}

TEST_CASE("joint reward in multi mode") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Episode ep(config(3, 1.0, seed));
    ep.reset();
    ScriptedOracle oracle(2);
    while (!ep.done()) {
      const StepResult r = ep.step(oracle.act(ep));
      REQUIRE(r.reward[0] == r.reward[1]);
    }
  }
}

TEST_CASE("symbolic observation layout") {
  EpisodeConfig c = config(3, 1.0, 21);
  Episode ep(c);
  ep.reset();
  const WorldState& w = ep.slot(0).task.world;
  const auto v = symbolic_obs(w, 0);
  REQUIRE(static_cast<int>(v.size()) == kSymbolicWidth);
  const auto vis = visible_entities(w, 0, w.arena.view_radius);
  const std::size_t used = std::min<std::size_t>(vis.size(), kObsSlots);
  for (std::size_t i = 0; i < static_cast<std::size_t>(kObsSlots); ++i) {
    const double* s = v.data() + i * kSlotFeatures;
    double mass = 0.0;
    for (int f = 0; f < kSlotFeatures; ++f) mass += std::abs(s[f]);
    if (i >= used) {
      CHECK(mass == 0.0);
      continue;
    }
    CHECK(mass > 0.0);
    CHECK(std::abs(s[slot::kRelX]) <= 1.0 + 1e-12);
    CHECK(std::abs(s[slot::kRelY]) <= 1.0 + 1e-12);
  }
  // Self heading and held flag in the tail.
  const double* tail = v.data() + kObsSlots * kSlotFeatures;
  CHECK(tail[0] == doctest::Approx(std::sin(w.agents[0].heading)));
  CHECK(tail[1] == doctest::Approx(std::cos(w.agents[0].heading)));
  CHECK(tail[2] == 0.0);
}

TEST_CASE("information hiding: only the world within view matters") {
  Episode ep(config(3, 1.0, 30));
  ep.reset();
  WorldState w = ep.slot(0).task.world;
  const auto base = symbolic_obs(w, 0);
  CHECK(ep.observe(0).view == base);
  // Moving an entity that is out of view (and staying out of view) changes nothing.
  for (Entity& e : w.entities) {
    const double d = distance(e.position, w.agents[0].position);
    if (d > w.arena.view_radius + 30 && e.spec.is_task() && !e.held_by) {
      WorldState moved = w;
      Entity* m = moved.find(e.id);
      const Vec2 away = m->position - w.agents[0].position;
      m->position = m->position + away * (1.0 / away.norm());
      CHECK(symbolic_obs(moved, 0) == base);
      CHECK(render_pixel_obs(moved, 0) == render_pixel_obs(w, 0));
      break;
    }
  }
}

TEST_CASE("pixel observations") {
  Episode ep(config(3, 1.0, 31));
  ep.reset();
  WorldState w = ep.slot(0).task.world;
  const auto img = render_pixel_obs(w, 0);
  REQUIRE(static_cast<int>(img.size()) == kPixelWidth);
  for (double x : img) {
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
  }
  // Corners of the crop lie beyond the view radius and are black.
  for (int c = 0; c < 3; ++c) CHECK(img[static_cast<std::size_t>(c)] == 0.0);

  SUBCASE("an entity just outside the radius is not drawn") {
    WorldState empty = w;
    empty.entities.clear();
    empty.agents.resize(1);
    WorldState one = empty;
    const Vec2 p = empty.agents[0].position + heading_vector(empty.agents[0].heading) * (empty.arena.view_radius + 7.0);
    one.add_entity(ObjectSpec::task(Shape::kCircle, Color::kRed), p);
    CHECK(render_pixel_obs(one, 0) == render_pixel_obs(empty, 0));
  }
  SUBCASE("heading-up frame: rotating agent and world by pi rotates the image by pi") {
    WorldState a = WorldState::empty(ArenaConfig::single_room());
    a.agents.push_back({0, {80, 80}, 0.3, std::nullopt});
    a.add_entity(ObjectSpec::task(Shape::kSquare, Color::kBlue), {80 + 30 * std::cos(0.9), 80 + 30 * std::sin(0.9)});
    a.add_entity(ObjectSpec::environment(EnvKind::kLandmark), {80 - 25, 80 + 10});
    WorldState b = WorldState::empty(ArenaConfig::single_room());
    b.agents.push_back({0, {80, 80}, wrap_angle(0.3 + std::numbers::pi), std::nullopt});
    for (const Entity& e : a.entities) b.add_entity(e.spec, Vec2{160, 160} - e.position);
    const auto ia = render_pixel_obs(a, 0);
    const auto ib = render_pixel_obs(b, 0);
    // The agent's frame is identical, so the images agree up to rasterization at edges.
    int differ = 0;
    for (std::size_t i = 0; i < ia.size(); ++i) differ += std::abs(ia[i] - ib[i]) > 1e-9;
    CHECK(differ < static_cast<int>(ia.size() / 100));
  }
}

TEST_CASE("record and replay reproduce the episode") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    EpisodeConfig c = config(1 + static_cast<int>(seed % 3), 0.5, seed);
    const std::string trace = record(c, 150);
    std::istringstream in(trace);
    const ReplayReport r = replay_trace(in);
    CHECK(r.ok);
    CHECK(r.divergent_step == -1);
    // Byte-stable.
    CHECK(trace == record(c, 150));
  }
}

TEST_CASE("a corrupted action is reported at its step") {
  const std::string trace = record(config(2, 1.0, 3), 200);
  auto lines = lines_of(trace);
  const int k = 57;
  std::istringstream fields(lines[static_cast<std::size_t>(k + 1)]);
  std::vector<std::string> f;
  for (std::string x; fields >> x;) f.push_back(x);
  f[2] = f[2] == "1" ? "0.5" : "1";
  std::string rebuilt;
  for (std::size_t i = 0; i < f.size(); ++i) rebuilt += (i ? " " : "") + f[i];
  lines[static_cast<std::size_t>(k + 1)] = rebuilt;
  std::istringstream in(join(lines));
  const ReplayReport r = replay_trace(in);
  CHECK_FALSE(r.ok);
  CHECK(r.divergent_step == k);
}

TEST_CASE("a malformed record is rejected with its line number") {
  auto lines = lines_of(record(config(1, 1.0, 4), 30));
  lines[10] = "this is not a step record";
  std::istringstream in(join(lines));
  const ReplayReport r = replay_trace(in);
  CHECK_FALSE(r.ok);
  CHECK(r.malformed_line == 11);
  std::istringstream empty("");
  CHECK(replay_trace(empty).malformed_line == 1);
}

TEST_CASE("a 4000-step depth-6 episode replays") {
  EpisodeConfig c = EpisodeConfig::open_ended();
  c.seed = 17;
  c.p_multi = 0.5;
  c.record_trace = true;
  Episode ep(c);
  ep.reset();
  RandomPolicy pol(1);
  while (!ep.done()) ep.step(pol.act(ep));
  CHECK(ep.t() == 4000);
  std::ostringstream out;
  ep.write_trace(out);
  std::istringstream in(out.str());
  CHECK(replay_trace(in).ok);
}
}
