#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <map>
#include <numbers>

#include "coex/task_tree.hpp"
#include "coex/world.hpp"

using namespace coex;

namespace {

WorldState two_agents(Vec2 p0, double h0, Vec2 p1, double h1) {
  WorldState w = WorldState::empty(ArenaConfig{});
  w.agents.push_back({0, p0, h0, std::nullopt});
  w.agents.push_back({1, p1, h1, std::nullopt});
  return w;
}

bool inside_any_wall(const WorldState& w, Vec2 p) {
  for (const Rect& r : w.walls) {
    if (r.contains_strict(p)) return true;
  }
  return false;
}

ActionCommand random_command(Rng& rng) {
  return {rng.uniform(-1.0, 1.0), rng.uniform(), rng.bernoulli(0.6), rng.bernoulli(0.1)};
}

MaterializedTask random_task(std::uint64_t seed) {
  Rng rng(seed);
  const TaskTree tree = sample_task_tree(rng, 2 + static_cast<int>(rng.below(5)), rng.bernoulli(0.3), training_pool());
  const int ids[] = {0, 1};
  return materialize(tree, rng, ArenaConfig{}, ids);
}

}  // namespace

TEST_SUITE("world") {
TEST_CASE("nine training specs and nine novel specs, disjoint") {
  const auto train = training_pool();
  const auto novel = novel_pool();
  CHECK(train.size() == 9);
  CHECK(novel.size() == 9);
  for (const ObjectSpec& a : train) {
    CHECK(a.is_task());
    CHECK_FALSE(a.is_novel());
    for (const ObjectSpec& b : novel) CHECK_FALSE(a == b);
  }
  for (const ObjectSpec& b : novel) CHECK(b.is_novel());
}

TEST_CASE("object specs round-trip through text") {
  for (const ObjectSpec& s : training_pool()) CHECK(parse_object_spec(to_string(s)) == s);
  for (const ObjectSpec& s : novel_pool()) CHECK(parse_object_spec(to_string(s)) == s);
  for (int k = 0; k < kNumEnvKinds; ++k) {
    const ObjectSpec e = ObjectSpec::environment(static_cast<EnvKind>(k));
    CHECK(parse_object_spec(to_string(e)) == e);
  }
  CHECK_THROWS_AS(parse_object_spec("plaid-hexagon"), std::invalid_argument);
}

TEST_CASE("free-space motion advances exactly v_max along the heading") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const ActionCommand cmds[] = {{0.0, 1.0, false, false}, {}};
  const auto events = advance_physics(w, cmds);
  CHECK(events.empty());
  CHECK(w.agents[0].position.x == doctest::Approx(86.0).epsilon(1e-12));
  CHECK(w.agents[0].position.y == doctest::Approx(80.0).epsilon(1e-12));
  CHECK(w.agents[1].position == Vec2{240, 240});
}

TEST_CASE("turning rotates by turn times turn_max") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const ActionCommand cmds[] = {{0.5, 0.0, false, false}, {-1.0, 0.0, false, false}};
  advance_physics(w, cmds);
  CHECK(w.agents[0].heading == doctest::Approx(std::numbers::pi / 16));
  CHECK(w.agents[1].heading == doctest::Approx(2 * std::numbers::pi - std::numbers::pi / 8));
}

TEST_CASE("commands are clamped, not rejected") {
  const ActionCommand c = ActionCommand{5.0, -2.0, true, false}.clamped();
  CHECK(c.turn == 1.0);
  CHECK(c.forward == 0.0);
  const ActionCommand n = ActionCommand{std::nan(""), INFINITY, false, true}.clamped();
  CHECK(n.turn == 0.0);
  CHECK(n.forward <= 1.0);
}

TEST_CASE("an agent facing a wall stops flush against it") {
  const ArenaConfig a;
  const double wall_face = a.width() - a.wall_thickness;
  // 3 units of clearance, less than one step.
  const double x0 = wall_face - a.agent_radius - 3.0;
  WorldState w = two_agents({x0, 40}, 0.0, {40, 40}, 0.0);
  const ActionCommand cmds[] = {{0.0, 1.0, false, false}, {}};
  advance_physics(w, cmds);
  CHECK(w.agents[0].position.x == doctest::Approx(wall_face - a.agent_radius).epsilon(1e-9));
  CHECK(w.agents[0].position.x + a.agent_radius <= wall_face + 1e-9);
  advance_physics(w, cmds);
  CHECK(w.agents[0].position.x + a.agent_radius <= wall_face + 1e-9);
}

TEST_CASE("agents pass through each other") {
  WorldState w = two_agents({70, 80}, 0.0, {90, 80}, std::numbers::pi);
  const ActionCommand cmds[] = {{0.0, 10.0 / 6.0, false, false}, {0.0, 10.0 / 6.0, false, false}};
  const ActionCommand slow[] = {{0.0, 4.0 / 6.0, false, false}, {0.0, 4.0 / 6.0, false, false}};
  auto e1 = advance_physics(w, cmds);
  auto e2 = advance_physics(w, slow);
  CHECK(e1.empty());
  CHECK(e2.empty());
  CHECK(distance(w.agents[0].position, w.agents[1].position) < 1e-9);
}

TEST_CASE("grasp, hold exclusivity and release") {
  WorldState w = two_agents({80, 80}, 0.0, {110, 80}, std::numbers::pi);
  const int obj = w.add_entity(ObjectSpec::task(Shape::kCircle, Color::kRed), {95, 80});
  resolve_grasp(w, 0, true);
  REQUIRE(w.agents[0].held == obj);
  CHECK(w.find(obj)->held_by == 0);
  // The other agent cannot take it.
  resolve_grasp(w, 1, true);
  CHECK_FALSE(w.agents[1].held.has_value());
  CHECK(w.find(obj)->held_by == 0);
  // Grasping again while holding changes nothing.
  resolve_grasp(w, 0, true);
  CHECK(w.agents[0].held == obj);
  const Vec2 at = w.find(obj)->position;
  resolve_grasp(w, 0, false);
  CHECK_FALSE(w.agents[0].held.has_value());
  CHECK_FALSE(w.find(obj)->held_by.has_value());
  CHECK(w.find(obj)->position == at);
}

TEST_CASE("grasp out of reach and of environment objects does nothing") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  w.add_entity(ObjectSpec::task(Shape::kSquare, Color::kBlue), {80 + 20 + 6 + 0.5, 80});
  w.add_entity(ObjectSpec::environment(EnvKind::kLandmark), {80, 90});
  resolve_grasp(w, 0, true);
  CHECK_FALSE(w.agents[0].held.has_value());
}

TEST_CASE("grasp ties go to the lowest entity id") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const int a = w.add_entity(ObjectSpec::task(Shape::kSquare, Color::kBlue), {90, 80});
  w.add_entity(ObjectSpec::task(Shape::kCircle, Color::kBlue), {70, 80});
  resolve_grasp(w, 0, true);
  CHECK(w.agents[0].held == a);
}

TEST_CASE("activating a landmark records the timestep") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  w.t = 17;
  const int lm = w.add_entity(ObjectSpec::environment(EnvKind::kLandmark), {100, 80});
  const auto ev = resolve_activate(w, 0, InteractionTable{});
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].kind == EventKind::kLandmarkActivated);
  CHECK(ev[0].entity == lm);
  CHECK(ev[0].t == 17);
  CHECK(w.find(lm)->activated_at == 17);
}

TEST_CASE("activating an object with no table entry is a no-op") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  w.add_entity(ObjectSpec::task(Shape::kSquare, Color::kBlue), {90, 80});
  const WorldState before = w;
  CHECK(resolve_activate(w, 0, InteractionTable{}).empty());
  CHECK(w == before);
}

TEST_CASE("activate outcomes: become and consume") {
  const ObjectSpec a = ObjectSpec::task(Shape::kSquare, Color::kBlue);
  const ObjectSpec b = ObjectSpec::task(Shape::kTriangle, Color::kGreen);
  InteractionTable table;
  table.set_activate(a, {ActivateOutcome::Kind::kBecome, b, std::nullopt});
  table.set_activate(b, {ActivateOutcome::Kind::kConsume, {}, std::nullopt});
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const int id = w.add_entity(a, {90, 80});
  auto e1 = resolve_activate(w, 0, table);
  REQUIRE(e1.size() == 1);
  CHECK(e1[0].kind == EventKind::kObjectBecame);
  CHECK(w.find(id)->spec == b);
  auto e2 = resolve_activate(w, 0, table);
  REQUIRE(e2.size() == 1);
  CHECK(e2[0].kind == EventKind::kObjectConsumed);
  CHECK(w.find(id) == nullptr);
}

TEST_CASE("in-out machine switches the delivered object") {
  const ObjectSpec in = ObjectSpec::task(Shape::kSquare, Color::kBlue);
  const ObjectSpec out = ObjectSpec::task(Shape::kCircle, Color::kGreen);
  InteractionTable table;
  table.set_machine(EnvKind::kInOutMachine, in, {MachineRule::Kind::kSwitchTo, out});
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const int machine = w.add_entity(ObjectSpec::environment(EnvKind::kInOutMachine), {110, 80});
  const int obj = w.add_entity(in, {90, 80});
  resolve_grasp(w, 0, true);
  REQUIRE(w.agents[0].held == obj);
  const auto ev = resolve_activate(w, 0, table);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].kind == EventKind::kMachineSwitched);
  CHECK(ev[0].other == machine);
  CHECK(w.find(obj)->spec == out);
}

TEST_CASE("pressure plate is active exactly while occupied") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  w.add_entity(ObjectSpec::environment(EnvKind::kPressurePlate), {80 + w.arena.env_radius, 80});
  CHECK(w.plate_active());
  w.agents[0].position.x -= 0.01;
  CHECK_FALSE(w.plate_active());
}

TEST_CASE("visible entities: closed ball, occlusion, self excluded") {
  WorldState w = two_agents({80, 80}, 0.0, {240, 240}, 0.0);
  const double d = 40.0 / std::sqrt(2.0);
  const int on_edge = w.add_entity(ObjectSpec::task(Shape::kCircle, Color::kRed), {80 + d, 80 - d});
  const double r = distance(w.agents[0].position, w.find(on_edge)->position);
  // Behind the inner wall at x = 160 and inside the radius.
  WorldState far = two_agents({150, 30}, 0.0, {240, 240}, 0.0);
  const int hidden = far.add_entity(ObjectSpec::task(Shape::kCircle, Color::kGreen), {172, 30});
  const int beyond = w.add_entity(ObjectSpec::task(Shape::kCircle, Color::kBlue), {80, 80 + r + 1e-6});

  const auto vis = visible_entities(w, 0, r);
  REQUIRE(vis.size() == 1);
  CHECK(vis[0].id == on_edge);
  CHECK_FALSE(vis[0].is_agent);
  (void)beyond;
  CHECK(visible_entities(far, 0, 80.0).empty());
  CHECK(distance(far.agents[0].position, far.find(hidden)->position) < 80.0);
  // The other agent appears once in range; self never does.
  const auto all = visible_entities(w, 1, 400.0);
  for (const VisibleEntity& v : all) CHECK_FALSE((v.is_agent && v.id == 1));
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].distance <= all[i].distance);
}

TEST_CASE("occlusion test matches an independent segment/rectangle oracle") {
  const WorldState w = WorldState::empty(ArenaConfig{});
  Rng rng(21);
  auto oracle = [&](Vec2 a, Vec2 b) {
    // Dense sampling of the segment against every wall.
    for (int i = 0; i <= 4000; ++i) {
      const double s = i / 4000.0;
      const Vec2 p = a + (b - a) * s;
      for (const Rect& r : w.walls) {
        if (r.contains(p)) return true;
      }
    }
    return false;
  };
  int agree = 0, total = 0;
  for (int i = 0; i < 400; ++i) {
    const Vec2 a{rng.uniform(8, 312), rng.uniform(8, 312)};
    const Vec2 b{rng.uniform(8, 312), rng.uniform(8, 312)};
    if (inside_any_wall(w, a) || inside_any_wall(w, b)) continue;
    ++total;
    if (w.occluded(a, b) == oracle(a, b)) ++agree;
  }
  // Sampling can miss grazing contacts at a wall corner; allow a sliver.
  CHECK(agree >= total - 2);
}

TEST_CASE("property: random play keeps physical invariants and is deterministic") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    MaterializedTask task = random_task(seed);
    WorldState w = task.world;
    WorldState twin = task.world;
    const InteractionTable empty;
    Rng rng(seed + 100);
    const std::size_t entities = w.entities.size();
    for (int step = 0; step < 300; ++step) {
      const ActionCommand cmds[] = {random_command(rng), random_command(rng)};
      step_world(w, cmds, empty);
      step_world(twin, cmds, empty);
      REQUIRE(w == twin);
      REQUIRE(w.entities.size() == entities);
      std::map<int, int> holders;
      for (const AgentBody& a : w.agents) {
        REQUIRE_FALSE(inside_any_wall(w, a.position));
        REQUIRE(a.position.x > 0.0);
        REQUIRE(a.position.x < w.arena.width());
        REQUIRE(a.position.y > 0.0);
        REQUIRE(a.position.y < w.arena.height());
        REQUIRE(a.heading >= 0.0);
        REQUIRE(a.heading < 2 * std::numbers::pi);
        if (a.held) {
          ++holders[*a.held];
          REQUIRE(w.find(*a.held)->held_by == a.id);
        }
      }
      for (const auto& [id, n] : holders) REQUIRE(n == 1);
      for (const Entity& e : w.entities) {
        REQUIRE_FALSE(inside_any_wall(w, e.position));
        if (!e.spec.is_task()) REQUIRE_FALSE(e.held_by.has_value());
        if (e.held_by) REQUIRE(w.agent(*e.held_by)->held == e.id);
      }
    }
    CHECK(state_digest(w) == state_digest(twin));
  }
}

TEST_CASE("interaction tables only mention the tree's specs") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const TaskTree tree = sample_task_tree(rng, 3, seed % 2 == 0, training_pool());
    const InteractionTable table = build_interaction_table(tree);
    std::set<ObjectSpec> mentioned;
    for (const Subtask& s : tree.subtasks) {
      mentioned.insert(s.inputs.begin(), s.inputs.end());
      if (s.lemon) mentioned.insert(*s.lemon);
    }
    for (const ObjectSpec& a : training_pool()) {
      if (!mentioned.count(a)) {
        CHECK(table.activate(a).kind == ActivateOutcome::Kind::kNone);
        CHECK(table.machine(EnvKind::kInOutMachine, a).kind == MachineRule::Kind::kNone);
        CHECK(table.machine(EnvKind::kDropOffPoint, a).kind == MachineRule::Kind::kNone);
        for (const ObjectSpec& b : training_pool()) CHECK(table.pair(a, b).kind == PairOutcome::Kind::kNone);
      }
    }
  }
}
}
