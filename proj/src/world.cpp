#include "coex/world.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace coex {
namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {
    "circle", "square", "triangle", "pentagon", "star", "cross"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "cyan", "magenta"};
constexpr std::array<std::string_view, kNumEnvKinds> kEnvNames = {
    "landmark", "in_out_machine", "drop_off_point", "meeting_landmark", "pressure_plate"};

// Pushes a circle out of every wall it overlaps. Falls back to `fallback` in the
// (geometrically degenerate) case where the center still ends up inside a wall.
Vec2 resolve_walls(const WorldState& s, Vec2 p, double radius, Vec2 fallback) {
  for (int pass = 0; pass < 4; ++pass) {
    bool moved = false;
    for (const Rect& w : s.walls) {
      if (auto out = push_circle_out(p, radius, w)) {
        p = *out;
        moved = true;
      }
    }
    if (!moved) break;
  }
  for (const Rect& w : s.walls) {
    if (w.contains_strict(p)) return fallback;
  }
  return p;
}

std::pair<int, int> ordered(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

struct Hasher {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void i(int v) { u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(v))); }
  void opt(const std::optional<int>& v) { i(v ? *v : -0x7fffffff); }
};

}  // namespace

std::string to_string(EnvKind kind) { return std::string(kEnvNames[static_cast<int>(kind)]); }

std::string to_string(ObjectSpec spec) {
  if (!spec.is_task()) return to_string(spec.env_kind);
  return std::string(kShapeNames[static_cast<int>(spec.shape)]) + "-" +
         std::string(kColorNames[static_cast<int>(spec.color)]);
}

ObjectSpec parse_object_spec(std::string_view text) {
  for (int k = 0; k < kNumEnvKinds; ++k) {
    if (text == kEnvNames[k]) return ObjectSpec::environment(static_cast<EnvKind>(k));
  }
  const auto dash = text.find('-');
  if (dash != std::string_view::npos) {
    const auto shape = text.substr(0, dash);
    const auto color = text.substr(dash + 1);
    const auto s = std::find(kShapeNames.begin(), kShapeNames.end(), shape);
    const auto c = std::find(kColorNames.begin(), kColorNames.end(), color);
    if (s != kShapeNames.end() && c != kColorNames.end()) {
      return ObjectSpec::task(static_cast<Shape>(s - kShapeNames.begin()),
                              static_cast<Color>(c - kColorNames.begin()));
    }
  }
  throw std::invalid_argument("unknown object spec '" + std::string(text) + "'");
}

std::vector<ObjectSpec> training_pool() {
  std::vector<ObjectSpec> pool;
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) pool.push_back(ObjectSpec::task(static_cast<Shape>(s), static_cast<Color>(c)));
  }
  return pool;
}

std::vector<ObjectSpec> novel_pool() {
  std::vector<ObjectSpec> pool;
  for (int s = 3; s < 6; ++s) {
    for (int c = 3; c < 6; ++c) pool.push_back(ObjectSpec::task(static_cast<Shape>(s), static_cast<Color>(c)));
  }
  return pool;
}

std::vector<Rect> build_walls(const ArenaConfig& a) {
  const double w = a.width(), h = a.height(), t = a.wall_thickness, half = t / 2.0;
  std::vector<Rect> walls = {
      {0.0, 0.0, w, t}, {0.0, h - t, w, h}, {0.0, 0.0, t, h}, {w - t, 0.0, w, h}};
  // Inner walls are split into pieces with one doorway centred on each room edge.
  for (int k = 1; k < a.rooms_x; ++k) {
    const double x = k * a.room_size;
    double y = 0.0;
    for (int j = 0; j < a.rooms_y; ++j) {
      const double mid = (j + 0.5) * a.room_size;
      walls.push_back({x - half, y, x + half, mid - a.doorway / 2.0});
      y = mid + a.doorway / 2.0;
    }
    walls.push_back({x - half, y, x + half, h});
  }
  for (int k = 1; k < a.rooms_y; ++k) {
    const double yw = k * a.room_size;
    double x = 0.0;
    for (int i = 0; i < a.rooms_x; ++i) {
      const double mid = (i + 0.5) * a.room_size;
      walls.push_back({x, yw - half, mid - a.doorway / 2.0, yw + half});
      x = mid + a.doorway / 2.0;
    }
    walls.push_back({x, yw - half, w, yw + half});
  }
  return walls;
}

ActionCommand ActionCommand::clamped() const {
  auto finite_or_zero = [](double v) { return std::isfinite(v) ? v : 0.0; };
  return {std::clamp(finite_or_zero(turn), -1.0, 1.0), std::clamp(finite_or_zero(forward), 0.0, 1.0),
          grasp, activate};
}

void InteractionTable::set_pair(ObjectSpec a, ObjectSpec b, PairOutcome outcome) {
  pairs_[ordered(a.key(), b.key())] = outcome;
}
void InteractionTable::set_activate(ObjectSpec spec, ActivateOutcome outcome) {
  activate_[spec.key()] = outcome;
}
void InteractionTable::set_machine(EnvKind machine, ObjectSpec spec, MachineRule rule) {
  machine_[{static_cast<int>(machine), spec.key()}] = rule;
}
PairOutcome InteractionTable::pair(ObjectSpec a, ObjectSpec b) const {
  const auto it = pairs_.find(ordered(a.key(), b.key()));
  return it == pairs_.end() ? PairOutcome{} : it->second;
}
ActivateOutcome InteractionTable::activate(ObjectSpec spec) const {
  const auto it = activate_.find(spec.key());
  return it == activate_.end() ? ActivateOutcome{} : it->second;
}
MachineRule InteractionTable::machine(EnvKind machine, ObjectSpec spec) const {
  const auto it = machine_.find({static_cast<int>(machine), spec.key()});
  return it == machine_.end() ? MachineRule{} : it->second;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kContact: return "contact";
    case EventKind::kLandmarkActivated: return "landmark";
    case EventKind::kObjectBecame: return "became";
    case EventKind::kObjectConsumed: return "consumed";
    case EventKind::kCrafted: return "crafted";
    case EventKind::kMachineSwitched: return "switched";
    case EventKind::kDroppedOff: return "dropped";
    case EventKind::kSpawned: return "spawned";
    case EventKind::kWindowReset: return "window_reset";
  }
  return "?";
}

std::string to_string(const WorldEvent& e) {
  std::string s(to_string(e.kind));
  s += ":a" + std::to_string(e.agent) + ":e" + std::to_string(e.entity);
  if (e.other >= 0) s += ":o" + std::to_string(e.other);
  s += ":" + to_string(e.spec);
  if (e.result) s += ">" + to_string(*e.result);
  return s;
}

WorldState WorldState::empty(const ArenaConfig& arena) {
  WorldState s;
  s.arena = arena;
  s.walls = build_walls(arena);
  return s;
}

const Entity* WorldState::find(int id) const {
  for (const Entity& e : entities) {
    if (e.id == id) return &e;
  }
  return nullptr;
}
Entity* WorldState::find(int id) {
  return const_cast<Entity*>(static_cast<const WorldState*>(this)->find(id));
}
const AgentBody* WorldState::agent(int agent_id) const {
  for (const AgentBody& a : agents) {
    if (a.id == agent_id) return &a;
  }
  return nullptr;
}
AgentBody* WorldState::agent(int agent_id) {
  return const_cast<AgentBody*>(static_cast<const WorldState*>(this)->agent(agent_id));
}

int WorldState::add_entity(ObjectSpec spec, Vec2 position) {
  Entity e;
  e.id = next_id++;
  e.spec = spec;
  e.position = position;
  entities.push_back(e);
  return e.id;
}

void WorldState::remove_entity(int id) {
  for (AgentBody& a : agents) {
    if (a.held == id) a.held.reset();
  }
  std::erase_if(entities, [id](const Entity& e) { return e.id == id; });
  std::erase_if(contacts, [id](const auto& p) { return p.first == id || p.second == id; });
}

int WorldState::count(ObjectSpec spec) const {
  return static_cast<int>(std::count_if(entities.begin(), entities.end(),
                                        [&](const Entity& e) { return e.spec == spec; }));
}

bool WorldState::is_free(Vec2 p, double radius) const {
  if (p.x < radius || p.y < radius || p.x > arena.width() - radius || p.y > arena.height() - radius) {
    return false;
  }
  for (const Rect& w : walls) {
    if (distance(w.closest_point(p), p) < radius) return false;
  }
  return true;
}

bool WorldState::occluded(Vec2 from, Vec2 to) const {
  for (const Rect& w : walls) {
    if (segment_rect_entry(from, to, w)) return true;
  }
  return false;
}

double WorldState::entity_radius(const Entity& e) const {
  return e.spec.is_task() ? arena.object_radius : arena.env_radius;
}

bool WorldState::plate_active() const {
  for (const Entity& e : entities) {
    if (e.spec.is_task() || e.spec.env_kind != EnvKind::kPressurePlate) continue;
    for (const AgentBody& a : agents) {
      if (distance(a.position, e.position) <= arena.env_radius) return true;
    }
  }
  return false;
}

Vec2 hold_position(const WorldState& state, const AgentBody& agent) {
  const double r = state.arena.object_radius;
  const double reach = state.arena.hold_offset() + r;
  const Vec2 dir = heading_vector(agent.heading);
  const Vec2 end = agent.position + dir * reach;
  double free = reach;
  for (const Rect& w : state.walls) {
    if (auto t = segment_rect_entry(agent.position, end, w)) free = std::min(free, *t * reach);
  }
  const double offset = std::clamp(free - r, 0.0, state.arena.hold_offset());
  return agent.position + dir * offset;
}

std::vector<WorldEvent> advance_physics(WorldState& state, std::span<const ActionCommand> commands) {
  const ArenaConfig& a = state.arena;
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    AgentBody& agent = state.agents[i];
    const ActionCommand cmd = i < commands.size() ? commands[i].clamped() : ActionCommand{};
    agent.heading = wrap_angle(agent.heading + cmd.turn * a.turn_max);
    const Vec2 target = agent.position + heading_vector(agent.heading) * (cmd.forward * a.v_max);
    agent.position = resolve_walls(state, target, a.agent_radius, agent.position);

    if (agent.held) {
      if (Entity* held = state.find(*agent.held)) held->position = hold_position(state, agent);
    }
    const double contact = a.agent_radius + a.object_radius;
    for (Entity& e : state.entities) {
      if (!e.spec.is_task() || e.held_by) continue;
      const Vec2 d = e.position - agent.position;
      const double dist = d.norm();
      if (dist >= contact) continue;
      const Vec2 dir = dist > 0.0 ? d * (1.0 / dist) : heading_vector(agent.heading);
      e.position = resolve_walls(state, agent.position + dir * contact, a.object_radius, e.position);
    }
  }

  std::set<std::pair<int, int>> now;
  std::vector<WorldEvent> events;
  const double touch = 2.0 * a.object_radius;
  for (const Entity& h : state.entities) {
    if (!h.held_by) continue;
    for (const Entity& o : state.entities) {
      if (o.id == h.id || !o.spec.is_task()) continue;
      if (distance(h.position, o.position) > touch) continue;
      const auto key = ordered(h.id, o.id);
      if (!now.insert(key).second) continue;
      if (state.contacts.contains(key)) continue;
      events.push_back({EventKind::kContact, state.t, *h.held_by, h.id, o.id, h.spec, o.spec, h.position});
    }
  }
  state.contacts = std::move(now);
  return events;
}

void resolve_grasp(WorldState& state, int agent_id, bool grasp) {
  AgentBody* agent = state.agent(agent_id);
  if (agent == nullptr) return;
  if (!grasp) {
    if (agent->held) {
      if (Entity* e = state.find(*agent->held)) e->held_by.reset();
      agent->held.reset();
    }
    return;
  }
  if (agent->held) return;
  Entity* best = nullptr;
  double best_gap = 0.0;
  for (Entity& e : state.entities) {
    if (!e.spec.is_task() || e.held_by) continue;
    const double gap = distance(agent->position, e.position) - state.arena.object_radius;
    if (gap > state.arena.reach) continue;
    if (best == nullptr || gap < best_gap || (gap == best_gap && e.id < best->id)) {
      best = &e;
      best_gap = gap;
    }
  }
  if (best == nullptr) return;
  best->held_by = agent_id;
  agent->held = best->id;
  best->position = hold_position(state, *agent);
}

std::vector<WorldEvent> resolve_contacts(WorldState& state, std::span<const WorldEvent> contacts,
                                         const InteractionTable& table) {
  std::vector<WorldEvent> events;
  for (const WorldEvent& c : contacts) {
    if (c.kind != EventKind::kContact) continue;
    const Entity* a = state.find(c.entity);
    const Entity* b = state.find(c.other);
    if (a == nullptr || b == nullptr) continue;
    const PairOutcome out = table.pair(a->spec, b->spec);
    if (out.kind == PairOutcome::Kind::kNone) continue;
    const Vec2 mid = (a->position + b->position) * 0.5;
    WorldEvent ev{EventKind::kCrafted, state.t, c.agent, a->id, b->id, a->spec, std::nullopt, mid};
    state.remove_entity(c.entity);
    state.remove_entity(c.other);
    if (out.kind == PairOutcome::Kind::kSpawn) {
      state.add_entity(out.spawn, resolve_walls(state, mid, state.arena.object_radius, mid));
      ev.result = out.spawn;
    }
    events.push_back(ev);
  }
  return events;
}

namespace {

enum class Effect { kNone, kLandmark, kMachine, kObject };

struct Candidate {
  Effect effect = Effect::kNone;
  int entity = -1;
  int object = -1;  // machine input
  MachineRule rule;
  ActivateOutcome outcome;
};

Candidate evaluate_candidate(const WorldState& state, const AgentBody& agent, const Entity& e,
                             const InteractionTable& table) {
  Candidate c;
  c.entity = e.id;
  if (e.spec.is_task()) {
    if (e.held_by && *e.held_by != agent.id) return c;
    const ActivateOutcome out = table.activate(e.spec);
    if (out.kind == ActivateOutcome::Kind::kNone) return c;
    if (out.only_agent && *out.only_agent != agent.id) return c;
    c.effect = Effect::kObject;
    c.outcome = out;
    return c;
  }
  switch (e.spec.env_kind) {
    case EnvKind::kLandmark:
    case EnvKind::kMeetingLandmark:
      if (!e.owner || *e.owner == agent.id) c.effect = Effect::kLandmark;
      return c;
    case EnvKind::kPressurePlate:
      return c;
    case EnvKind::kInOutMachine:
    case EnvKind::kDropOffPoint: {
      if (table.machines_need_plate && !state.plate_active()) return c;
      const Entity* input = agent.held ? state.find(*agent.held) : nullptr;
      if (input == nullptr) {
        const double near = state.arena.env_radius + state.arena.object_radius + 2.0;
        double best = 0.0;
        for (const Entity& o : state.entities) {
          if (!o.spec.is_task() || o.held_by) continue;
          const double d = distance(o.position, e.position);
          if (d > near) continue;
          if (input == nullptr || d < best) {
            input = &o;
            best = d;
          }
        }
      }
      if (input == nullptr) return c;
      const MachineRule rule = table.machine(e.spec.env_kind, input->spec);
      if (rule.kind == MachineRule::Kind::kNone) return c;
      c.effect = Effect::kMachine;
      c.object = input->id;
      c.rule = rule;
      return c;
    }
  }
  return c;
}

}  // namespace

std::vector<WorldEvent> resolve_activate(WorldState& state, int agent_id, const InteractionTable& table) {
  const AgentBody* agent = state.agent(agent_id);
  if (agent == nullptr) return {};
  Candidate best;
  double best_gap = 0.0;
  for (const Entity& e : state.entities) {
    const double gap = distance(agent->position, e.position) - state.entity_radius(e);
    if (gap > state.arena.reach) continue;
    const Candidate c = evaluate_candidate(state, *agent, e, table);
    if (c.effect == Effect::kNone) continue;
    if (best.effect == Effect::kNone || gap < best_gap || (gap == best_gap && e.id < best.entity)) {
      best = c;
      best_gap = gap;
    }
  }

  std::vector<WorldEvent> events;
  const int t = state.t;
  switch (best.effect) {
    case Effect::kNone:
      break;
    case Effect::kLandmark: {
      Entity* e = state.find(best.entity);
      e->activated_at = t;
      events.push_back({EventKind::kLandmarkActivated, t, agent_id, e->id, -1, e->spec, std::nullopt, e->position});
      break;
    }
    case Effect::kObject: {
      Entity* e = state.find(best.entity);
      if (best.outcome.kind == ActivateOutcome::Kind::kBecome) {
        events.push_back({EventKind::kObjectBecame, t, agent_id, e->id, -1, e->spec, best.outcome.become, e->position});
        e->spec = best.outcome.become;
      } else {
        events.push_back({EventKind::kObjectConsumed, t, agent_id, e->id, -1, e->spec, std::nullopt, e->position});
        state.remove_entity(e->id);
      }
      break;
    }
    case Effect::kMachine: {
      Entity* obj = state.find(best.object);
      if (best.rule.kind == MachineRule::Kind::kSwitchTo) {
        events.push_back({EventKind::kMachineSwitched, t, agent_id, obj->id, best.entity, obj->spec, best.rule.to, obj->position});
        obj->spec = best.rule.to;
      } else {
        events.push_back({EventKind::kDroppedOff, t, agent_id, obj->id, best.entity, obj->spec, std::nullopt, obj->position});
        state.remove_entity(obj->id);
      }
      break;
    }
  }
  return events;
}

std::vector<WorldEvent> step_world(WorldState& state, std::span<const ActionCommand> commands,
                                   const InteractionTable& table) {
  std::vector<WorldEvent> events = advance_physics(state, commands);
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    const bool grasp = i < commands.size() && commands[i].grasp;
    resolve_grasp(state, state.agents[i].id, grasp);
  }
  auto crafted = resolve_contacts(state, events, table);
  events.insert(events.end(), crafted.begin(), crafted.end());
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    if (i < commands.size() && commands[i].activate) {
      auto ev = resolve_activate(state, state.agents[i].id, table);
      events.insert(events.end(), ev.begin(), ev.end());
    }
  }
  ++state.t;
  return events;
}

std::vector<VisibleEntity> visible_entities(const WorldState& state, int agent_id, double view_radius) {
  std::vector<VisibleEntity> out;
  const AgentBody* self = state.agent(agent_id);
  if (self == nullptr) return out;
  auto consider = [&](bool is_agent, int id, Vec2 pos) {
    const Vec2 off = pos - self->position;
    const double d = off.norm();
    if (d > view_radius) return;
    if (state.occluded(self->position, pos)) return;
    out.push_back({is_agent, id, off, d});
  };
  for (const AgentBody& a : state.agents) {
    if (a.id != agent_id) consider(true, a.id, a.position);
  }
  for (const Entity& e : state.entities) consider(false, e.id, e.position);
  std::stable_sort(out.begin(), out.end(), [](const VisibleEntity& x, const VisibleEntity& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    if (x.is_agent != y.is_agent) return x.is_agent;
    return x.id < y.id;
  });
  return out;
}

std::uint64_t state_digest(const WorldState& s) {
  Hasher h;
  h.i(s.t);
  h.i(s.next_id);
  for (const AgentBody& a : s.agents) {
    h.i(a.id);
    h.f64(a.position.x);
    h.f64(a.position.y);
    h.f64(a.heading);
    h.opt(a.held);
  }
  for (const Entity& e : s.entities) {
    h.i(e.id);
    h.i(e.spec.key());
    h.f64(e.position.x);
    h.f64(e.position.y);
    h.opt(e.held_by);
    h.opt(e.activated_at);
    h.opt(e.owner);
  }
  for (const auto& [x, y] : s.contacts) {
    h.i(x);
    h.i(y);
  }
  return h.h;
}

}  // namespace coex
