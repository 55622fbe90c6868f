#include "coex/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

namespace coex {
namespace {

constexpr double kApproach = 20.0;  // distance of doorway approach points from the wall line
constexpr double kOnSpot = 5.0;     // standing on an environment object
constexpr double kClearOfEnv = 36.0;

Vec2 unit(Vec2 v) {
  const double n = v.norm();
  return n > 0.0 ? v * (1.0 / n) : Vec2{1.0, 0.0};
}

struct Door {
  Vec2 center;
  Vec2 normal;  // from the current room into the next one
  bool vertical_wall = true;
};

Door door_between(const ArenaConfig& a, std::pair<int, int> cur, std::pair<int, int> nxt) {
  Door d;
  if (nxt.first != cur.first) {
    const int k = std::max(cur.first, nxt.first);
    d.center = {k * a.room_size, (cur.second + 0.5) * a.room_size};
    d.normal = {nxt.first > cur.first ? 1.0 : -1.0, 0.0};
    d.vertical_wall = true;
  } else {
    const int k = std::max(cur.second, nxt.second);
    d.center = {(cur.first + 0.5) * a.room_size, k * a.room_size};
    d.normal = {0.0, nxt.second > cur.second ? 1.0 : -1.0};
    d.vertical_wall = false;
  }
  return d;
}

std::vector<std::pair<int, int>> room_path(const ArenaConfig& a, std::pair<int, int> from, std::pair<int, int> to) {
  std::map<std::pair<int, int>, std::pair<int, int>> parent;
  std::deque<std::pair<int, int>> q{from};
  parent[from] = from;
  while (!q.empty()) {
    const auto cur = q.front();
    q.pop_front();
    if (cur == to) break;
    const std::array<std::pair<int, int>, 4> next = {{{cur.first + 1, cur.second},
                                                      {cur.first - 1, cur.second},
                                                      {cur.first, cur.second + 1},
                                                      {cur.first, cur.second - 1}}};
    for (const auto& n : next) {
      if (n.first < 0 || n.second < 0 || n.first >= a.rooms_x || n.second >= a.rooms_y) continue;
      if (parent.contains(n)) continue;
      parent[n] = cur;
      q.push_back(n);
    }
  }
  std::vector<std::pair<int, int>> path;
  for (auto r = to; r != from; r = parent.at(r)) path.push_back(r);
  path.push_back(from);
  std::reverse(path.begin(), path.end());
  return path;
}

// Inside the straight corridor through the doorway, close enough to head for the far side.
bool in_corridor(const ArenaConfig& a, const Door& d, Vec2 p) {
  const Vec2 off = p - d.center;
  const double along = off.dot(d.normal);
  const double lateral = std::abs(d.vertical_wall ? off.y : off.x);
  return lateral <= a.doorway / 2.0 - a.agent_radius - 2.0 && along >= -(kApproach + 2.0);
}

ActionCommand steer(const ArenaConfig& a, const AgentBody& body, Vec2 target, double stop_short, bool final) {
  ActionCommand c;
  const Vec2 d = target - body.position;
  const double dist = d.norm();
  if (dist <= 1e-9) return c;
  const double diff = angle_difference(std::atan2(d.y, d.x), body.heading);
  c.turn = std::clamp(diff / a.turn_max, -1.0, 1.0);
  const double residual = std::abs(diff) - std::abs(c.turn) * a.turn_max;
  if (residual <= std::numbers::pi / 8.0) {
    const double remaining = final ? dist - stop_short + 0.25 : dist;
    c.forward = std::clamp(remaining / a.v_max, 0.0, 1.0);
  }
  return c;
}

const Entity* held_entity(const WorldState& w, int agent) {
  const AgentBody* b = w.agent(agent);
  return b != nullptr && b->held ? w.find(*b->held) : nullptr;
}

bool usable_by(const Entity& e, int agent) { return !e.held_by || *e.held_by == agent; }

const Entity* nearest_instance(const WorldState& w, ObjectSpec spec, Vec2 from, int agent, int exclude = -1) {
  const Entity* best = nullptr;
  double best_d = 0.0;
  for (const Entity& e : w.entities) {
    if (e.spec != spec || e.id == exclude || !usable_by(e, agent)) continue;
    const double d = distance(e.position, from);
    if (best == nullptr || d < best_d) {
      best = &e;
      best_d = d;
    }
  }
  return best;
}

bool would_grasp(const WorldState& w, const AgentBody& body, const Entity& target) {
  const double r = w.arena.object_radius;
  const double gap = distance(body.position, target.position) - r;
  if (gap > w.arena.reach || target.held_by) return false;
  for (const Entity& e : w.entities) {
    if (e.id == target.id || !e.spec.is_task() || e.held_by) continue;
    const double g = distance(body.position, e.position) - r;
    if (g < gap || (g == gap && e.id < target.id)) return false;
  }
  return true;
}

Vec2 room_interior_point(const ArenaConfig& a, Vec2 p, Vec2 anchor) {
  const auto [rx, ry] = room_of(a, anchor);
  const double m = a.wall_thickness + a.agent_radius + 8.0;
  return {std::clamp(p.x, rx * a.room_size + m, (rx + 1) * a.room_size - m),
          std::clamp(p.y, ry * a.room_size + m, (ry + 1) * a.room_size - m)};
}

Vec2 room_center(const ArenaConfig& a, Vec2 p) {
  const auto [rx, ry] = room_of(a, p);
  return {(rx + 0.5) * a.room_size, (ry + 0.5) * a.room_size};
}

ActionCommand idle(const WorldState& w, int agent, bool keep) {
  ActionCommand c;
  c.grasp = keep && held_entity(w, agent) != nullptr;
  return c;
}

// Fetches `target` (not currently held by this agent). Wrong objects in hand are carried aside first.
ActionCommand fetch(const WorldState& w, int agent, AgentMemory& mem, const Entity& target) {
  const AgentBody& body = *w.agent(agent);
  const ArenaConfig& a = w.arena;
  if (held_entity(w, agent) != nullptr) {
    if (mem.displace_steps > 0) {
      --mem.displace_steps;
      ActionCommand c = navigate(w, agent, mem.displace_to, 2.0);
      c.grasp = mem.displace_steps > 0;
      return c;
    }
    if (distance(body.position, target.position) > 45.0) {
      ActionCommand c = navigate(w, agent, target.position, a.reach);
      c.grasp = false;
      return c;
    }
    mem.displace_steps = 10;
    mem.displace_to = room_interior_point(
        a, body.position + unit(body.position - target.position) * 50.0, body.position);
    ActionCommand c = navigate(w, agent, mem.displace_to, 2.0);
    c.grasp = true;
    return c;
  }
  mem.displace_steps = 0;
  const double gap = distance(body.position, target.position) - a.object_radius;
  if (gap <= a.reach - 0.5) {
    if (would_grasp(w, body, target)) {
      mem.blocked_steps = 0;
      ActionCommand c;
      c.grasp = true;
      return c;
    }
    if (++mem.blocked_steps > 15) {
      // Take whatever is in the way; it is carried aside on the next steps.
      mem.blocked_steps = 0;
      ActionCommand c;
      c.grasp = true;
      return c;
    }
    return navigate(w, agent, target.position, 0.0);
  }
  return navigate(w, agent, target.position, a.reach - 2.0 + a.object_radius);
}

ActionCommand carry_to(const WorldState& w, int agent, Vec2 target, double arrive) {
  ActionCommand c = navigate(w, agent, target, arrive);
  c.grasp = true;
  return c;
}

bool clear_of_env(const WorldState& w, Vec2 p) {
  for (const Entity& e : w.entities) {
    if (!e.spec.is_task() && distance(e.position, p) < kClearOfEnv) return false;
  }
  return true;
}

// Activates the held object somewhere no environment object competes for the activation.
ActionCommand activate_held(const WorldState& w, int agent) {
  const AgentBody& body = *w.agent(agent);
  if (!clear_of_env(w, body.position)) return carry_to(w, agent, room_center(w.arena, body.position), 3.0);
  ActionCommand c;
  c.grasp = true;
  c.activate = true;
  return c;
}

ActionCommand use_env(const WorldState& w, int agent, const Entity& env, bool keep, bool allowed = true) {
  const AgentBody& body = *w.agent(agent);
  ActionCommand c = navigate(w, agent, env.position, 3.0);
  c.grasp = keep && held_entity(w, agent) != nullptr;
  if (distance(body.position, env.position) <= kOnSpot) c.activate = allowed;
  return c;
}

std::vector<int> actors_in(const WorldSlot& slot, int n_agents) {
  std::vector<int> out;
  for (int a : slot.agents) {
    if (a < n_agents) out.push_back(a);
  }
  return out;
}

bool lit_since(const Entity& e, int floor) { return e.activated_at && *e.activated_at > floor; }

class SlotPlanner {
 public:
  SlotPlanner(const WorldSlot& slot, std::vector<int> actors, std::array<AgentMemory, kNumAgents>& mem,
              JointAction& out, std::string& stall)
      : slot_(slot), w_(slot.task.world), actors_(std::move(actors)), mem_(mem), out_(out), stall_(stall) {}

  void plan() {
    for (int a : actors_) cmd(a) = idle(w_, a, false);
    if (slot_.progress.all_complete()) {
      for (int a : actors_) cmd(a) = idle(w_, a, true);
      return;
    }
    s_ = slot_.progress.frontier();
    const Subtask& sub = slot_.tree.stage(s_);
    const StageBinding& b = slot_.task.bindings[static_cast<std::size_t>(s_ - 1)];
    floor_ = slot_.progress.completed_time(s_ - 1);
    switch (sub.type) {
      case TaskType::kCrafting: crafting(sub); break;
      case TaskType::kInOutMachine: deliver(sub, b.machine, -1); break;
      case TaskType::kPressurePlate: deliver(sub, b.machine, b.plate); break;
      case TaskType::kDropOffPoint: deliver(sub, b.dropoff, -1); break;
      case TaskType::kLemonHunt:
      case TaskType::kForcedLemonHunt: lemon(sub); break;
      case TaskType::kActivateLandmarks: landmarks(b); break;
      case TaskType::kForcedLandmarks: forced_landmarks(b); break;
      case TaskType::kMeetingPoint: meeting(b); break;
    }
  }

 private:
  ActionCommand& cmd(int agent) { return out_[static_cast<std::size_t>(agent)]; }
  AgentMemory& mem(int agent) { return mem_[static_cast<std::size_t>(agent)]; }
  const AgentBody& body(int agent) const { return *w_.agent(agent); }
  std::optional<ObjectSpec> holding(int agent) const {
    const Entity* h = held_entity(w_, agent);
    return h ? std::optional(h->spec) : std::nullopt;
  }
  bool has_actor(int agent) const { return std::find(actors_.begin(), actors_.end(), agent) != actors_.end(); }
  int other(int agent) const {
    for (int a : actors_) {
      if (a != agent) return a;
    }
    return -1;
  }
  void missing(ObjectSpec spec) { stall_ = "unreachable: no " + to_string(spec) + " available"; }

  // Agents not needed for the current stage prepare the next stage's pre-spawned input.
  void help(int agent) {
    std::optional<ObjectSpec> want;
    if (s_ < slot_.tree.depth) {
      const Subtask& next = slot_.tree.stage(s_ + 1);
      if (next.type == TaskType::kCrafting) want = next.inputs[1];
    }
    if (!want) {
      cmd(agent) = idle(w_, agent, false);
      return;
    }
    if (holding(agent) == want) {
      cmd(agent) = idle(w_, agent, true);
      return;
    }
    if (const Entity* e = nearest_instance(w_, *want, body(agent).position, agent)) {
      cmd(agent) = fetch(w_, agent, mem(agent), *e);
    } else {
      cmd(agent) = idle(w_, agent, false);
    }
  }

  void crafting(const Subtask& sub) {
    const ObjectSpec a = sub.inputs[0], b = sub.inputs[1];
    auto role = [&](int agent) -> std::optional<ObjectSpec> {
      const auto h = holding(agent);
      return h && (*h == a || *h == b) ? h : std::nullopt;
    };
    auto partner = [&](ObjectSpec s) { return s == a ? b : a; };

    if (actors_.size() == 1) {
      const int p = actors_[0];
      if (const auto r = role(p)) {
        const Entity* target = nearest_instance(w_, partner(*r), body(p).position, p, *body(p).held);
        if (target == nullptr) return missing(partner(*r));
        cmd(p) = carry_to(w_, p, target->position, 0.0);
        return;
      }
      const Entity* ea = nearest_instance(w_, a, body(p).position, p);
      const Entity* eb = nearest_instance(w_, b, body(p).position, p);
      const Entity* pick = ea;
      if (pick == nullptr || (eb != nullptr && distance(eb->position, body(p).position) <
                                                   distance(ea->position, body(p).position))) {
        pick = eb;
      }
      if (pick == nullptr) return missing(a);
      cmd(p) = fetch(w_, p, mem(p), *pick);
      return;
    }

    const int p = actors_[0], q = actors_[1];
    auto rp = role(p), rq = role(q);
    if (rp && rq && *rp == *rq) rq.reset();
    if (rp && rq) {
      cmd(p) = carry_to(w_, p, w_.find(*body(q).held)->position, 0.0);
      // Across rooms only one of them moves; two movers chasing each other can deadlock at a doorway.
      if (room_of(w_.arena, body(p).position) == room_of(w_.arena, body(q).position)) {
        cmd(q) = carry_to(w_, q, w_.find(*body(p).held)->position, 0.0);
      } else {
        cmd(q) = idle(w_, q, true);
      }
      return;
    }
    if (rp || rq) {
      const int holder = rp ? p : q, fetcher = rp ? q : p;
      const ObjectSpec need = partner(rp ? *rp : *rq);
      const Entity* e = nearest_instance(w_, need, body(fetcher).position, fetcher, *body(holder).held);
      if (e == nullptr) return missing(need);
      cmd(holder) = carry_to(w_, holder, e->position, 0.0);
      if (holding(fetcher) == need) {
        cmd(fetcher) = carry_to(w_, fetcher, w_.find(*body(holder).held)->position, 0.0);
      } else {
        cmd(fetcher) = fetch(w_, fetcher, mem(fetcher), *e);
      }
      return;
    }
    // Keep an earlier split while both targets are still valid.
    const Entity* tp = w_.find(mem(p).target);
    const Entity* tq = w_.find(mem(q).target);
    if (tp != nullptr && tq != nullptr && !tp->held_by && !tq->held_by &&
        ((tp->spec == a && tq->spec == b) || (tp->spec == b && tq->spec == a))) {
      cmd(p) = fetch(w_, p, mem(p), *tp);
      cmd(q) = fetch(w_, q, mem(q), *tq);
      return;
    }
    const Entity* pa = nearest_instance(w_, a, body(p).position, p);
    const Entity* qb = nearest_instance(w_, b, body(q).position, q);
    const Entity* pb = nearest_instance(w_, b, body(p).position, p);
    const Entity* qa = nearest_instance(w_, a, body(q).position, q);
    if (pa == nullptr) return missing(a);
    if (pb == nullptr) return missing(b);
    const double straight = std::max(distance(pa->position, body(p).position), distance(qb->position, body(q).position));
    const double swapped = std::max(distance(pb->position, body(p).position), distance(qa->position, body(q).position));
    const Entity* for_p = straight <= swapped ? pa : pb;
    const Entity* for_q = straight <= swapped ? qb : qa;
    mem(p).target = for_p->id;
    mem(q).target = for_q->id;
    cmd(p) = fetch(w_, p, mem(p), *for_p);
    cmd(q) = fetch(w_, q, mem(q), *for_q);
  }

  void deliver(const Subtask& sub, int env_id, int plate_id) {
    const ObjectSpec a = sub.inputs[0];
    const Entity* env = w_.find(env_id);
    int worker = -1;
    for (int x : actors_) {
      if (holding(x) == a) worker = x;
    }
    const Entity* target = nullptr;
    if (worker < 0) {
      double best = std::numeric_limits<double>::infinity();
      for (int x : actors_) {
        const Entity* e = nearest_instance(w_, a, body(x).position, x);
        if (e == nullptr) continue;
        double d = distance(e->position, body(x).position);
        if (plate_id >= 0 && actors_.size() > 1 && x != actors_[0]) d = std::numeric_limits<double>::max();
        if (d < best) {
          best = d;
          worker = x;
          target = e;
        }
      }
      if (worker < 0) return missing(a);
    }
    if (plate_id >= 0) {
      const int sitter = other(worker);
      if (sitter < 0) {
        stall_ = "unreachable: pressure plate needs a second agent";
      } else {
        cmd(sitter) = navigate(w_, sitter, w_.find(plate_id)->position, 2.0);
      }
    } else {
      for (int x : actors_) {
        if (x != worker) help(x);
      }
    }
    if (target != nullptr) {
      cmd(worker) = fetch(w_, worker, mem(worker), *target);
      return;
    }
    const bool allowed = !slot_.task.table.machines_need_plate || w_.plate_active();
    cmd(worker) = use_env(w_, worker, *env, true, allowed);
  }

  void lemon(const Subtask& sub) {
    const ObjectSpec a = sub.inputs[0], lemon = *sub.lemon;
    const bool forced = sub.type == TaskType::kForcedLemonHunt;
    int worker = -1;
    if (forced) {
      worker = sub.role_agent;
      if (!has_actor(worker) || !has_actor(1 - worker)) {
        stall_ = "unreachable: forced lemon hunt needs both agents";
        return;
      }
    } else {
      for (int x : actors_) {
        if (holding(x) == a || holding(x) == lemon) worker = x;
      }
      if (worker < 0) {
        double best = std::numeric_limits<double>::infinity();
        for (int x : actors_) {
          const Entity* e = nearest_instance(w_, a, body(x).position, x);
          if (e == nullptr) e = nearest_instance(w_, lemon, body(x).position, x);
          if (e != nullptr && distance(e->position, body(x).position) < best) {
            best = distance(e->position, body(x).position);
            worker = x;
          }
        }
      }
      if (worker < 0) return missing(a);
      for (int x : actors_) {
        if (x != worker) help(x);
      }
    }

    const Entity* lemon_e = nullptr;
    for (const Entity& e : w_.entities) {
      if (e.spec == lemon) lemon_e = &e;
    }
    if (lemon_e != nullptr) {
      if (!forced) {
        if (holding(worker) == lemon) {
          cmd(worker) = activate_held(w_, worker);
        } else if (usable_by(*lemon_e, worker)) {
          cmd(worker) = fetch(w_, worker, mem(worker), *lemon_e);
        }
        return;
      }
      const int consumer = 1 - worker;
      if (lemon_e->held_by == worker && !clear_of_env(w_, lemon_e->position)) {
        cmd(worker) = carry_to(w_, worker, room_center(w_.arena, body(worker).position), 3.0);
      } else if (lemon_e->held_by == worker) {
        cmd(worker) = ActionCommand{};  // let go
      } else {
        cmd(worker) = navigate(w_, worker, room_center(w_.arena, body(worker).position), w_.arena.reach);
      }
      if (lemon_e->held_by) {
        cmd(consumer) = navigate(w_, consumer, lemon_e->position, 30.0);
        return;
      }
      const double gap = distance(body(consumer).position, lemon_e->position) - w_.arena.object_radius;
      // Approach from the side facing away from the closest environment object so it cannot win the activation.
      Vec2 spot = lemon_e->position;
      const Entity* env = nullptr;
      for (const Entity& e : w_.entities) {
        if (!e.spec.is_task() && (env == nullptr || distance(e.position, spot) < distance(env->position, spot))) env = &e;
      }
      if (env != nullptr && distance(env->position, spot) > 1e-9) {
        const Vec2 away = (spot - env->position) * (1.0 / distance(env->position, spot));
        spot = room_interior_point(w_.arena, spot + away * (w_.arena.agent_radius + w_.arena.object_radius + 2.0),
                                   lemon_e->position);
      }
      cmd(consumer) = navigate(w_, consumer, spot, 2.0);
      cmd(consumer).grasp = false;
      if (gap <= w_.arena.reach - 1.0) cmd(consumer).activate = true;
      return;
    }
    if (holding(worker) == a) {
      cmd(worker) = activate_held(w_, worker);
      return;
    }
    const Entity* e = nearest_instance(w_, a, body(worker).position, worker);
    if (e == nullptr) return missing(a);
    cmd(worker) = fetch(w_, worker, mem(worker), *e);
  }

  void landmarks(const StageBinding& b) {
    std::vector<const Entity*> pending;
    for (int id : b.landmarks) {
      const Entity* e = w_.find(id);
      if (e != nullptr && !lit_since(*e, floor_)) pending.push_back(e);
    }
    if (pending.empty()) return;
    if (actors_.size() == 1 || pending.size() == 1) {
      // Closest actor takes the closest pending landmark.
      int best_a = actors_[0];
      const Entity* best_e = pending[0];
      double best = std::numeric_limits<double>::infinity();
      for (int x : actors_) {
        for (const Entity* e : pending) {
          const double d = distance(body(x).position, e->position);
          if (d < best) {
            best = d;
            best_a = x;
            best_e = e;
          }
        }
      }
      cmd(best_a) = use_env(w_, best_a, *best_e, true);
      for (int x : actors_) {
        if (x != best_a) help(x);
      }
      return;
    }
    const int p = actors_[0], q = actors_[1];
    bool keep_order = true;
    if (mem(p).target == pending[0]->id || mem(q).target == pending[1]->id) {
      keep_order = true;
    } else if (mem(p).target == pending[1]->id || mem(q).target == pending[0]->id) {
      keep_order = false;
    } else {
      const double straight = std::max(distance(body(p).position, pending[0]->position),
                                       distance(body(q).position, pending[1]->position));
      const double swapped = std::max(distance(body(p).position, pending[1]->position),
                                      distance(body(q).position, pending[0]->position));
      keep_order = straight <= swapped;
    }
    const Entity& lp = *pending[keep_order ? 0 : 1];
    const Entity& lq = *pending[keep_order ? 1 : 0];
    mem(p).target = lp.id;
    mem(q).target = lq.id;
    cmd(p) = use_env(w_, p, lp, true);
    cmd(q) = use_env(w_, q, lq, true);
  }

  void forced_landmarks(const StageBinding& b) {
    if (actors_.size() < 2) {
      stall_ = "unreachable: forced landmarks need both agents";
      return;
    }
    std::array<const Entity*, 2> lm{};
    std::array<bool, 2> arrived{}, lit{};
    for (int i = 0; i < 2; ++i) {
      lm[static_cast<std::size_t>(i)] = w_.find(b.landmarks[static_cast<std::size_t>(i)]);
      const Entity& e = *lm[static_cast<std::size_t>(i)];
      const int owner = *e.owner;
      arrived[static_cast<std::size_t>(i)] = distance(body(owner).position, e.position) <= kOnSpot;
      lit[static_cast<std::size_t>(i)] = lit_since(e, floor_);
    }
    for (int i = 0; i < 2; ++i) {
      const Entity& e = *lm[static_cast<std::size_t>(i)];
      const int owner = *e.owner;
      const bool go = (arrived[0] && arrived[1]) || lit[static_cast<std::size_t>(1 - i)];
      cmd(owner) = use_env(w_, owner, e, true, go && !lit[static_cast<std::size_t>(i)]);
    }
  }

  void meeting(const StageBinding& b) {
    if (actors_.size() < 2) {
      stall_ = "unreachable: meeting point needs both agents";
      return;
    }
    const Entity& e = *w_.find(b.meeting);
    const bool both = distance(body(actors_[0]).position, e.position) <= kOnSpot &&
                      distance(body(actors_[1]).position, e.position) <= kOnSpot;
    for (int x : actors_) cmd(x) = use_env(w_, x, e, true, both);
  }

  const WorldSlot& slot_;
  const WorldState& w_;
  std::vector<int> actors_;
  std::array<AgentMemory, kNumAgents>& mem_;
  JointAction& out_;
  std::string& stall_;
  int s_ = 1;
  int floor_ = -1;
};

bool active_slots_complete(const Episode& ep, int n_agents) {
  for (int i = 0; i < ep.slot_count(); ++i) {
    const WorldSlot& s = ep.slot(i);
    if (actors_in(s, n_agents).empty()) continue;
    if (!s.progress.all_complete()) return false;
  }
  return true;
}

int last_completion(const Episode& ep, int n_agents) {
  int last = 0;
  for (int i = 0; i < ep.slot_count(); ++i) {
    const WorldSlot& s = ep.slot(i);
    if (actors_in(s, n_agents).empty()) continue;
    last = std::max(last, s.progress.completed_time(s.progress.depth) + 1);
  }
  return last;
}

template <typename Policy>
OracleResult run_policy(Episode& ep, Policy& policy, int n_agents, const std::string* stall) {
  OracleResult res;
  while (!ep.done() && !active_slots_complete(ep, n_agents)) {
    const JointAction a = policy.act(ep);
    ep.step(a);
  }
  res.success = active_slots_complete(ep, n_agents);
  res.steps = res.success ? last_completion(ep, n_agents) : ep.t();
  if (!res.success) res.cause = stall != nullptr && !stall->empty() ? *stall : "timeout";
  for (int a = 0; a < kNumAgents; ++a) res.progress[static_cast<std::size_t>(a)] = ep.progress(a);
  return res;
}

}  // namespace

std::pair<int, int> room_of(const ArenaConfig& a, Vec2 p) {
  const int rx = std::clamp(static_cast<int>(std::floor(p.x / a.room_size)), 0, a.rooms_x - 1);
  const int ry = std::clamp(static_cast<int>(std::floor(p.y / a.room_size)), 0, a.rooms_y - 1);
  return {rx, ry};
}

std::vector<Vec2> route(const ArenaConfig& a, Vec2 from, Vec2 to) {
  std::vector<Vec2> out;
  const auto path = room_path(a, room_of(a, from), room_of(a, to));
  Vec2 pos = from;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const Door d = door_between(a, path[i], path[i + 1]);
    if (i > 0 || !in_corridor(a, d, pos)) out.push_back(d.center - d.normal * kApproach);
    out.push_back(d.center + d.normal * kApproach);
    pos = out.back();
  }
  out.push_back(to);
  return out;
}

ActionCommand navigate(const WorldState& world, int agent_id, Vec2 target, double arrive) {
  const AgentBody* body = world.agent(agent_id);
  if (body == nullptr) return {};
  if (distance(body->position, target) <= arrive) return {};
  const auto wps = route(world.arena, body->position, target);
  const bool final = wps.size() == 1;
  return steer(world.arena, *body, wps.front(), final ? arrive : 0.0, final);
}

ActionCommand navigate(const WorldState& world, int agent_id, Vec2 target) {
  return navigate(world, agent_id, target, world.arena.reach);
}

JointAction ScriptedOracle::act(const Episode& ep) {
  JointAction out{};
  stall_.clear();
  for (int i = 0; i < ep.slot_count(); ++i) {
    const WorldSlot& s = ep.slot(i);
    auto actors = actors_in(s, n_agents_);
    if (actors.empty()) continue;
    SlotPlanner(s, std::move(actors), mem_, out, stall_).plan();
  }
  return out;
}

OracleResult solve_tree(Episode& ep, int n_agents) {
  ScriptedOracle oracle(n_agents);
  return run_policy(ep, oracle, n_agents, &oracle.stall_reason());
}

// ---- brute force ----

namespace {

std::pair<int, int> ordered_pair(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

ObjectSpec spec_of_key(int key) {
  return ObjectSpec::task(static_cast<Shape>(key / kNumColors), static_cast<Color>(key % kNumColors));
}

}  // namespace

void BruteForceExplorer::observe_events(const WorldSlot& slot, Tried& tried) {
  for (; tried.log_cursor < slot.log.size(); ++tried.log_cursor) {
    const WorldEvent& e = slot.log[tried.log_cursor];
    if (e.kind == EventKind::kContact && e.result) {
      const auto key = ordered_pair(e.spec.key(), e.result->key());
      if (tried.pairs.insert(key).second) tried.pair_log.push_back(key);
    }
  }
  bool fresh = false;
  for (const Entity& e : slot.task.world.entities) {
    if (e.spec.is_task() && tried.seen_specs.insert(e.spec.key()).second) fresh = true;
  }
  if (fresh) tried.landmarks.clear();
}

JointAction BruteForceExplorer::act(const Episode& ep) {
  JointAction out{};
  for (int si = 0; si < ep.slot_count(); ++si) {
    const WorldSlot& slot = ep.slot(si);
    const auto actors = actors_in(slot, n_agents_);
    if (actors.empty()) continue;
    Tried& tried = tried_[static_cast<std::size_t>(si)];
    observe_events(slot, tried);
    const WorldState& w = slot.task.world;

    // Candidate goals from what is currently in the world.
    std::vector<Goal> goals;
    std::set<int> present;
    for (const Entity& e : w.entities) {
      if (e.spec.is_task()) present.insert(e.spec.key());
    }
    int lit_landmarks = 0;
    for (const Entity& e : w.entities) {
      if (e.spec.is_task()) continue;
      if (e.spec.env_kind == EnvKind::kLandmark || e.spec.env_kind == EnvKind::kMeetingLandmark) {
        if (tried.landmarks.contains(e.id)) ++lit_landmarks;
        else goals.push_back({GoalKind::kLandmark, -1, -1, e.id});
      } else if (e.spec.env_kind == EnvKind::kInOutMachine || e.spec.env_kind == EnvKind::kDropOffPoint) {
        for (int x : present) {
          if (!tried.deliveries.contains({static_cast<int>(e.spec.env_kind), x})) {
            goals.push_back({GoalKind::kDeliver, x, -1, e.id});
          }
        }
      }
    }
    for (int x : present) {
      if (!tried.activated.contains(x)) goals.push_back({GoalKind::kActivateObject, x, -1, -1});
      for (int y : present) {
        if (y < x) continue;
        if (y == x && w.count(spec_of_key(x)) < 2) continue;
        if (!tried.pairs.contains({x, y})) goals.push_back({GoalKind::kPair, x, y, -1});
      }
    }
    if (goals.empty()) {
      // Everything tried: start another round of landmark visits.
      tried.landmarks.clear();
    }

    auto still_valid = [&](const Goal& g) { return std::find(goals.begin(), goals.end(), g) != goals.end(); };
    for (int agent : actors) {
      AgentMemory& m = mem_[static_cast<std::size_t>(agent)];
      const AgentBody& body = *w.agent(agent);
      const int other = agent == 0 ? 1 : 0;
      const bool other_active = std::find(actors.begin(), actors.end(), other) != actors.end();
      const auto& other_goal = goal_of_[static_cast<std::size_t>(other)];
      auto claimed_by_other = [&](const Goal& g) { return other_active && other_goal.has_value() && *other_goal == g; };
      std::optional<Goal> current = goal_of_[static_cast<std::size_t>(agent)];
      if (current && (!still_valid(*current) || claimed_by_other(*current))) current.reset();
      if (!current) {
        double best = std::numeric_limits<double>::infinity();
        for (const Goal& g : goals) {
          if (claimed_by_other(g)) continue;
          double cost = 0.0;
          if (g.kind == GoalKind::kLandmark) {
            cost = distance(body.position, w.find(g.entity)->position);
            if (lit_landmarks > 0) cost -= 1000.0;  // finish a round of landmarks quickly
          } else {
            const Entity* e = nearest_instance(w, spec_of_key(g.x), body.position, agent);
            if (e == nullptr) continue;
            cost = distance(body.position, e->position);
            if (g.kind == GoalKind::kPair) {
              const Entity* f = nearest_instance(w, spec_of_key(g.y), e->position, agent, e->id);
              if (f == nullptr) continue;
              cost += distance(e->position, f->position);
            } else if (g.kind == GoalKind::kDeliver) {
              cost += distance(e->position, w.find(g.entity)->position);
            } else {
              cost -= 500.0;  // newly appeared objects are activated first
            }
          }
          if (cost < best) {
            best = cost;
            current = g;
          }
        }
      }
      goal_of_[static_cast<std::size_t>(agent)] = current;
      ActionCommand& c = out[static_cast<std::size_t>(agent)];
      if (!current) {
        c = idle(w, agent, false);
        continue;
      }
      const Goal g = *current;
      const Entity* held = held_entity(w, agent);
      switch (g.kind) {
        case GoalKind::kLandmark: {
          const Entity& lm = *w.find(g.entity);
          c = use_env(w, agent, lm, false);
          if (c.activate) tried.landmarks.insert(g.entity);
          break;
        }
        case GoalKind::kActivateObject: {
          if (held != nullptr && held->spec.key() == g.x) {
            c = activate_held(w, agent);
            if (c.activate) tried.activated.insert(g.x);
          } else if (const Entity* e = nearest_instance(w, spec_of_key(g.x), body.position, agent)) {
            c = fetch(w, agent, m, *e);
          }
          break;
        }
        case GoalKind::kPair: {
          const bool holds_x = held != nullptr && held->spec.key() == g.x;
          const bool holds_y = held != nullptr && held->spec.key() == g.y;
          if (holds_x || holds_y) {
            const int partner = holds_x ? g.y : g.x;
            const Entity* f = nearest_instance(w, spec_of_key(partner), body.position, agent, held->id);
            if (f == nullptr) break;
            // The pair counts as tried once the contact event shows up in the log.
            c = carry_to(w, agent, f->position, 0.0);
          } else if (const Entity* e = nearest_instance(w, spec_of_key(g.x), body.position, agent)) {
            c = fetch(w, agent, m, *e);
          }
          break;
        }
        case GoalKind::kDeliver: {
          const Entity& env = *w.find(g.entity);
          if (held != nullptr && held->spec.key() == g.x) {
            c = use_env(w, agent, env, true);
            if (c.activate) tried.deliveries.insert({static_cast<int>(env.spec.env_kind), g.x});
          } else if (const Entity* e = nearest_instance(w, spec_of_key(g.x), body.position, agent)) {
            c = fetch(w, agent, m, *e);
          }
          break;
        }
      }
    }
  }
  return out;
}

OracleResult brute_force_explore(Episode& ep, int n_agents, BruteForceExplorer* explorer) {
  BruteForceExplorer local(n_agents);
  BruteForceExplorer& bf = explorer != nullptr ? *explorer : local;
  return run_policy(ep, bf, n_agents, nullptr);
}

JointAction RandomPolicy::act(const Episode&) {
  JointAction out{};
  for (ActionCommand& c : out) {
    c.turn = rng_.uniform(-1.0, 1.0);
    c.forward = rng_.uniform();
    c.grasp = rng_.bernoulli(0.5);
    c.activate = rng_.bernoulli(0.1);
  }
  return out;
}

OracleResult run_random(Episode& ep, std::uint64_t seed) {
  RandomPolicy policy(seed);
  return run_policy(ep, policy, kNumAgents, nullptr);
}

}  // namespace coex
