#include "coex/task_tree.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <sstream>
#include <stdexcept>

namespace coex {
namespace {

constexpr std::array<std::string_view, 9> kTypeNames = {
    "activate_landmarks", "lemon_hunt",   "crafting",          "in_out_machine", "drop_off_point",
    "forced_landmarks",   "meeting_point", "forced_lemon_hunt", "pressure_plate"};

bool is_landmark_type(TaskType t) {
  return t == TaskType::kActivateLandmarks || t == TaskType::kForcedLandmarks ||
         t == TaskType::kMeetingPoint;
}

bool is_forced_type(TaskType t) {
  return t == TaskType::kForcedLandmarks || t == TaskType::kMeetingPoint ||
         t == TaskType::kForcedLemonHunt;
}

bool is_lemon_type(TaskType t) { return t == TaskType::kLemonHunt || t == TaskType::kForcedLemonHunt; }

// Whether a stage of this kind creates an object when it is not the last stage
// (or when it is the last stage of an object-exists tree).
bool destroys_target(SubtaskKind k) {
  return k.type == TaskType::kDropOffPoint ||
         (k.type == TaskType::kCrafting && k.craft == CraftMode::kDespawn);
}

std::string join_specs(const std::vector<ObjectSpec>& specs) {
  std::string s;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i > 0) s += ',';
    s += to_string(specs[i]);
  }
  return s.empty() ? "-" : s;
}

}  // namespace

std::string to_string(TaskType type) { return std::string(kTypeNames[static_cast<int>(type)]); }

TaskType parse_task_type(std::string_view text) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == text) return static_cast<TaskType>(i);
  }
  throw std::invalid_argument("unknown task type '" + std::string(text) + "'");
}

std::string to_string(SubtaskKind kind) {
  std::string s = to_string(kind.type);
  if (kind.type == TaskType::kCrafting) s += kind.craft == CraftMode::kSpawn ? "(spawn)" : "(despawn)";
  return s;
}

int TaskTree::initial_object_count() const {
  int n = 0;
  for (const auto& [spec, count] : initial_spawn) n += count;
  return n;
}

std::string serialize(const TaskTree& tree) {
  std::ostringstream os;
  os << "depth=" << tree.depth << ";end="
     << (tree.end.kind == EndCondition::Kind::kObjectExists ? "exists:" : "not_exists:")
     << to_string(tree.end.target) << ";forced=" << (tree.forced ? 1 : 0) << ";seed=" << tree.seed
     << ";spawn=";
  for (std::size_t i = 0; i < tree.initial_spawn.size(); ++i) {
    if (i > 0) os << ',';
    os << to_string(tree.initial_spawn[i].first) << '*' << tree.initial_spawn[i].second;
  }
  for (const Subtask& s : tree.subtasks) {
    os << ";s" << s.stage << '=' << to_string(SubtaskKind{s.type, s.craft}) << "|in=" << join_specs(s.inputs)
       << "|out=" << join_specs(s.outputs);
    if (s.lemon) os << "|lemon=" << to_string(*s.lemon);
    if (s.landmark_count > 0) os << "|landmarks=" << s.landmark_count;
    if (s.window > 0) os << "|window=" << s.window;
    if (is_forced_type(s.type)) os << "|role=" << s.role_agent;
  }
  return os.str();
}

std::set<SubtaskKind> legal_subtask_pool(int stage, int depth, EndCondition::Kind end,
                                         std::span<const TaskType> preceding, bool forced) {
  if (depth < 1 || stage < 1 || stage > depth) {
    throw std::invalid_argument("invalid stage " + std::to_string(stage) + " for depth " +
                                std::to_string(depth));
  }
  std::set<SubtaskKind> pool;
  if (stage == depth) {
    if (end == EndCondition::Kind::kObjectExists) {
      pool = {{TaskType::kCrafting, CraftMode::kSpawn}, {TaskType::kInOutMachine}};
    } else {
      pool = {{TaskType::kDropOffPoint}, {TaskType::kCrafting, CraftMode::kDespawn}};
    }
  } else if (forced) {
    pool = {{TaskType::kForcedLandmarks},
            {TaskType::kForcedLemonHunt},
            {TaskType::kCrafting, CraftMode::kSpawn},
            {TaskType::kInOutMachine},
            {TaskType::kMeetingPoint}};
  } else {
    pool = {{TaskType::kActivateLandmarks},
            {TaskType::kLemonHunt},
            {TaskType::kCrafting, CraftMode::kSpawn},
            {TaskType::kInOutMachine}};
  }
  std::set<SubtaskKind> fresh;
  for (const SubtaskKind& k : pool) {
    if (std::find(preceding.begin(), preceding.end(), k.type) == preceding.end()) fresh.insert(k);
  }
  return fresh.empty() ? pool : fresh;
}

namespace {

struct Structure {
  EndCondition::Kind end;
  std::vector<SubtaskKind> kinds;  // index 0 = stage 1
};

std::set<SubtaskKind> custom_pool(const std::vector<TaskType>& allowed, std::span<const TaskType> used,
                                  bool final_stage, EndCondition::Kind end) {
  std::set<SubtaskKind> pool;
  for (TaskType t : allowed) {
    if (t == TaskType::kCrafting) {
      const bool despawn = final_stage && end == EndCondition::Kind::kObjectNotExists;
      pool.insert({t, despawn ? CraftMode::kDespawn : CraftMode::kSpawn});
    } else if (t == TaskType::kDropOffPoint) {
      if (final_stage && end == EndCondition::Kind::kObjectNotExists) pool.insert({t});
    } else {
      if (!(final_stage && end == EndCondition::Kind::kObjectNotExists)) pool.insert({t});
    }
  }
  std::set<SubtaskKind> fresh;
  for (const SubtaskKind& k : pool) {
    if (std::find(used.begin(), used.end(), k.type) == used.end()) fresh.insert(k);
  }
  return fresh.empty() ? pool : fresh;
}

template <typename Set>
typename Set::value_type pick(Rng& rng, const Set& set) {
  auto it = set.begin();
  std::advance(it, static_cast<long>(rng.below(set.size())));
  return *it;
}

std::optional<Structure> sample_structure(Rng& rng, int depth, bool forced, const SamplerOptions& options) {
  Structure st;
  st.end = rng.bernoulli(0.5) ? EndCondition::Kind::kObjectExists : EndCondition::Kind::kObjectNotExists;
  st.kinds.resize(static_cast<std::size_t>(depth));
  std::vector<TaskType> used;
  for (int s = depth; s >= 1; --s) {
    std::set<SubtaskKind> pool =
        options.allowed_types.empty()
            ? legal_subtask_pool(s, depth, st.end, used, forced)
            : custom_pool(options.allowed_types, used, s == depth, st.end);
    if (pool.empty()) return std::nullopt;
    const SubtaskKind k = pick(rng, pool);
    st.kinds[static_cast<std::size_t>(s - 1)] = k;
    used.push_back(k.type);
  }
  if (forced && std::none_of(st.kinds.begin(), st.kinds.end(), [](SubtaskKind k) { return is_forced_type(k.type); })) {
    return std::nullopt;
  }
  return st;
}

int input_count(SubtaskKind k) {
  if (k.type == TaskType::kCrafting) return 2;
  if (is_landmark_type(k.type)) return 0;
  return 1;
}

}  // namespace

TaskTree sample_task_tree(Rng& rng, int depth, bool forced, std::span<const ObjectSpec> object_pool,
                          const SamplerOptions& options) {
  if (depth < 1) throw std::invalid_argument("task tree depth must be >= 1");
  if (object_pool.empty()) throw std::invalid_argument("object pool is empty");
  if (forced && depth < 2 && options.allowed_types.empty()) {
    throw std::invalid_argument("forced-cooperation trees need depth >= 2");
  }
  const std::uint64_t seed = rng.key();

  for (int attempt = 0; attempt < 10000; ++attempt) {
    const auto st = sample_structure(rng, depth, forced, options);
    if (!st) continue;
    const bool exists = st->end == EndCondition::Kind::kObjectExists;

    // Created specs: each stage's output (none for a final destroyer) plus lemons.
    int created = 0;
    for (int s = 1; s <= depth; ++s) {
      const SubtaskKind k = st->kinds[static_cast<std::size_t>(s - 1)];
      const bool last = s == depth;
      if (!(last && destroys_target(k))) ++created;
      if (is_lemon_type(k.type)) ++created;
    }
    int pre_slots = input_count(st->kinds[0]);
    for (int s = 2; s <= depth; ++s) {
      const int n = input_count(st->kinds[static_cast<std::size_t>(s - 1)]);
      if (n > 1) pre_slots += n - 1;
    }
    const int pre_distinct = st->kinds[0].type == TaskType::kCrafting ? 2 : (pre_slots > 0 ? 1 : 0);
    if (created + pre_distinct > static_cast<int>(object_pool.size())) continue;

    std::vector<ObjectSpec> order(object_pool.begin(), object_pool.end());
    rng.shuffle(std::span(order));
    std::size_t next_created = 0;
    auto take_created = [&] { return order[next_created++]; };
    const std::span<const ObjectSpec> rest(order.begin() + created, order.end());
    auto take_pre = [&] { return rest[rng.below(rest.size())]; };

    TaskTree tree;
    tree.depth = depth;
    tree.forced = forced;
    tree.seed = seed;
    tree.custom_pool = !options.allowed_types.empty();
    tree.end.kind = st->end;

    std::optional<ObjectSpec> carried;  // output of the previous stage
    for (int s = 1; s <= depth; ++s) {
      const SubtaskKind k = st->kinds[static_cast<std::size_t>(s - 1)];
      Subtask sub;
      sub.stage = s;
      sub.type = k.type;
      sub.craft = k.craft;
      const int n_in = input_count(k);
      for (int i = 0; i < n_in; ++i) {
        if (i == 0 && s > 1) {
          sub.inputs.push_back(*carried);
        } else if (i == 1 && s == 1) {
          // Stage-1 crafting pairs two distinct pre-spawned specs.
          ObjectSpec b = take_pre();
          while (b == sub.inputs[0]) b = take_pre();
          sub.inputs.push_back(b);
        } else {
          sub.inputs.push_back(take_pre());
        }
      }
      if (is_lemon_type(k.type)) sub.lemon = take_created();
      const bool last = s == depth;
      if (!(last && destroys_target(k))) sub.outputs.push_back(take_created());
      carried = sub.outputs.empty() ? std::nullopt : std::optional(sub.outputs[0]);

      switch (k.type) {
        case TaskType::kActivateLandmarks:
          sub.landmark_count = options.landmark_count > 0 ? options.landmark_count : (rng.bernoulli(0.5) ? 2 : 1);
          sub.window = sub.landmark_count == 2 ? kTwoLandmarkWindow : 0;
          break;
        case TaskType::kForcedLandmarks:
          sub.landmark_count = 2;
          sub.window = kForcedWindow;
          sub.role_agent = static_cast<int>(rng.below(2));
          break;
        case TaskType::kMeetingPoint:
          sub.landmark_count = 1;
          sub.window = kForcedWindow;
          break;
        case TaskType::kForcedLemonHunt:
          sub.role_agent = static_cast<int>(rng.below(2));
          break;
        default:
          break;
      }
      tree.subtasks.push_back(std::move(sub));
    }

    const Subtask& final_stage = tree.subtasks.back();
    if (exists) {
      tree.end.target = final_stage.outputs.at(0);
    } else {
      tree.end.target = final_stage.inputs.at(0);
    }

    std::map<ObjectSpec, int> spawn;
    for (const Subtask& sub : tree.subtasks) {
      for (std::size_t i = 0; i < sub.inputs.size(); ++i) {
        if (sub.stage == 1 || i > 0) ++spawn[sub.inputs[i]];
      }
    }
    tree.initial_spawn.assign(spawn.begin(), spawn.end());
    return tree;
  }
  throw std::runtime_error("could not sample a task tree of depth " + std::to_string(depth));
}

TaskTree make_pressure_plate_task(Rng& rng, std::span<const ObjectSpec> object_pool) {
  if (object_pool.size() < 2) throw std::invalid_argument("pressure plate task needs two object specs");
  std::vector<ObjectSpec> order(object_pool.begin(), object_pool.end());
  rng.shuffle(std::span(order));
  TaskTree tree;
  tree.depth = 1;
  tree.seed = rng.key();
  tree.forced = true;
  Subtask sub;
  sub.stage = 1;
  sub.type = TaskType::kPressurePlate;
  sub.inputs = {order[0]};
  sub.outputs = {order[1]};
  tree.subtasks = {sub};
  tree.end = {EndCondition::Kind::kObjectExists, order[1]};
  tree.initial_spawn = {{order[0], 1}};
  return tree;
}

void validate_tree(const TaskTree& tree) {
  auto fail = [&](const std::string& what) { throw std::logic_error("invalid task tree: " + what); };
  if (tree.depth < 1) fail("depth < 1");
  if (static_cast<int>(tree.subtasks.size()) != tree.depth) fail("subtask count differs from depth");
  const bool exists = tree.end.kind == EndCondition::Kind::kObjectExists;
  if (!tree.end.target.is_task()) fail("end target is not a task object");

  std::vector<TaskType> later;
  std::multiset<int> expected_spawn;
  std::set<int> created;
  for (int s = 1; s <= tree.depth; ++s) {
    const Subtask& sub = tree.stage(s);
    if (sub.stage != s) fail("stages out of order");
    const SubtaskKind kind{sub.type, sub.craft};
    if (!tree.custom_pool && sub.type != TaskType::kPressurePlate) {
      const auto pool = legal_subtask_pool(s, tree.depth, tree.end.kind, {}, tree.forced);
      if (!pool.contains(kind)) fail("stage " + std::to_string(s) + " type " + to_string(kind) + " not legal");
    }
    const int n_in = sub.type == TaskType::kPressurePlate ? 1 : input_count(kind);
    if (static_cast<int>(sub.inputs.size()) != n_in) fail("stage " + std::to_string(s) + " input count");
    const bool last = s == tree.depth;
    const std::size_t n_out = last && destroys_target(kind) ? 0 : 1;
    if (sub.outputs.size() != n_out) fail("stage " + std::to_string(s) + " output count");
    if (is_lemon_type(sub.type) != sub.lemon.has_value()) fail("lemon mismatch");
    if (sub.type == TaskType::kActivateLandmarks) {
      if (sub.landmark_count != 1 && sub.landmark_count != 2) fail("landmark count");
      if (sub.window != (sub.landmark_count == 2 ? kTwoLandmarkWindow : 0)) fail("two-landmark window");
    }
    if ((sub.type == TaskType::kForcedLandmarks || sub.type == TaskType::kMeetingPoint) &&
        sub.window != kForcedWindow) {
      fail("forced window");
    }
    for (std::size_t i = 0; i < sub.inputs.size(); ++i) {
      if (!sub.inputs[i].is_task()) fail("non-task input");
      if (s == 1 || i > 0) expected_spawn.insert(sub.inputs[i].key());
    }
    if (s == 1 && kind.type == TaskType::kCrafting && sub.inputs[0] == sub.inputs[1]) {
      fail("stage-1 crafting inputs must differ");
    }
    // Chaining: the previous stage's output feeds inputs[0].
    if (s > 1 && sub.takes_objects()) {
      const Subtask& prev = tree.stage(s - 1);
      if (prev.outputs.empty() || prev.outputs[0] != sub.inputs[0]) {
        fail("stage " + std::to_string(s) + " input not produced by stage " + std::to_string(s - 1));
      }
    }
    for (const ObjectSpec& o : sub.outputs) {
      if (!created.insert(o.key()).second) fail("created spec repeated");
    }
    if (sub.lemon && !created.insert(sub.lemon->key()).second) fail("lemon spec repeated");
  }

  const Subtask& last = tree.subtasks.back();
  if (!tree.custom_pool && last.type != TaskType::kPressurePlate) {
    const SubtaskKind k{last.type, last.craft};
    if (exists == destroys_target(k)) fail("final stage incompatible with end condition");
  }
  if (exists) {
    if (last.outputs.empty() || last.outputs[0] != tree.end.target) fail("end target is not the final output");
  } else if (last.inputs.empty() || last.inputs[0] != tree.end.target) {
    fail("end target is not the final input");
  }

  std::multiset<int> actual_spawn;
  for (const auto& [spec, count] : tree.initial_spawn) {
    if (count < 1) fail("non-positive spawn count");
    for (int i = 0; i < count; ++i) actual_spawn.insert(spec.key());
  }
  if (actual_spawn != expected_spawn) fail("initial spawn does not cover the pre-spawned inputs");
  for (int key : created) {
    if (actual_spawn.contains(key)) fail("created spec also pre-spawned");
  }
  if (!exists && actual_spawn.count(tree.end.target.key()) > 1) fail("end target spawned more than once");
  if (tree.forced && last.type != TaskType::kPressurePlate &&
      std::none_of(tree.subtasks.begin(), tree.subtasks.end(),
                   [](const Subtask& s) { return is_forced_type(s.type); })) {
    fail("forced tree without a forced subtask");
  }

  // Symbolic replay: each stage finds its inputs and leaves the next stage's inputs.
  std::multiset<int> pool = actual_spawn;
  for (const Subtask& sub : tree.subtasks) {
    for (const ObjectSpec& in : sub.inputs) {
      const auto it = pool.find(in.key());
      if (it == pool.end()) fail("stage " + std::to_string(sub.stage) + " input missing at its turn");
      pool.erase(it);
    }
    for (const ObjectSpec& out : sub.outputs) pool.insert(out.key());
  }
}

InteractionTable build_interaction_table(const TaskTree& tree) {
  InteractionTable table;
  for (const Subtask& sub : tree.subtasks) {
    const std::optional<ObjectSpec> out =
        sub.outputs.empty() ? std::nullopt : std::optional(sub.outputs[0]);
    switch (sub.type) {
      case TaskType::kCrafting:
        if (sub.craft == CraftMode::kSpawn) {
          table.set_pair(sub.inputs[0], sub.inputs[1], {PairOutcome::Kind::kSpawn, *out});
        } else {
          table.set_pair(sub.inputs[0], sub.inputs[1], {PairOutcome::Kind::kDespawnBoth, {}});
        }
        break;
      case TaskType::kInOutMachine:
        table.set_machine(EnvKind::kInOutMachine, sub.inputs[0], {MachineRule::Kind::kSwitchTo, *out});
        break;
      case TaskType::kPressurePlate:
        table.set_machine(EnvKind::kInOutMachine, sub.inputs[0], {MachineRule::Kind::kSwitchTo, *out});
        table.machines_need_plate = true;
        break;
      case TaskType::kDropOffPoint:
        table.set_machine(EnvKind::kDropOffPoint, sub.inputs[0], {MachineRule::Kind::kConsume, {}});
        break;
      case TaskType::kLemonHunt:
        table.set_activate(sub.inputs[0], {ActivateOutcome::Kind::kBecome, *sub.lemon, std::nullopt});
        table.set_activate(*sub.lemon, {ActivateOutcome::Kind::kConsume, {}, std::nullopt});
        break;
      case TaskType::kForcedLemonHunt:
        table.set_activate(sub.inputs[0], {ActivateOutcome::Kind::kBecome, *sub.lemon, sub.role_agent});
        table.set_activate(*sub.lemon, {ActivateOutcome::Kind::kConsume, {}, 1 - sub.role_agent});
        break;
      case TaskType::kActivateLandmarks:
      case TaskType::kForcedLandmarks:
      case TaskType::kMeetingPoint:
        break;
    }
  }
  return table;
}

namespace {

class Placer {
 public:
  Placer(WorldState& world, Rng& rng) : world_(world), rng_(rng) {}

  Vec2 edge() {
    const ArenaConfig& a = world_.arena;
    const double inset = a.wall_thickness + a.env_radius + 2.0;
    const double w = a.width(), h = a.height();
    const double len_x = w - 2.0 * inset, len_y = h - 2.0 * inset;
    for (int tries = 0; tries < 2000; ++tries) {
      const double u = rng_.uniform(0.0, 2.0 * (len_x + len_y));
      Vec2 p;
      if (u < len_x) p = {inset + u, inset};
      else if (u < 2 * len_x) p = {inset + (u - len_x), h - inset};
      else if (u < 2 * len_x + len_y) p = {inset, inset + (u - 2 * len_x)};
      else p = {w - inset, inset + (u - 2 * len_x - len_y)};
      if (!world_.is_free(p, a.env_radius)) continue;
      if (!clear_of_env(p, 2.0 * a.env_radius + 8.0)) continue;
      return p;
    }
    throw std::runtime_error("placement failed: no free edge position for an environment object");
  }

  Vec2 interior(double radius) {
    const ArenaConfig& a = world_.arena;
    const double lo = a.wall_thickness + radius + 1.0;
    for (int tries = 0; tries < 2000; ++tries) {
      const Vec2 p{rng_.uniform(lo, a.width() - lo), rng_.uniform(lo, a.height() - lo)};
      if (!world_.is_free(p, radius + 1.0)) continue;
      if (!clear_of_env(p, a.env_radius + radius + 2.0)) continue;
      bool ok = true;
      for (const Entity& e : world_.entities) {
        if (e.spec.is_task() && distance(e.position, p) < a.object_radius + radius + 4.0) ok = false;
      }
      for (const AgentBody& g : world_.agents) {
        if (distance(g.position, p) < a.agent_radius + radius + 4.0) ok = false;
      }
      if (ok) return p;
    }
    throw std::runtime_error("placement failed: no free interior position");
  }

 private:
  bool clear_of_env(Vec2 p, double min_dist) const {
    for (const Entity& e : world_.entities) {
      if (!e.spec.is_task() && distance(e.position, p) < min_dist) return false;
    }
    return true;
  }

  WorldState& world_;
  Rng& rng_;
};

}  // namespace

MaterializedTask materialize(const TaskTree& tree, Rng& rng, const ArenaConfig& arena,
                             std::span<const int> agent_ids) {
  MaterializedTask m;
  m.world = WorldState::empty(arena);
  m.table = build_interaction_table(tree);
  m.bindings.resize(tree.subtasks.size());
  Placer place(m.world, rng);

  int machine = -1, dropoff = -1, plate = -1;
  auto env = [&](EnvKind kind) { return m.world.add_entity(ObjectSpec::environment(kind), place.edge()); };
  for (const Subtask& sub : tree.subtasks) {
    StageBinding& b = m.bindings[static_cast<std::size_t>(sub.stage - 1)];
    switch (sub.type) {
      case TaskType::kActivateLandmarks:
        for (int i = 0; i < sub.landmark_count; ++i) b.landmarks.push_back(env(EnvKind::kLandmark));
        break;
      case TaskType::kForcedLandmarks:
        for (int i = 0; i < 2; ++i) {
          const int id = env(EnvKind::kLandmark);
          m.world.find(id)->owner = i == 0 ? sub.role_agent : 1 - sub.role_agent;
          b.landmarks.push_back(id);
        }
        break;
      case TaskType::kMeetingPoint:
        b.meeting = env(EnvKind::kMeetingLandmark);
        break;
      case TaskType::kInOutMachine:
        if (machine < 0) machine = env(EnvKind::kInOutMachine);
        b.machine = machine;
        break;
      case TaskType::kPressurePlate:
        if (machine < 0) machine = env(EnvKind::kInOutMachine);
        if (plate < 0) plate = env(EnvKind::kPressurePlate);
        b.machine = machine;
        b.plate = plate;
        break;
      case TaskType::kDropOffPoint:
        if (dropoff < 0) dropoff = env(EnvKind::kDropOffPoint);
        b.dropoff = dropoff;
        break;
      default:
        break;
    }
  }

  for (int id : agent_ids) {
    AgentBody a;
    a.id = id;
    a.position = place.interior(arena.agent_radius);
    a.heading = wrap_angle(rng.uniform(0.0, 2.0 * std::numbers::pi));
    m.world.agents.push_back(a);
  }
  for (const auto& [spec, count] : tree.initial_spawn) {
    for (int i = 0; i < count; ++i) m.world.add_entity(spec, place.interior(arena.object_radius));
  }
  return m;
}

Vec2 producer_site(const WorldState& world, Vec2 anchor) {
  const ArenaConfig& a = world.arena;
  const Vec2 center{a.width() / 2.0, a.height() / 2.0};
  Vec2 dir = center - anchor;
  const double n = dir.norm();
  dir = n > 0.0 ? dir * (1.0 / n) : Vec2{1.0, 0.0};
  for (double step = a.env_radius + a.object_radius + 4.0; step < a.room_size; step += 4.0) {
    const Vec2 p = anchor + dir * step;
    if (world.is_free(p, a.object_radius + 1.0)) return p;
  }
  return anchor;
}

namespace {

// Latest activation of `landmark` after `floor` (and after its last reset), optionally by one agent.
std::optional<int> lit_time(std::span<const WorldEvent> log, int landmark, int floor, int agent = -1) {
  int f = floor;
  for (const WorldEvent& e : log) {
    if (e.kind == EventKind::kWindowReset && e.entity == landmark && (agent < 0 || e.agent == agent)) {
      f = std::max(f, e.t);
    }
  }
  std::optional<int> lit;
  for (const WorldEvent& e : log) {
    if (e.kind != EventKind::kLandmarkActivated || e.entity != landmark || e.t <= f) continue;
    if (agent >= 0 && e.agent != agent) continue;
    lit = std::max(lit.value_or(e.t), e.t);
  }
  return lit;
}

bool end_condition_holds(const TaskTree& tree, const WorldState& world) {
  const int n = world.count(tree.end.target);
  return tree.end.kind == EndCondition::Kind::kObjectExists ? n > 0 : n == 0;
}

}  // namespace

StageResult stage_predicate(const TaskTree& tree, const StageBinding& binding, int stage,
                            const StageProgress& progress, std::span<const WorldEvent> log,
                            const WorldState& world, int t) {
  if (stage < 1 || stage > tree.depth) throw std::logic_error("stage out of range");
  if (stage != progress.frontier()) {
    throw std::logic_error("stage " + std::to_string(stage) + " queried before stage " +
                           std::to_string(progress.frontier()) + " is complete");
  }
  const Subtask& sub = tree.stage(stage);
  const int floor = progress.completed_time(stage - 1);
  StageResult r;

  if (is_landmark_type(sub.type)) {
    std::vector<std::pair<int, int>> lit;  // (time, landmark or agent)
    if (sub.type == TaskType::kMeetingPoint) {
      for (int agent = 0; agent < 2; ++agent) {
        if (auto l = lit_time(log, binding.meeting, floor, agent)) lit.emplace_back(*l, agent);
      }
    } else {
      for (int id : binding.landmarks) {
        if (auto l = lit_time(log, id, floor)) lit.emplace_back(*l, id);
      }
    }
    const std::size_t needed = sub.type == TaskType::kMeetingPoint ? 2 : binding.landmarks.size();
    if (lit.size() == needed && needed > 0) {
      int lo = lit[0].first, hi = lit[0].first;
      for (const auto& [tl, who] : lit) {
        lo = std::min(lo, tl);
        hi = std::max(hi, tl);
      }
      if (needed == 1 || hi - lo <= sub.window) {
        r.status = StageStatus::kComplete;
        r.t = hi;
        const int site = sub.type == TaskType::kMeetingPoint ? binding.meeting : [&] {
          int best = lit[0].second, best_t = lit[0].first;
          for (const auto& [tl, who] : lit) {
            if (tl > best_t) {
              best_t = tl;
              best = who;
            }
          }
          return best;
        }();
        if (const Entity* e = world.find(site)) r.site = e->position;
        return r;
      }
    }
    if (sub.window > 0) {
      for (const auto& [tl, who] : lit) {
        if (t - tl > sub.window) {
          if (sub.type == TaskType::kMeetingPoint) r.stale_agents.push_back(who);
          else r.stale.push_back(who);
        }
      }
      if (!r.stale.empty() || !r.stale_agents.empty()) r.status = StageStatus::kFailedWindow;
    }
    return r;
  }

  const bool last = stage == tree.depth;
  for (const WorldEvent& e : log) {
    if (e.t <= floor) continue;
    bool hit = false;
    switch (sub.type) {
      case TaskType::kCrafting:
        hit = e.kind == EventKind::kCrafted &&
              (sub.craft == CraftMode::kSpawn ? e.result == sub.outputs.at(0)
                                              : (!e.result && (e.spec == sub.inputs[0] || e.spec == sub.inputs[1])));
        break;
      case TaskType::kInOutMachine:
      case TaskType::kPressurePlate:
        hit = e.kind == EventKind::kMachineSwitched && e.spec == sub.inputs[0] && e.result == sub.outputs.at(0);
        break;
      case TaskType::kDropOffPoint:
        hit = e.kind == EventKind::kDroppedOff && e.spec == sub.inputs[0];
        break;
      case TaskType::kLemonHunt:
      case TaskType::kForcedLemonHunt:
        hit = e.kind == EventKind::kObjectConsumed && e.spec == *sub.lemon;
        if (hit && sub.type == TaskType::kForcedLemonHunt) hit = e.agent == 1 - sub.role_agent;
        break;
      default:
        break;
    }
    if (!hit) continue;
    if (last && !end_condition_holds(tree, world)) continue;
    r.status = StageStatus::kComplete;
    r.t = e.t;
    r.site = e.at;
    return r;
  }
  return r;
}

}  // namespace coex
