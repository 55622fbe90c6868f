#include "coex/episode.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace coex {
namespace {

using nlohmann::json;

constexpr std::string_view kTraceMagic = "coex-trace";
constexpr int kTraceVersion = 1;

std::string format_double(const char* fmt, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::kMulti ? "multi" : "single"; }

void EpisodeConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (step_limit < 1) throw std::invalid_argument("step_limit must be >= 1");
  if (!(p_multi >= 0.0 && p_multi <= 1.0)) throw std::invalid_argument("p_multi must lie in [0, 1]");
  if (forced && depth < 2 && sampler.allowed_types.empty() && variant == TaskVariant::kStandard) {
    throw std::invalid_argument("forced-cooperation trees need depth >= 2");
  }
  if (sampler.landmark_count < 0 || sampler.landmark_count > 2) {
    throw std::invalid_argument("landmark_count must be 0, 1 or 2");
  }
  reward.validate();
}

EpisodeConfig EpisodeConfig::open_ended() {
  EpisodeConfig c;
  c.depth = 6;
  c.step_limit = 4000;
  c.reward.bonus_enabled = false;
  return c;
}

EpisodeConfig EpisodeConfig::smoke() {
  EpisodeConfig c;
  c.depth = 1;
  c.step_limit = 200;
  c.arena = ArenaConfig::single_room();
  c.sampler.allowed_types = {TaskType::kActivateLandmarks};
  c.sampler.landmark_count = 1;
  return c;
}

std::span<const ObjectSpec> object_pool(PoolId id) {
  static const std::vector<ObjectSpec> training = training_pool();
  static const std::vector<ObjectSpec> novel = novel_pool();
  return id == PoolId::kTraining ? std::span<const ObjectSpec>(training) : std::span<const ObjectSpec>(novel);
}

Mode sample_mode(Rng& rng, double p_multi) { return rng.bernoulli(p_multi) ? Mode::kMulti : Mode::kSingle; }

// ---- observations ----

std::vector<double> symbolic_obs(const WorldState& world, int agent_id) {
  std::vector<double> v(kSymbolicWidth, 0.0);
  const AgentBody* self = world.agent(agent_id);
  if (self == nullptr) throw std::invalid_argument("no agent " + std::to_string(agent_id) + " in world");
  const Vec2 fwd = heading_vector(self->heading);
  const Vec2 left{-fwd.y, fwd.x};
  const double inv_r = 1.0 / world.arena.view_radius;

  const auto visible = visible_entities(world, agent_id, world.arena.view_radius);
  const std::size_t n = std::min<std::size_t>(visible.size(), kObsSlots);
  for (std::size_t i = 0; i < n; ++i) {
    const VisibleEntity& ve = visible[i];
    double* f = v.data() + i * kSlotFeatures;
    f[slot::kRelX] = ve.offset.dot(fwd) * inv_r;
    f[slot::kRelY] = ve.offset.dot(left) * inv_r;
    if (ve.is_agent) {
      f[slot::kIsAgent] = 1.0;
      continue;
    }
    const Entity& e = *world.find(ve.id);
    if (e.spec.is_task()) {
      f[slot::kShape + std::min(static_cast<int>(e.spec.shape), 3)] = 1.0;
      f[slot::kColor + std::min(static_cast<int>(e.spec.color), 3)] = 1.0;
      if (e.held_by) f[*e.held_by == agent_id ? slot::kHeldBySelf : slot::kHeldByOther] = 1.0;
    } else {
      f[slot::kEnvKind + static_cast<int>(e.spec.env_kind)] = 1.0;
      if (e.spec.env_kind == EnvKind::kPressurePlate) {
        f[slot::kActive] = world.plate_active() ? 1.0 : 0.0;
      } else if (e.activated_at) {
        f[slot::kActive] = 1.0;
      }
    }
  }
  double* s = v.data() + kObsSlots * kSlotFeatures;
  s[0] = std::sin(self->heading);
  s[1] = std::cos(self->heading);
  s[2] = self->held ? 1.0 : 0.0;
  return v;
}

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kFloor{0.2, 0.2, 0.2};
constexpr Rgb kWall{0.55, 0.55, 0.55};
constexpr Rgb kAgentColor{0.95, 0.95, 0.95};

Rgb color_of(Color c) {
  switch (c) {
    case Color::kRed: return {1.0, 0.0, 0.0};
    case Color::kGreen: return {0.0, 1.0, 0.0};
    case Color::kBlue: return {0.0, 0.0, 1.0};
    case Color::kYellow: return {1.0, 1.0, 0.0};
    case Color::kCyan: return {0.0, 1.0, 1.0};
    case Color::kMagenta: return {1.0, 0.0, 1.0};
  }
  return kFloor;
}

Rgb env_color(EnvKind k, bool active) {
  switch (k) {
    case EnvKind::kLandmark: return active ? Rgb{1.0, 1.0, 0.8} : Rgb{0.7, 0.7, 0.5};
    case EnvKind::kInOutMachine: return {0.55, 0.35, 0.1};
    case EnvKind::kDropOffPoint: return {0.3, 0.3, 0.6};
    case EnvKind::kMeetingLandmark: return active ? Rgb{1.0, 0.8, 1.0} : Rgb{0.7, 0.5, 0.7};
    case EnvKind::kPressurePlate: return active ? Rgb{0.6, 1.0, 0.6} : Rgb{0.35, 0.55, 0.35};
  }
  return kFloor;
}

bool regular_polygon(double dx, double dy, double r, int sides) {
  const double rho = std::hypot(dx, dy);
  if (rho == 0.0) return true;
  const double sector = 2.0 * std::numbers::pi / sides;
  double theta = std::atan2(dx, dy);  // 0 = up, so one vertex points up
  theta = std::fmod(theta + 2.0 * std::numbers::pi, sector);
  const double edge = r * std::cos(sector / 2.0) / std::cos(theta - sector / 2.0);
  return rho <= edge;
}

bool inside_shape(Shape s, double dx, double dy, double r) {
  switch (s) {
    case Shape::kCircle: return dx * dx + dy * dy <= r * r;
    case Shape::kSquare: return std::max(std::abs(dx), std::abs(dy)) <= 0.8 * r;
    case Shape::kTriangle: return regular_polygon(dx, dy, r, 3);
    case Shape::kPentagon: return regular_polygon(dx, dy, r, 5);
    case Shape::kStar: {
      const double rho = std::hypot(dx, dy);
      const double theta = std::atan2(dx, dy);
      return rho <= r * (0.45 + 0.55 * std::pow(std::abs(std::cos(2.5 * theta)), 3.0));
    }
    case Shape::kCross:
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
  }
  return false;
}

}  // namespace

std::vector<double> render_pixel_obs(const WorldState& world, int agent_id) {
  const AgentBody* self = world.agent(agent_id);
  if (self == nullptr) throw std::invalid_argument("no agent " + std::to_string(agent_id) + " in world");
  const double R = world.arena.view_radius;
  const Vec2 fwd = heading_vector(self->heading);
  const Vec2 right{fwd.y, -fwd.x};

  // Only things that can touch the view disc matter.
  std::vector<const Entity*> near;
  for (const Entity& e : world.entities) {
    if (distance(e.position, self->position) <= R + world.entity_radius(e)) near.push_back(&e);
  }
  std::vector<const Rect*> walls;
  for (const Rect& w : world.walls) {
    if (distance(w.closest_point(self->position), self->position) <= R) walls.push_back(&w);
  }
  std::vector<const Entity*> task_objects, env_objects;
  for (const Entity* e : near) (e->spec.is_task() ? task_objects : env_objects).push_back(e);
  const bool plate_on = world.plate_active();

  std::vector<double> img(kPixelWidth, 0.0);
  for (int row = 0; row < kPixelSide; ++row) {
    const double v = R * (1.0 - (2.0 * row + 1.0) / kPixelSide);
    for (int col = 0; col < kPixelSide; ++col) {
      const double u = R * ((2.0 * col + 1.0) / kPixelSide - 1.0);
      if (u * u + v * v > R * R) continue;
      const Vec2 p = self->position + fwd * v + right * u;

      const Rect* inside_wall = nullptr;
      for (const Rect* w : walls) {
        if (w->contains(p)) inside_wall = w;
      }
      bool blocked = false;
      for (const Rect* w : walls) {
        if (w == inside_wall) continue;
        if (segment_rect_entry(self->position, p, *w)) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;

      Rgb c = kFloor;
      if (inside_wall != nullptr) {
        c = kWall;
      } else {
        for (const Entity* e : env_objects) {
          const Vec2 d = p - e->position;
          if (d.dot(d) > world.arena.env_radius * world.arena.env_radius) continue;
          const bool active = e->spec.env_kind == EnvKind::kPressurePlate ? plate_on : e->activated_at.has_value();
          c = env_color(e->spec.env_kind, active);
        }
        for (const Entity* e : task_objects) {
          const Vec2 d = p - e->position;
          if (inside_shape(e->spec.shape, d.x, d.y, world.arena.object_radius)) c = color_of(e->spec.color);
        }
        for (const AgentBody& a : world.agents) {
          const Vec2 d = p - a.position;
          if (d.dot(d) <= world.arena.agent_radius * world.arena.agent_radius) c = kAgentColor;
        }
      }
      double* px = img.data() + (static_cast<std::size_t>(row) * kPixelSide + col) * 3;
      px[0] = c.r;
      px[1] = c.g;
      px[2] = c.b;
    }
  }
  return img;
}

// ---- episode ----

Episode::Episode(EpisodeConfig config) : config_(std::move(config)) { config_.validate(); }

std::array<Observation, kNumAgents> Episode::reset() {
  const Rng root(config_.seed);
  Rng mode_rng = root.split("mode");
  mode_ = sample_mode(mode_rng, config_.p_multi);
  slots_.clear();
  trace_.clear();
  t_ = 0;
  done_ = false;
  prev_action_ = {};
  prev_reward_ = {};

  const auto pool = object_pool(config_.pool);
  const int n_slots = mode_ == Mode::kMulti ? 1 : kNumAgents;
  for (int w = 0; w < n_slots; ++w) {
    WorldSlot slot;
    Rng tree_rng = root.split("tree", static_cast<std::uint64_t>(w));
    if (config_.variant == TaskVariant::kPressurePlate) {
      slot.tree = make_pressure_plate_task(tree_rng, pool);
    } else {
      slot.tree = sample_task_tree(tree_rng, config_.depth, config_.forced, pool, config_.sampler);
    }
    if (mode_ == Mode::kMulti) {
      slot.agents = {0, 1};
    } else {
      slot.agents = {w};
    }
    Rng place_rng = root.split("place", static_cast<std::uint64_t>(w));
    slot.task = materialize(slot.tree, place_rng, config_.arena, slot.agents);
    slot.progress = StageProgress::fresh(slot.tree.depth);
    slots_.push_back(std::move(slot));
  }

  if (config_.record_trace) trace_.push_back(header_line());
  std::array<Observation, kNumAgents> obs;
  for (int a = 0; a < kNumAgents; ++a) obs[static_cast<std::size_t>(a)] = observe(a);
  return obs;
}

Observation Episode::observe(int agent) const {
  Observation o;
  const WorldState& world = slot_for(agent).task.world;
  o.view = config_.obs == ObsMode::kSymbolic ? symbolic_obs(world, agent) : render_pixel_obs(world, agent);
  const ActionCommand& pa = prev_action_[static_cast<std::size_t>(agent)];
  o.prev_action = {pa.turn, pa.forward, pa.grasp ? 1.0 : 0.0, pa.activate ? 1.0 : 0.0};
  o.prev_reward = prev_reward_[static_cast<std::size_t>(agent)];
  return o;
}

void Episode::evaluate_stages(WorldSlot& slot, double& bonus, std::vector<WorldEvent>& step_events) {
  WorldState& world = slot.task.world;
  const TaskTree& tree = slot.tree;
  while (!slot.progress.all_complete()) {
    const int s = slot.progress.frontier();
    const StageBinding& binding = slot.task.bindings[static_cast<std::size_t>(s - 1)];
    const StageResult r = stage_predicate(tree, binding, s, slot.progress, slot.log, world, t_);
    if (r.status == StageStatus::kFailedWindow) {
      for (int id : r.stale) {
        if (Entity* e = world.find(id)) e->activated_at.reset();
        WorldEvent ev{EventKind::kWindowReset, t_, -1, id, -1, ObjectSpec::environment(EnvKind::kLandmark), std::nullopt, {}};
        slot.log.push_back(ev);
        step_events.push_back(ev);
      }
      for (int agent : r.stale_agents) {
        WorldEvent ev{EventKind::kWindowReset, t_, agent, binding.meeting, -1,
                      ObjectSpec::environment(EnvKind::kMeetingLandmark), std::nullopt, {}};
        slot.log.push_back(ev);
        step_events.push_back(ev);
      }
      if (!r.stale_agents.empty()) {
        if (Entity* e = world.find(binding.meeting)) e->activated_at.reset();
      }
      break;
    }
    if (r.status != StageStatus::kComplete) break;

    const StageCompletion done{s, r.t};
    bonus += on_events(slot.progress, std::span(&done, 1), config_.reward);
    const Subtask& sub = tree.stage(s);
    const bool produces_itself = sub.type == TaskType::kCrafting || sub.type == TaskType::kInOutMachine ||
                                 sub.type == TaskType::kPressurePlate;
    if (!produces_itself && !sub.outputs.empty()) {
      Vec2 anchor = r.site.value_or(Vec2{world.arena.width() / 2.0, world.arena.height() / 2.0});
      // Landmark sites sit on the edge; lemon sites are free floor already.
      const bool on_edge = sub.type == TaskType::kActivateLandmarks || sub.type == TaskType::kForcedLandmarks ||
                           sub.type == TaskType::kMeetingPoint;
      const Vec2 at = on_edge || !world.is_free(anchor, world.arena.object_radius) ? producer_site(world, anchor)
                                                                                   : anchor;
      const int id = world.add_entity(sub.outputs[0], at);
      WorldEvent ev{EventKind::kSpawned, t_, -1, id, -1, sub.outputs[0], std::nullopt, at};
      slot.log.push_back(ev);
      step_events.push_back(ev);
    }
  }
}

StepResult Episode::step(std::span<const ActionCommand, kNumAgents> actions) {
  if (done_) throw std::logic_error("step called on a finished episode");
  StepResult res;
  res.events.resize(slots_.size());
  std::array<std::uint64_t, kNumAgents> digests{};

  for (std::size_t w = 0; w < slots_.size(); ++w) {
    WorldSlot& slot = slots_[w];
    std::vector<ActionCommand> cmds;
    for (int a : slot.agents) cmds.push_back(actions[static_cast<std::size_t>(a)]);
    const double base = timestep_reward(slot.progress, config_.reward);

    std::vector<WorldEvent> events = step_world(slot.task.world, cmds, slot.task.table);
    slot.log.insert(slot.log.end(), events.begin(), events.end());
    double bonus = 0.0;
    evaluate_stages(slot, bonus, events);
    for (int a : slot.agents) res.reward[static_cast<std::size_t>(a)] = base + bonus;
    digests[w] = state_digest(slot.task.world);
    res.events[w] = std::move(events);
  }
  for (int a = 0; a < kNumAgents; ++a) {
    prev_action_[static_cast<std::size_t>(a)] = actions[static_cast<std::size_t>(a)].clamped();
    prev_reward_[static_cast<std::size_t>(a)] = res.reward[static_cast<std::size_t>(a)];
  }
  const int step_index = t_;
  ++t_;
  const bool all_done = std::all_of(slots_.begin(), slots_.end(),
                                    [](const WorldSlot& s) { return s.progress.all_complete(); });
  done_ = t_ >= config_.step_limit || (config_.terminate_on_success && all_done);

  if (config_.record_trace) {
    std::string line = std::to_string(step_index);
    for (const ActionCommand& c : actions) {
      line += ' ' + format_double("%.17g", c.turn) + ' ' + format_double("%.17g", c.forward);
      line += c.grasp ? " 1" : " 0";
      line += c.activate ? " 1" : " 0";
    }
    for (double r : res.reward) line += ' ' + format_double("%.9g", r);
    line += ' ';
    for (std::size_t w = 0; w < slots_.size(); ++w) {
      if (w > 0) line += ',';
      line += hex64(digests[w]);
    }
    std::string ev;
    for (std::size_t w = 0; w < res.events.size(); ++w) {
      for (const WorldEvent& e : res.events[w]) {
        if (!ev.empty()) ev += ',';
        ev += 'w' + std::to_string(w) + '/' + to_string(e) + '@' + std::to_string(e.t);
      }
    }
    line += ' ' + (ev.empty() ? std::string("-") : ev);
    trace_.push_back(std::move(line));
    if (done_) trace_.push_back(footer_line());
  }

  for (int a = 0; a < kNumAgents; ++a) {
    res.obs[static_cast<std::size_t>(a)] = observe(a);
    res.progress[static_cast<std::size_t>(a)] = progress(a);
  }
  res.done = done_;
  return res;
}

std::string Episode::header_line() const {
  json h;
  h["config"] = json::parse(config_to_json(config_));
  h["mode"] = to_string(mode_);
  json trees = json::array();
  for (const WorldSlot& s : slots_) trees.push_back(serialize(s.tree));
  h["trees"] = trees;
  return std::string(kTraceMagic) + ' ' + std::to_string(kTraceVersion) + ' ' + h.dump();
}

std::string Episode::footer_line() const {
  json f;
  f["steps"] = t_;
  json success = json::array(), highest = json::array(), completed_at = json::array();
  for (const WorldSlot& s : slots_) {
    const EpisodeOutcome o = episode_outcome(s.progress);
    success.push_back(o.stage_success);
    highest.push_back(o.highest_stage);
    completed_at.push_back(s.progress.completed_at);
  }
  f["success"] = success;
  f["highest"] = highest;
  f["completed_at"] = completed_at;
  return "end " + f.dump();
}

void Episode::write_trace(std::ostream& out) const {
  for (const std::string& line : trace_) out << line << '\n';
}

// ---- config serialization ----

std::string config_to_json(const EpisodeConfig& c) {
  json j;
  j["depth"] = c.depth;
  j["step_limit"] = c.step_limit;
  j["p_multi"] = c.p_multi;
  j["forced"] = c.forced;
  j["pool"] = c.pool == PoolId::kTraining ? "training" : "novel";
  j["variant"] = c.variant == TaskVariant::kStandard ? "standard" : "pressure_plate";
  j["reward"] = {{"r0", c.reward.r0}, {"beta", c.reward.beta}, {"b0", c.reward.b0},
                 {"bonus", c.reward.bonus_enabled}};
  j["obs"] = c.obs == ObsMode::kSymbolic ? "symbolic" : "pixel";
  j["seed"] = c.seed;
  j["terminate_on_success"] = c.terminate_on_success;
  j["record_trace"] = c.record_trace;
  const ArenaConfig& a = c.arena;
  j["arena"] = {{"room_size", a.room_size},     {"rooms_x", a.rooms_x},         {"rooms_y", a.rooms_y},
                {"wall", a.wall_thickness},     {"doorway", a.doorway},         {"agent_r", a.agent_radius},
                {"object_r", a.object_radius},  {"env_r", a.env_radius},        {"reach", a.reach},
                {"v_max", a.v_max},             {"turn_max", a.turn_max},       {"view", a.view_radius}};
  json types = json::array();
  for (TaskType t : c.sampler.allowed_types) types.push_back(to_string(t));
  j["sampler"] = {{"types", types}, {"landmarks", c.sampler.landmark_count}};
  return j.dump();
}

EpisodeConfig config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EpisodeConfig c;
    c.depth = j.at("depth").get<int>();
    c.step_limit = j.at("step_limit").get<int>();
    c.p_multi = j.at("p_multi").get<double>();
    c.forced = j.at("forced").get<bool>();
    const std::string pool = j.at("pool").get<std::string>();
    if (pool != "training" && pool != "novel") throw std::invalid_argument("unknown pool '" + pool + "'");
    c.pool = pool == "training" ? PoolId::kTraining : PoolId::kNovel;
    const std::string variant = j.at("variant").get<std::string>();
    if (variant != "standard" && variant != "pressure_plate") {
      throw std::invalid_argument("unknown variant '" + variant + "'");
    }
    c.variant = variant == "standard" ? TaskVariant::kStandard : TaskVariant::kPressurePlate;
    const json& r = j.at("reward");
    c.reward = {r.at("r0").get<double>(), r.at("beta").get<double>(), r.at("b0").get<double>(),
                r.at("bonus").get<bool>()};
    const std::string obs = j.at("obs").get<std::string>();
    if (obs != "symbolic" && obs != "pixel") throw std::invalid_argument("unknown obs mode '" + obs + "'");
    c.obs = obs == "symbolic" ? ObsMode::kSymbolic : ObsMode::kPixel;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.terminate_on_success = j.at("terminate_on_success").get<bool>();
    c.record_trace = j.at("record_trace").get<bool>();
    const json& a = j.at("arena");
    c.arena.room_size = a.at("room_size").get<double>();
    c.arena.rooms_x = a.at("rooms_x").get<int>();
    c.arena.rooms_y = a.at("rooms_y").get<int>();
    c.arena.wall_thickness = a.at("wall").get<double>();
    c.arena.doorway = a.at("doorway").get<double>();
    c.arena.agent_radius = a.at("agent_r").get<double>();
    c.arena.object_radius = a.at("object_r").get<double>();
    c.arena.env_radius = a.at("env_r").get<double>();
    c.arena.reach = a.at("reach").get<double>();
    c.arena.v_max = a.at("v_max").get<double>();
    c.arena.turn_max = a.at("turn_max").get<double>();
    c.arena.view_radius = a.at("view").get<double>();
    const json& s = j.at("sampler");
    for (const auto& t : s.at("types")) c.sampler.allowed_types.push_back(parse_task_type(t.get<std::string>()));
    c.sampler.landmark_count = s.at("landmarks").get<int>();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad episode config: ") + e.what());
  }
}

// ---- replay ----

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const std::size_t j = line.find(' ', i);
    out.push_back(line.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
    if (j == std::string_view::npos) break;
    i = j + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_int(std::string_view s, int& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_flag(std::string_view s, bool& out) {
  if (s == "0" || s == "1") {
    out = s == "1";
    return true;
  }
  return false;
}

}  // namespace

ReplayReport replay_trace(std::istream& in) {
  ReplayReport rep;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  auto malformed = [&](int line_no, const std::string& why) {
    rep.ok = false;
    rep.malformed_line = line_no;
    rep.message = "line " + std::to_string(line_no) + ": " + why;
    return rep;
  };
  if (lines.empty()) return malformed(1, "empty trace");

  const std::string prefix = std::string(kTraceMagic) + ' ' + std::to_string(kTraceVersion) + ' ';
  if (!lines[0].starts_with(prefix)) return malformed(1, "missing trace header");
  EpisodeConfig config;
  try {
    const json h = json::parse(lines[0].substr(prefix.size()));
    config = config_from_json(h.at("config").dump());
    config.validate();
  } catch (const std::exception& e) {
    return malformed(1, e.what());
  }
  config.record_trace = true;
  Episode ep(config);
  ep.reset();
  if (ep.trace_lines().front() != lines[0]) {
    rep.divergent_step = 0;
    rep.message = "header differs from the regenerated episode (mode or task trees)";
    return rep;
  }

  std::size_t i = 1;
  for (; i < lines.size() && !ep.done(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    const auto tok = split_spaces(lines[i]);
    if (tok.size() != 13) return malformed(line_no, "expected 13 fields, got " + std::to_string(tok.size()));
    int t = 0;
    if (!parse_int(tok[0], t)) return malformed(line_no, "bad step index");
    if (t != ep.t()) return malformed(line_no, "step index " + std::to_string(t) + " out of sequence");
    std::array<ActionCommand, kNumAgents> actions;
    for (int a = 0; a < kNumAgents; ++a) {
      const std::size_t base = 1 + 4 * static_cast<std::size_t>(a);
      ActionCommand& c = actions[static_cast<std::size_t>(a)];
      if (!parse_double(tok[base], c.turn) || !parse_double(tok[base + 1], c.forward) ||
          !std::isfinite(c.turn) || !std::isfinite(c.forward) || !parse_flag(tok[base + 2], c.grasp) ||
          !parse_flag(tok[base + 3], c.activate)) {
        return malformed(line_no, "bad action fields");
      }
    }
    ep.step(actions);
    if (ep.trace_lines()[i] != lines[i]) {
      rep.divergent_step = t;
      rep.steps = t;
      rep.message = "divergence at step " + std::to_string(t);
      return rep;
    }
  }
  if (!ep.done()) return malformed(static_cast<int>(lines.size()), "trace ends before the episode does");
  if (i >= lines.size()) return malformed(static_cast<int>(lines.size()), "missing footer");
  if (lines[i] != ep.trace_lines()[i]) {
    rep.divergent_step = ep.t();
    rep.message = "footer differs";
    return rep;
  }
  if (i + 1 != lines.size()) return malformed(static_cast<int>(i) + 2, "trailing records after footer");
  rep.ok = true;
  rep.steps = ep.t();
  rep.message = "ok";
  return rep;
}

}  // namespace coex
