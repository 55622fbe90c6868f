#pragma once

// Continuous 2D multi-room world: entities, kinematic motion with wall
// clamping, grasping, activation and the per-episode interaction table.

#include <compare>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coex/geometry.hpp"

namespace coex {

// The first three shapes/colors are the training set; the last three are held
// out for the novel-object evaluation.
enum class Shape : std::uint8_t { kCircle, kSquare, kTriangle, kPentagon, kStar, kCross };
enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow, kCyan, kMagenta };
enum class EnvKind : std::uint8_t {
  kLandmark,
  kInOutMachine,
  kDropOffPoint,
  kMeetingLandmark,
  kPressurePlate,
};

inline constexpr int kNumShapes = 6;
inline constexpr int kNumColors = 6;
inline constexpr int kNumEnvKinds = 5;

struct ObjectSpec {
  enum class Kind : std::uint8_t { kTask, kEnvironment };

  Kind kind = Kind::kTask;
  Shape shape = Shape::kCircle;
  Color color = Color::kRed;
  EnvKind env_kind = EnvKind::kLandmark;

  static constexpr ObjectSpec task(Shape s, Color c) { return {Kind::kTask, s, c, EnvKind::kLandmark}; }
  static constexpr ObjectSpec environment(EnvKind k) {
    return {Kind::kEnvironment, Shape::kCircle, Color::kRed, k};
  }

  [[nodiscard]] constexpr bool is_task() const { return kind == Kind::kTask; }
  [[nodiscard]] constexpr bool is_novel() const {
    return is_task() && (static_cast<int>(shape) >= 3 || static_cast<int>(color) >= 3);
  }
  // Dense integer key; also defines the ordering.
  [[nodiscard]] constexpr int key() const {
    return is_task() ? static_cast<int>(shape) * kNumColors + static_cast<int>(color)
                     : 100 + static_cast<int>(env_kind);
  }
  constexpr bool operator==(const ObjectSpec& o) const { return key() == o.key(); }
  constexpr auto operator<=>(const ObjectSpec& o) const { return key() <=> o.key(); }
};

std::string to_string(ObjectSpec spec);
std::string to_string(EnvKind kind);
// Inverse of to_string; throws std::invalid_argument.
ObjectSpec parse_object_spec(std::string_view text);

// 3 shapes x 3 colors.
std::vector<ObjectSpec> training_pool();
std::vector<ObjectSpec> novel_pool();

struct ArenaConfig {
  double room_size = 160.0;
  int rooms_x = 2;
  int rooms_y = 2;
  double wall_thickness = 4.0;
  double doorway = 60.0;
  double agent_radius = 8.0;
  double object_radius = 6.0;
  double env_radius = 12.0;
  double reach = 20.0;
  double v_max = 6.0;
  double turn_max = std::numbers::pi / 8.0;
  double view_radius = 80.0;

  [[nodiscard]] double width() const { return room_size * rooms_x; }
  [[nodiscard]] double height() const { return room_size * rooms_y; }
  [[nodiscard]] double hold_offset() const { return agent_radius + object_radius; }
  bool operator==(const ArenaConfig&) const = default;

  static ArenaConfig single_room() {
    ArenaConfig a;
    a.rooms_x = 1;
    a.rooms_y = 1;
    return a;
  }
};

// Wall rectangles (outer boundary plus inner walls with one doorway per shared wall).
std::vector<Rect> build_walls(const ArenaConfig& arena);

struct Entity {
  int id = 0;
  ObjectSpec spec;
  Vec2 position;
  std::optional<int> held_by;
  // Last activation timestep of a landmark; cleared when a timing window lapses.
  std::optional<int> activated_at;
  // Forced-cooperation landmarks respond to one agent only.
  std::optional<int> owner;

  bool operator==(const Entity&) const = default;
};

struct AgentBody {
  int id = 0;
  Vec2 position;
  double heading = 0.0;
  std::optional<int> held;

  bool operator==(const AgentBody&) const = default;
};

struct ActionCommand {
  double turn = 0.0;
  double forward = 0.0;
  bool grasp = false;
  bool activate = false;

  [[nodiscard]] ActionCommand clamped() const;
  bool operator==(const ActionCommand&) const = default;
};

struct PairOutcome {
  enum class Kind : std::uint8_t { kNone, kSpawn, kDespawnBoth };
  Kind kind = Kind::kNone;
  ObjectSpec spawn;
  bool operator==(const PairOutcome&) const = default;
};

struct ActivateOutcome {
  enum class Kind : std::uint8_t { kNone, kBecome, kConsume };
  Kind kind = Kind::kNone;
  ObjectSpec become;
  // Forced lemon hunt: only this agent can trigger the outcome.
  std::optional<int> only_agent;
  bool operator==(const ActivateOutcome&) const = default;
};

struct MachineRule {
  enum class Kind : std::uint8_t { kNone, kSwitchTo, kConsume };
  Kind kind = Kind::kNone;
  ObjectSpec to;
  bool operator==(const MachineRule&) const = default;
};

class InteractionTable {
 public:
  void set_pair(ObjectSpec a, ObjectSpec b, PairOutcome outcome);
  void set_activate(ObjectSpec spec, ActivateOutcome outcome);
  void set_machine(EnvKind machine, ObjectSpec spec, MachineRule rule);

  [[nodiscard]] PairOutcome pair(ObjectSpec a, ObjectSpec b) const;
  [[nodiscard]] ActivateOutcome activate(ObjectSpec spec) const;
  [[nodiscard]] MachineRule machine(EnvKind machine, ObjectSpec spec) const;

  // Machines only operate while a pressure plate is occupied.
  bool machines_need_plate = false;

  [[nodiscard]] std::size_t size() const { return pairs_.size() + activate_.size() + machine_.size(); }
  bool operator==(const InteractionTable&) const = default;

 private:
  std::map<std::pair<int, int>, PairOutcome> pairs_;
  std::map<int, ActivateOutcome> activate_;
  std::map<std::pair<int, int>, MachineRule> machine_;
};

enum class EventKind : std::uint8_t {
  kContact,            // held object touched another task object (pairing attempt)
  kLandmarkActivated,  // entity = landmark
  kObjectBecame,       // entity switched spec -> result
  kObjectConsumed,     // entity removed by activation
  kCrafted,            // entity + other combined; result spawned (or none)
  kMachineSwitched,    // entity switched by machine `other`
  kDroppedOff,         // entity consumed by drop-off `other`
  kSpawned,            // stage completion produced entity
  kWindowReset,        // landmark lights cleared after a lapsed window
};

std::string_view to_string(EventKind kind);

struct WorldEvent {
  EventKind kind = EventKind::kContact;
  int t = 0;
  int agent = -1;
  int entity = -1;
  int other = -1;
  ObjectSpec spec;
  std::optional<ObjectSpec> result;
  // Location of a removed or created object (not serialized).
  Vec2 at;

  bool operator==(const WorldEvent&) const = default;
};

std::string to_string(const WorldEvent& e);

struct WorldState {
  ArenaConfig arena;
  std::vector<Rect> walls;
  int t = 0;
  std::vector<AgentBody> agents;
  std::vector<Entity> entities;
  int next_id = 0;
  // Held-object contacts present after the last physics step (entity id pairs, low first).
  std::set<std::pair<int, int>> contacts;

  static WorldState empty(const ArenaConfig& arena);

  [[nodiscard]] const Entity* find(int id) const;
  Entity* find(int id);
  [[nodiscard]] const AgentBody* agent(int agent_id) const;
  AgentBody* agent(int agent_id);

  int add_entity(ObjectSpec spec, Vec2 position);
  void remove_entity(int id);
  [[nodiscard]] int count(ObjectSpec spec) const;
  [[nodiscard]] bool is_free(Vec2 p, double radius) const;
  [[nodiscard]] bool occluded(Vec2 from, Vec2 to) const;
  [[nodiscard]] double entity_radius(const Entity& e) const;
  [[nodiscard]] bool plate_active() const;

  bool operator==(const WorldState&) const = default;
};

// Kinematic step: turn, move with wall sliding, carry held objects, push free objects.
// Returns contact events between held objects and other task objects that started this step.
std::vector<WorldEvent> advance_physics(WorldState& state, std::span<const ActionCommand> commands);

void resolve_grasp(WorldState& state, int agent_id, bool grasp);

// Applies crafting outcomes for the given contact events.
std::vector<WorldEvent> resolve_contacts(WorldState& state, std::span<const WorldEvent> contacts,
                                         const InteractionTable& table);

std::vector<WorldEvent> resolve_activate(WorldState& state, int agent_id, const InteractionTable& table);

// One full world tick: physics, grasps, contacts, activations; increments t.
std::vector<WorldEvent> step_world(WorldState& state, std::span<const ActionCommand> commands,
                                   const InteractionTable& table);

struct VisibleEntity {
  bool is_agent = false;
  int id = 0;        // entity id or agent id
  Vec2 offset;       // world-frame position relative to the observer
  double distance = 0.0;
};

// Entities and other agents within view_radius (closed) and not behind walls,
// sorted nearest-first (ties by agent-then-id).
std::vector<VisibleEntity> visible_entities(const WorldState& state, int agent_id, double view_radius);

// Where a held object sits: in front of the agent, pulled back so it never crosses a wall.
Vec2 hold_position(const WorldState& state, const AgentBody& agent);

// Deterministic 64-bit digest of the full state (used in trace records).
std::uint64_t state_digest(const WorldState& state);

}  // namespace coex
