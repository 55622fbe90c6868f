#pragma once

// Procedural task trees: sampling, materialization into a world, and the
// per-stage completion predicates.

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "coex/reward.hpp"
#include "coex/rng.hpp"
#include "coex/world.hpp"

namespace coex {

enum class TaskType : std::uint8_t {
  kActivateLandmarks,
  kLemonHunt,
  kCrafting,
  kInOutMachine,
  kDropOffPoint,
  kForcedLandmarks,
  kMeetingPoint,
  kForcedLemonHunt,
  kPressurePlate,  // evaluation-only novel task
};

enum class CraftMode : std::uint8_t { kSpawn, kDespawn };

std::string to_string(TaskType type);
TaskType parse_task_type(std::string_view text);

// A pool entry: the task type plus the crafting mode where it matters.
struct SubtaskKind {
  TaskType type = TaskType::kCrafting;
  CraftMode craft = CraftMode::kSpawn;
  auto operator<=>(const SubtaskKind&) const = default;
};

std::string to_string(SubtaskKind kind);

struct EndCondition {
  enum class Kind : std::uint8_t { kObjectExists, kObjectNotExists };
  Kind kind = Kind::kObjectExists;
  ObjectSpec target;
  bool operator==(const EndCondition&) const = default;
};

inline constexpr int kTwoLandmarkWindow = 300;
inline constexpr int kForcedWindow = 10;

struct Subtask {
  int stage = 1;
  TaskType type = TaskType::kCrafting;
  CraftMode craft = CraftMode::kSpawn;
  // Task-object inputs. For stages > 1 with inputs, inputs[0] is produced by the
  // preceding stage and the rest are pre-spawned.
  std::vector<ObjectSpec> inputs;
  // Produced object (at most one). Stages followed by an input-less stage still
  // produce; the object is a by-product.
  std::vector<ObjectSpec> outputs;
  std::optional<ObjectSpec> lemon;
  int landmark_count = 0;
  int window = 0;  // max step difference between paired activations; 0 = none
  // Forced landmarks: owner agent of landmark 0 (landmark 1 goes to the other agent).
  // Forced lemon hunt: the agent allowed to switch (the other one consumes).
  int role_agent = 0;

  bool operator==(const Subtask&) const = default;
  [[nodiscard]] bool takes_objects() const { return !inputs.empty(); }
};

struct TaskTree {
  int depth = 0;
  std::vector<Subtask> subtasks;
  EndCondition end;
  std::vector<std::pair<ObjectSpec, int>> initial_spawn;
  std::uint64_t seed = 0;
  bool forced = false;
  // Sampled from a restricted type list rather than the standard stage pools.
  bool custom_pool = false;

  [[nodiscard]] const Subtask& stage(int s) const { return subtasks.at(static_cast<std::size_t>(s - 1)); }
  [[nodiscard]] int initial_object_count() const;
  bool operator==(const TaskTree&) const = default;
};

// Canonical single-line text form used in traces and `gen` output.
std::string serialize(const TaskTree& tree);

std::set<SubtaskKind> legal_subtask_pool(int stage, int depth, EndCondition::Kind end,
                                         std::span<const TaskType> preceding, bool forced);

struct SamplerOptions {
  // Restricts the subtask types (non-final and final pools are intersected with this).
  std::vector<TaskType> allowed_types;
  // 0 = coin flip between one and two landmarks.
  int landmark_count = 0;
  bool operator==(const SamplerOptions&) const = default;
};

TaskTree sample_task_tree(Rng& rng, int depth, bool forced, std::span<const ObjectSpec> object_pool,
                          const SamplerOptions& options = {});

// The single-stage pressure-plate task.
TaskTree make_pressure_plate_task(Rng& rng, std::span<const ObjectSpec> object_pool);

// Throws std::logic_error describing the first violated structural invariant.
void validate_tree(const TaskTree& tree);

// Environment entities bound to each stage.
struct StageBinding {
  std::vector<int> landmarks;
  int meeting = -1;
  int machine = -1;
  int dropoff = -1;
  int plate = -1;
  bool operator==(const StageBinding&) const = default;
};

struct MaterializedTask {
  WorldState world;
  InteractionTable table;
  std::vector<StageBinding> bindings;
};

InteractionTable build_interaction_table(const TaskTree& tree);

// Places environment objects on the arena edges and the initial task objects and
// agents at free interior positions. Throws std::runtime_error when placement fails.
MaterializedTask materialize(const TaskTree& tree, Rng& rng, const ArenaConfig& arena,
                             std::span<const int> agent_ids);

enum class StageStatus : std::uint8_t { kIncomplete, kComplete, kFailedWindow };

struct StageResult {
  StageStatus status = StageStatus::kIncomplete;
  int t = -1;                 // completion step
  std::vector<int> stale;     // landmarks whose lights lapse (kFailedWindow)
  std::vector<int> stale_agents;  // meeting point: agents whose activation lapses
  std::optional<Vec2> site;   // where a produced object should appear
};

// Evaluates `stage` over the event log at step t. Only events after the
// completion of stage - 1 count. Throws std::logic_error unless `stage` is the
// progress frontier.
StageResult stage_predicate(const TaskTree& tree, const StageBinding& binding, int stage,
                            const StageProgress& progress, std::span<const WorldEvent> log,
                            const WorldState& world, int t);

// Where a producer stage's output appears when the stage itself does not create it.
Vec2 producer_site(const WorldState& world, Vec2 anchor);

}  // namespace coex
