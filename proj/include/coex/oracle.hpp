#pragma once

// Scripted policies: waypoint navigation, a privileged planner that reads the
// task tree, a non-privileged brute-force explorer and a uniform random policy.

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "coex/episode.hpp"

namespace coex {

// Room-grid cell containing p.
std::pair<int, int> room_of(const ArenaConfig& arena, Vec2 p);

// Waypoints from `from` to `to` through doorway approach points; the last entry is `to`.
std::vector<Vec2> route(const ArenaConfig& arena, Vec2 from, Vec2 to);

// Steers toward the next waypoint. Within `arrive` of the target the motion is zero.
// The grasp flag is left false; callers set it to keep holding.
ActionCommand navigate(const WorldState& world, int agent_id, Vec2 target, double arrive);
ActionCommand navigate(const WorldState& world, int agent_id, Vec2 target);

using JointAction = std::array<ActionCommand, kNumAgents>;

struct OracleResult {
  bool success = false;
  int steps = 0;
  std::string cause;  // empty on success; "timeout" or "unreachable: ..."
  std::array<StageProgress, kNumAgents> progress;
};

// Per-agent scratch state used by the scripted controllers.
struct AgentMemory {
  int displace_steps = 0;
  Vec2 displace_to;
  int blocked_steps = 0;
  int target = -1;  // entity the agent committed to, kept while it stays valid
};

class ScriptedOracle {
 public:
  // n_agents = 1 drives agent 0 only (agent 1 stays idle).
  explicit ScriptedOracle(int n_agents) : n_agents_(n_agents) {}
  JointAction act(const Episode& ep);
  [[nodiscard]] const std::string& stall_reason() const { return stall_; }

 private:
  int n_agents_;
  std::array<AgentMemory, kNumAgents> mem_{};
  std::string stall_;
};

// Runs the privileged planner to the end of the episode (reset must have been called).
OracleResult solve_tree(Episode& ep, int n_agents);

class BruteForceExplorer {
 public:
  explicit BruteForceExplorer(int n_agents) : n_agents_(n_agents) {}
  JointAction act(const Episode& ep);

  // Deliberate pairing attempts (unordered spec-key pairs) in the order they were made.
  [[nodiscard]] const std::vector<std::pair<int, int>>& pairing_log(int slot) const {
    return tried_[static_cast<std::size_t>(slot)].pair_log;
  }

 private:
  enum class GoalKind : std::uint8_t { kActivateObject, kLandmark, kPair, kDeliver };
  struct Goal {
    GoalKind kind = GoalKind::kActivateObject;
    int x = -1;       // spec key of the object to handle
    int y = -1;       // partner spec key (pair)
    int entity = -1;  // landmark or machine entity
    bool operator==(const Goal&) const = default;
  };
  struct Tried {
    std::set<int> activated;
    std::set<std::pair<int, int>> pairs;
    std::set<std::pair<int, int>> deliveries;
    std::set<int> landmarks;
    std::set<int> seen_specs;
    std::vector<std::pair<int, int>> pair_log;
    std::size_t log_cursor = 0;
  };
  void observe_events(const WorldSlot& slot, Tried& tried);

  int n_agents_;
  std::array<Tried, kNumAgents> tried_{};
  std::array<AgentMemory, kNumAgents> mem_{};
  std::array<std::optional<Goal>, kNumAgents> goal_of_{};
};

OracleResult brute_force_explore(Episode& ep, int n_agents, BruteForceExplorer* explorer = nullptr);

class RandomPolicy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(Rng(seed).split("random-policy")) {}
  JointAction act(const Episode& ep);

 private:
  Rng rng_;
};

OracleResult run_random(Episode& ep, std::uint64_t seed);

}  // namespace coex
