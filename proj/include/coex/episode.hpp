#pragma once

// Episode lifecycle for the two-agent environment: mode sampling, reset, step,
// observation rendering and line-delimited trace recording/replay.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coex/reward.hpp"
#include "coex/rng.hpp"
#include "coex/task_tree.hpp"
#include "coex/world.hpp"

namespace coex {

inline constexpr int kNumAgents = 2;

enum class Mode : std::uint8_t { kMulti, kSingle };
enum class ObsMode : std::uint8_t { kSymbolic, kPixel };
enum class PoolId : std::uint8_t { kTraining, kNovel };
enum class TaskVariant : std::uint8_t { kStandard, kPressurePlate };

std::string to_string(Mode m);

struct EpisodeConfig {
  int depth = 3;
  int step_limit = 1000;
  double p_multi = 0.5;
  bool forced = false;
  PoolId pool = PoolId::kTraining;
  TaskVariant variant = TaskVariant::kStandard;
  RewardConfig reward;
  ObsMode obs = ObsMode::kSymbolic;
  std::uint64_t seed = 0;
  bool terminate_on_success = false;
  bool record_trace = false;
  ArenaConfig arena;
  SamplerOptions sampler;

  // Throws std::invalid_argument.
  void validate() const;
  bool operator==(const EpisodeConfig&) const = default;

  static EpisodeConfig open_ended();
  // 1 room, depth-1 activate_landmarks with one landmark, 200-step limit.
  static EpisodeConfig smoke();
};

std::span<const ObjectSpec> object_pool(PoolId id);

Mode sample_mode(Rng& rng, double p_multi);

// Symbolic observation layout.
inline constexpr int kObsSlots = 16;
inline constexpr int kSlotFeatures = 19;
inline constexpr int kSymbolicWidth = kObsSlots * kSlotFeatures + 3;
inline constexpr int kPixelSide = 64;
inline constexpr int kPixelWidth = kPixelSide * kPixelSide * 3;

// Offsets inside one slot.
namespace slot {
inline constexpr int kShape = 0;    // 4: three training shapes + novel
inline constexpr int kColor = 4;    // 4: three training colors + novel
inline constexpr int kEnvKind = 8;  // 5
inline constexpr int kRelX = 13;
inline constexpr int kRelY = 14;
inline constexpr int kHeldBySelf = 15;
inline constexpr int kHeldByOther = 16;
inline constexpr int kActive = 17;
inline constexpr int kIsAgent = 18;
}  // namespace slot

struct Observation {
  std::vector<double> view;
  std::array<double, 4> prev_action{};
  double prev_reward = 0.0;
};

std::vector<double> symbolic_obs(const WorldState& world, int agent_id);
std::vector<double> render_pixel_obs(const WorldState& world, int agent_id);

struct StepResult {
  std::array<Observation, kNumAgents> obs;
  std::array<double, kNumAgents> reward{};
  bool done = false;
  std::array<StageProgress, kNumAgents> progress;
  // Events of this step, per world slot.
  std::vector<std::vector<WorldEvent>> events;
};

// One environment (shared world in multi mode, or one of the two isolated worlds).
struct WorldSlot {
  TaskTree tree;
  MaterializedTask task;
  StageProgress progress;
  std::vector<WorldEvent> log;
  std::vector<int> agents;
};

class Episode {
 public:
  explicit Episode(EpisodeConfig config);

  std::array<Observation, kNumAgents> reset();
  // Throws std::logic_error when called after done.
  StepResult step(std::span<const ActionCommand, kNumAgents> actions);

  [[nodiscard]] const EpisodeConfig& config() const { return config_; }
  [[nodiscard]] Mode mode() const { return mode_; }
  [[nodiscard]] int t() const { return t_; }
  [[nodiscard]] bool done() const { return done_; }

  [[nodiscard]] int slot_count() const { return static_cast<int>(slots_.size()); }
  [[nodiscard]] int slot_of(int agent) const { return mode_ == Mode::kMulti ? 0 : agent; }
  [[nodiscard]] const WorldSlot& slot(int index) const { return slots_.at(static_cast<std::size_t>(index)); }
  [[nodiscard]] const WorldSlot& slot_for(int agent) const { return slot(slot_of(agent)); }
  [[nodiscard]] const StageProgress& progress(int agent) const { return slot_for(agent).progress; }
  [[nodiscard]] Observation observe(int agent) const;

  [[nodiscard]] const std::vector<std::string>& trace_lines() const { return trace_; }
  void write_trace(std::ostream& out) const;

 private:
  void evaluate_stages(WorldSlot& slot, double& bonus, std::vector<WorldEvent>& step_events);
  std::string header_line() const;
  std::string footer_line() const;

  EpisodeConfig config_;
  Mode mode_ = Mode::kMulti;
  std::vector<WorldSlot> slots_;
  int t_ = 0;
  bool done_ = true;
  std::array<ActionCommand, kNumAgents> prev_action_{};
  std::array<double, kNumAgents> prev_reward_{};
  std::vector<std::string> trace_;
};

std::string config_to_json(const EpisodeConfig& config);
// Throws std::invalid_argument on malformed input.
EpisodeConfig config_from_json(const std::string& text);

struct ReplayReport {
  bool ok = false;
  int steps = 0;
  int divergent_step = -1;  // first step whose recomputed record differs
  int malformed_line = -1;  // 1-based line number of an unparsable record
  std::string message;
};

ReplayReport replay_trace(std::istream& in);

}  // namespace coex
