#pragma once

// Stage progress bookkeeping and the joint, stage-weighted reward stream.

#include <span>
#include <vector>

namespace coex {

struct StageProgress {
  int depth = 0;
  std::vector<bool> completed;
  std::vector<int> completed_at;

  static StageProgress fresh(int depth);

  // First incomplete stage (1-based), or depth + 1 when everything is done.
  [[nodiscard]] int frontier() const;
  [[nodiscard]] int highest_completed() const;
  [[nodiscard]] bool all_complete() const { return frontier() > depth; }
  // Completion step of `stage`, or -1 (stage 0 counts as completed at -1).
  [[nodiscard]] int completed_time(int stage) const;

  bool operator==(const StageProgress&) const = default;
};

struct RewardConfig {
  double r0 = 0.02;
  double beta = 3.0;
  double b0 = 1.0;
  bool bonus_enabled = true;

  // Throws std::invalid_argument when r0 <= 0, beta <= 1 or b0 < 0.
  void validate() const;
  bool operator==(const RewardConfig&) const = default;
};

struct StageCompletion {
  int stage = 0;
  int t = 0;
};

// Marks newly completed stages and returns the one-time bonus each agent receives.
// Completions must arrive in stage order; throws std::logic_error otherwise.
double on_events(StageProgress& progress, std::span<const StageCompletion> completions,
                 const RewardConfig& config);

// r0 * sum over completed stages s of beta^(s-1).
double timestep_reward(const StageProgress& progress, const RewardConfig& config);

struct EpisodeOutcome {
  std::vector<bool> stage_success;
  int highest_stage = 0;
  bool operator==(const EpisodeOutcome&) const = default;
};

EpisodeOutcome episode_outcome(const StageProgress& progress);

}  // namespace coex
