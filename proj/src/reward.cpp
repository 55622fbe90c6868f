#include "coex/reward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace coex {

StageProgress StageProgress::fresh(int depth) {
  StageProgress p;
  p.depth = depth;
  p.completed.assign(static_cast<std::size_t>(depth), false);
  p.completed_at.assign(static_cast<std::size_t>(depth), -1);
  return p;
}

int StageProgress::frontier() const {
  for (int s = 0; s < depth; ++s) {
    if (!completed[static_cast<std::size_t>(s)]) return s + 1;
  }
  return depth + 1;
}

int StageProgress::highest_completed() const { return frontier() - 1; }

int StageProgress::completed_time(int stage) const {
  if (stage <= 0) return -1;
  return completed_at.at(static_cast<std::size_t>(stage - 1));
}

void RewardConfig::validate() const {
  if (!(r0 > 0.0)) throw std::invalid_argument("reward r0 must be > 0");
  if (!(beta > 1.0)) throw std::invalid_argument("reward beta must be > 1");
  if (!(b0 >= 0.0)) throw std::invalid_argument("reward b0 must be >= 0");
}

double on_events(StageProgress& progress, std::span<const StageCompletion> completions,
                 const RewardConfig& config) {
  double bonus = 0.0;
  for (const StageCompletion& c : completions) {
    if (c.stage != progress.frontier()) {
      throw std::logic_error("stage " + std::to_string(c.stage) + " completed out of order (frontier " +
                             std::to_string(progress.frontier()) + ")");
    }
    if (c.stage > 1 && c.t <= progress.completed_time(c.stage - 1)) {
      throw std::logic_error("completion times must be strictly increasing");
    }
    progress.completed[static_cast<std::size_t>(c.stage - 1)] = true;
    progress.completed_at[static_cast<std::size_t>(c.stage - 1)] = c.t;
    if (config.bonus_enabled) bonus += config.b0 * std::pow(config.beta, c.stage - 1);
  }
  return bonus;
}

double timestep_reward(const StageProgress& progress, const RewardConfig& config) {
  double sum = 0.0;
  double weight = 1.0;
  for (int s = 0; s < progress.depth; ++s) {
    if (progress.completed[static_cast<std::size_t>(s)]) sum += weight;
    weight *= config.beta;
  }
  return config.r0 * sum;
}

EpisodeOutcome episode_outcome(const StageProgress& progress) {
  return {progress.completed, progress.highest_completed()};
}

}  // namespace coex
