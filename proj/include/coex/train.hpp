#pragma once

// Decentralized training loop: batched episode collection with two
// independent networks, per-agent updates from each agent's own experience,
// single-agent evaluation, metrics records and checkpoints.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coex/episode.hpp"
#include "coex/nn.hpp"
#include "coex/ppo.hpp"

namespace coex {

struct AgentPair {
  std::array<PolicyNet, kNumAgents> nets;
  std::array<AdamState, kNumAgents> opt{};

  // Each network gets its own initialization stream.
  static AgentPair fresh(const NetShape& shape, std::uint64_t seed);
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  Mode mode = Mode::kMulti;
  int depth = 0;
  std::array<StageProgress, kNumAgents> progress;  // per agent (shared in multi mode)
};

struct CollectedBatch {
  std::array<std::vector<AgentEpisode>, kNumAgents> experience;
  std::vector<EpisodeRecord> episodes;
};

struct CollectOptions {
  bool greedy = false;
  bool keep_experience = true;
};

// Runs `count` episodes in lockstep. Episode i uses seed derived from (seed, first_index + i).
CollectedBatch collect_batch(const std::array<const PolicyNet*, kNumAgents>& nets, const EpisodeConfig& env, int count,
                             std::uint64_t seed, long first_index, CollectOptions options = {});

// Updates each agent from its own experience stream only. An agent whose stream is
// empty is left untouched. Throws std::runtime_error on a non-finite loss.
std::array<UpdateStats, kNumAgents> update_agents(AgentPair& agents, const CollectedBatch& batch,
                                                  const TrainConfig& config, double lr, const Rng& rng);

struct Summary {
  int episodes = 0;
  std::vector<double> stage_success;  // per stage, over task worlds (one per multi episode, two per single)
  std::array<double, kNumAgents> single_success{};  // full-tree success in single-agent episodes (NaN when none)
  double skill_difference = 0.0;                     // |single success of agent 0 - agent 1| at stage min(3, d)
  double multi_success = 0.0;                        // NaN when no multi episodes
  int single_episodes = 0;
  int multi_episodes = 0;
};

Summary summarize(const std::vector<EpisodeRecord>& records);

struct BatchMetrics {
  int batch = 0;
  long episodes = 0;
  double lr = 0.0;
  Summary train;
  std::array<UpdateStats, kNumAgents> update;
  std::optional<Summary> eval;
  double seconds = 0.0;

  [[nodiscard]] std::string to_json() const;
};

struct TrainSetup {
  EpisodeConfig env = EpisodeConfig::smoke();
  TrainConfig train = TrainConfig::desk();
  NetShape shape;
  std::uint64_t seed = 0;
  int eval_every = 0;  // batches between single-agent evaluations; 0 disables
  int eval_episodes = 100;
  // Stop once an evaluation's mean single-agent success exceeds this; 0 runs to total_episodes.
  double stop_at_single_success = 0.0;
  std::string metrics_path;     // line-delimited records, appended per batch
  std::string checkpoint_path;  // written at the end and on a non-finite loss
};

struct TrainResult {
  std::vector<BatchMetrics> history;
  long episodes = 0;
  bool stopped_early = false;
};

// Throws std::runtime_error on a non-finite loss after writing the checkpoint.
TrainResult train(const TrainSetup& setup, AgentPair& agents,
                  const std::function<void(const BatchMetrics&)>& on_batch = {});

// Single-agent evaluation of both networks (p_multi forced to 0).
Summary evaluate_single(const AgentPair& agents, const EpisodeConfig& env, int episodes, std::uint64_t seed,
                        bool greedy = false);

// Drives both agents of an episode from their networks, one step at a time.
class LearnedPolicy {
 public:
  LearnedPolicy(const std::array<PolicyNet, kNumAgents>& nets, std::uint64_t seed, bool greedy);
  // Call after Episode::reset.
  void reset();
  std::array<ActionCommand, kNumAgents> act(const Episode& ep);

 private:
  const std::array<PolicyNet, kNumAgents>* nets_;
  std::array<RecurrentState, kNumAgents> state_;
  Rng rng_;
  bool greedy_;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  long episodes = 0;
  std::array<PolicyNet, kNumAgents> nets;
};

// Versioned binary format. Throws std::runtime_error on I/O or format errors.
void save_checkpoint(const std::string& path, const AgentPair& agents, std::uint64_t config_hash, long episodes);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace coex
