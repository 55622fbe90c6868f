#pragma once

// Evaluation runs, trace statistics and the key-value run configuration used
// by the command-line tool.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coex/episode.hpp"
#include "coex/nn.hpp"
#include "coex/ppo.hpp"

namespace coex {

enum class PolicyKind : std::uint8_t { kCheckpoint, kScripted, kBruteForce, kRandom };
enum class EvalSpec : std::uint8_t { kTraining, kNovel, kForced, kPressurePlate, kOpenEnded };

PolicyKind parse_policy_kind(const std::string& s);  // throws std::invalid_argument
EvalSpec parse_eval_spec(const std::string& s);
std::string to_string(EvalSpec s);

// The episode configuration of an evaluation spec, starting from `base`.
EpisodeConfig eval_config(EvalSpec spec, const EpisodeConfig& base);

// Outcome of one episode as recorded in a trace footer.
struct EpisodeSummary {
  std::uint64_t seed = 0;
  Mode mode = Mode::kMulti;
  int steps = 0;
  std::vector<std::vector<bool>> success;     // per world slot, per stage
  std::vector<std::vector<int>> completed_at;  // per world slot, per stage (-1 when not completed)
};

EpisodeSummary summarize_episode(const Episode& ep);
// Reads the header and footer of a trace. Throws std::invalid_argument when either is missing or malformed.
EpisodeSummary read_trace_summary(std::istream& in);

struct RateCI {
  int hits = 0;
  int trials = 0;
  double rate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};
// Wilson score interval; an empty sample gives rate 0 and the interval [0, 1].
RateCI wilson(int hits, int trials, double z = 1.96);

struct Stats {
  int episodes = 0;
  std::vector<RateCI> stage_success;               // over task worlds
  std::array<RateCI, kNumAgents> single_stage3{};  // stage min(3, d) in single-agent episodes
  std::optional<double> skill_difference;          // absent without single-agent episodes
  int histogram_bin = 50;
  std::vector<std::vector<int>> completion_histogram;  // per stage, counts per bin of completion step

  [[nodiscard]] std::string to_records() const;  // line-delimited JSON
  [[nodiscard]] std::string human_summary() const;
};

// Throws std::invalid_argument on an empty set.
Stats compute_stats(std::span<const EpisodeSummary> episodes, int histogram_bin = 50);

struct EvalRequest {
  PolicyKind policy = PolicyKind::kScripted;
  std::string checkpoint;  // required for kCheckpoint
  EpisodeConfig config;
  int episodes = 1000;
  std::uint64_t seed = 0;  // episode i uses seed + i
  int n_agents = 2;        // scripted and brute-force drivers
  bool greedy = false;     // checkpoint policies
  std::string trace_dir;   // one trace file per episode when non-empty
};

struct EvalReport {
  std::vector<EpisodeSummary> episodes;
  Stats stats;
};

// Throws std::invalid_argument for a missing checkpoint and std::runtime_error on I/O failure.
EvalReport run_evaluation(const EvalRequest& request);

// Flat key-value run configuration: "section.key" -> value, from an INI file and overrides.
class RunConfig {
 public:
  // Throws std::runtime_error on parse failure.
  static RunConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  // "section.key=value"; throws std::invalid_argument when malformed.
  void apply_override(const std::string& assignment);
  [[nodiscard]] std::optional<std::string> get(const std::string& key) const;
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

  // Unknown keys and unparsable values throw std::invalid_argument.
  [[nodiscard]] EpisodeConfig episode(EpisodeConfig base = {}) const;
  [[nodiscard]] TrainConfig train(TrainConfig base = TrainConfig::desk()) const;
  void check_known_keys() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace coex
