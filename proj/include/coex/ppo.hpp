#pragma once

// Clipped-surrogate policy optimization for one agent's recurrent network:
// the squashed-Gaussian / Bernoulli action distribution, advantage
// estimation, the loss and its analytic gradient, Adam, and a central
// difference gradient check.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coex/nn.hpp"
#include "coex/rng.hpp"
#include "coex/world.hpp"

namespace coex {

struct TrainConfig {
  int episodes_per_batch = 480;
  long total_episodes = 750000;
  double lr_start = 0.00025;
  bool lr_linear_decay = true;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatches = 8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;

  // Throws std::invalid_argument.
  void validate() const;
  // Linear decay to 0 over total_episodes (constant when decay is off).
  [[nodiscard]] double learning_rate(long episodes_done) const;
  [[nodiscard]] std::uint64_t hash() const;
  bool operator==(const TrainConfig&) const = default;

  // Small batches and a larger step size for the single-core smoke setting.
  static TrainConfig desk();
};

// Raw sample: pre-squash Gaussian draws and the two binary events.
struct ActionSample {
  std::array<double, kActionDims> u{};
  bool grasp = false;
  bool activate = false;
  double log_prob = 0.0;
};

ActionCommand squash(const ActionSample& a);
double action_log_prob(const double* head, const double* log_std, const ActionSample& a);
ActionSample sample_action(const double* head, const double* log_std, Rng& rng);
// Deterministic choice: squashed locations, events where the log-odds are positive.
ActionSample mode_action(const double* head, const double* log_std);
double action_entropy(const double* head, const double* log_std);

// One agent's experience over one episode.
struct AgentEpisode {
  int length = 0;
  std::vector<double> obs;   // length x obs_width
  std::vector<double> prev;  // length x kPrevWidth
  std::vector<ActionSample> actions;
  std::vector<double> value;
  std::vector<double> reward;
};

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};
// terminal[t] marks the last step of an episode (the next value is taken as 0).
// Throws std::invalid_argument on length mismatch.
Gae compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const bool> terminal,
                double gamma, double lambda);

// Padded minibatch with per-row targets; rows beyond an episode's length are masked.
struct Minibatch {
  SeqInput input;
  std::vector<ActionSample> actions;
  std::vector<double> old_log_prob;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> mask;
  int valid_rows = 0;
};

// Episodes as given (no shuffling); advantages must already be processed.
Minibatch make_minibatch(const NetShape& shape, std::span<const AgentEpisode* const> episodes,
                         std::span<const std::vector<double>* const> advantages,
                         std::span<const std::vector<double>* const> returns);

struct LossParts {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Loss over a minibatch; writes the gradient into `grad` when non-null (overwriting it).
LossParts minibatch_loss(const PolicyNet& net, const Minibatch& mb, const TrainConfig& config,
                         std::vector<double>* grad);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state, double lr,
               const TrainConfig& config);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int minibatch_updates = 0;
  bool operator==(const UpdateStats&) const = default;
};

// One agent's update from its own episodes. Throws std::invalid_argument on an empty batch
// and std::runtime_error on a non-finite loss.
UpdateStats ppo_update(PolicyNet& net, AdamState& opt, std::span<const AgentEpisode> batch, const TrainConfig& config,
                       double lr, Rng rng);

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped_kinks = 0;  // perturbations that flipped a rectifier
  std::string worst_tensor;
  std::size_t worst_index = 0;
};

// Compares the analytic gradient with central differences (step h) over at least
// `samples` coordinates spread over every tensor. Coordinates whose perturbation
// changes any rectifier's on/off state are not differentiable at that scale and
// are replaced. A non-empty `only` restricts the check to those tensors.
// Throws std::runtime_error on a non-finite loss.
GradCheckReport finite_difference_check(const PolicyNet& net, const Minibatch& mb, const TrainConfig& config,
                                        int samples, Rng rng, double h = 1e-5,
                                        std::span<const std::string> only = {});

}  // namespace coex
