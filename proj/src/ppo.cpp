#include "coex/ppo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "coex/kernels.hpp"

namespace coex {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
// Gradient magnitudes below this are compared absolutely.
constexpr double kRelFloor = 1e-7;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh2(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

double bernoulli_entropy(double logit) { return softplus(logit) - logit * sigmoid(logit); }

}  // namespace

void TrainConfig::validate() const {
  if (episodes_per_batch < 1) throw std::invalid_argument("episodes_per_batch must be >= 1");
  if (total_episodes < 1) throw std::invalid_argument("total_episodes must be >= 1");
  if (!(lr_start > 0.0)) throw std::invalid_argument("lr_start must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must be in [0, 1]");
  if (!(clip > 0.0)) throw std::invalid_argument("clip must be > 0");
  if (epochs < 1 || minibatches < 1) throw std::invalid_argument("epochs and minibatches must be >= 1");
  if (entropy_coef < 0.0 || value_coef < 0.0) throw std::invalid_argument("loss coefficients must be >= 0");
}

double TrainConfig::learning_rate(long episodes_done) const {
  if (!lr_linear_decay) return lr_start;
  const double frac = 1.0 - static_cast<double>(episodes_done) / static_cast<double>(total_episodes);
  return lr_start * std::clamp(frac, 0.0, 1.0);
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 0x5eedULL;
  auto mix_in = [&h](std::uint64_t x) { h = mix64(h ^ (x + 0x9e3779b97f4a7c15ULL)); };
  auto mix_d = [&](double d) { mix_in(std::bit_cast<std::uint64_t>(d)); };
  mix_in(static_cast<std::uint64_t>(episodes_per_batch));
  mix_in(static_cast<std::uint64_t>(total_episodes));
  mix_d(lr_start);
  mix_in(lr_linear_decay ? 1 : 0);
  mix_d(gamma);
  mix_d(lambda);
  mix_d(clip);
  mix_in(static_cast<std::uint64_t>(epochs));
  mix_in(static_cast<std::uint64_t>(minibatches));
  mix_d(entropy_coef);
  mix_d(value_coef);
  mix_d(max_grad_norm);
  mix_in(normalize_advantages ? 1 : 0);
  mix_d(adam_beta1);
  mix_d(adam_beta2);
  mix_d(adam_eps);
  return h;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.episodes_per_batch = 32;
  c.total_episodes = 30000;
  c.lr_start = 0.001;
  c.minibatches = 4;
  return c;
}

ActionCommand squash(const ActionSample& a) {
  ActionCommand c;
  c.turn = std::tanh(a.u[0]);
  c.forward = 0.5 * (std::tanh(a.u[1]) + 1.0);
  c.grasp = a.grasp;
  c.activate = a.activate;
  return c;
}

double action_log_prob(const double* head, const double* log_std, const ActionSample& a) {
  double lp = 0.0;
  for (int k = 0; k < kActionDims; ++k) {
    const double s = std::exp(log_std[k]);
    const double z = (a.u[static_cast<std::size_t>(k)] - head[k]) / s;
    lp += -0.5 * z * z - log_std[k] - 0.5 * kLog2Pi;
    // Change of variables through the squashing maps.
    lp -= log_one_minus_tanh2(a.u[static_cast<std::size_t>(k)]);
  }
  lp += std::numbers::ln2;  // forward = (tanh + 1) / 2
  lp += a.grasp ? -softplus(-head[2]) : -softplus(head[2]);
  lp += a.activate ? -softplus(-head[3]) : -softplus(head[3]);
  return lp;
}

ActionSample sample_action(const double* head, const double* log_std, Rng& rng) {
  ActionSample a;
  for (int k = 0; k < kActionDims; ++k) {
    a.u[static_cast<std::size_t>(k)] = head[k] + std::exp(log_std[k]) * rng.normal();
  }
  a.grasp = rng.uniform() < sigmoid(head[2]);
  a.activate = rng.uniform() < sigmoid(head[3]);
  a.log_prob = action_log_prob(head, log_std, a);
  return a;
}

ActionSample mode_action(const double* head, const double* log_std) {
  ActionSample a;
  a.u = {head[0], head[1]};
  a.grasp = head[2] > 0.0;
  a.activate = head[3] > 0.0;
  a.log_prob = action_log_prob(head, log_std, a);
  return a;
}

// Entropy of the pre-squash Gaussian plus the two Bernoulli entropies.
double action_entropy(const double* head, const double* log_std) {
  double h = 0.0;
  for (int k = 0; k < kActionDims; ++k) h += 0.5 * (kLog2Pi + 1.0) + log_std[k];
  return h + bernoulli_entropy(head[2]) + bernoulli_entropy(head[3]);
}

Gae compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const bool> terminal,
                double gamma, double lambda) {
  if (rewards.size() != values.size() || rewards.size() != terminal.size()) {
    throw std::invalid_argument("compute_gae: length mismatch");
  }
  const std::size_t n = rewards.size();
  Gae out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  double next_value = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    if (terminal[i]) {
      next_adv = 0.0;
      next_value = 0.0;
    }
    const double delta = rewards[i] + gamma * next_value - values[i];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

Minibatch make_minibatch(const NetShape& shape, std::span<const AgentEpisode* const> episodes,
                         std::span<const std::vector<double>* const> advantages,
                         std::span<const std::vector<double>* const> returns) {
  if (episodes.empty() || episodes.size() != advantages.size() || episodes.size() != returns.size()) {
    throw std::invalid_argument("make_minibatch: inconsistent inputs");
  }
  const auto W = static_cast<std::size_t>(shape.obs_width());
  int T = 0;
  for (const AgentEpisode* e : episodes) T = std::max(T, e->length);
  const auto B = episodes.size();
  const std::size_t rows = static_cast<std::size_t>(T) * B;
  Minibatch mb;
  mb.input.T = T;
  mb.input.B = static_cast<int>(B);
  mb.input.obs.assign(rows * W, 0.0);
  mb.input.prev.assign(rows * kPrevWidth, 0.0);
  mb.actions.assign(rows, {});
  mb.old_log_prob.assign(rows, 0.0);
  mb.advantages.assign(rows, 0.0);
  mb.returns.assign(rows, 0.0);
  mb.mask.assign(rows, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const AgentEpisode& e = *episodes[b];
    if (e.obs.size() != static_cast<std::size_t>(e.length) * W) throw std::invalid_argument("episode obs width mismatch");
    for (int t = 0; t < e.length; ++t) {
      const std::size_t r = static_cast<std::size_t>(t) * B + b;
      const auto ts = static_cast<std::size_t>(t);
      std::copy_n(e.obs.begin() + static_cast<std::ptrdiff_t>(ts * W), W,
                  mb.input.obs.begin() + static_cast<std::ptrdiff_t>(r * W));
      std::copy_n(e.prev.begin() + static_cast<std::ptrdiff_t>(ts * kPrevWidth), kPrevWidth,
                  mb.input.prev.begin() + static_cast<std::ptrdiff_t>(r * kPrevWidth));
      mb.actions[r] = e.actions[ts];
      mb.old_log_prob[r] = e.actions[ts].log_prob;
      mb.advantages[r] = (*advantages[b])[ts];
      mb.returns[r] = (*returns[b])[ts];
      mb.mask[r] = 1.0;
      ++mb.valid_rows;
    }
  }
  return mb;
}

LossParts minibatch_loss(const PolicyNet& net, const Minibatch& mb, const TrainConfig& config,
                         std::vector<double>* grad) {
  const NetShape& shape = net.shape();
  RecurrentState state = RecurrentState::zeros(mb.input.B, shape.hidden);
  SeqOutput out;
  PolicyNet::Cache cache;
  net.forward(mb.input, state, out, grad != nullptr ? &cache : nullptr);

  const std::size_t rows = mb.mask.size();
  const double* log_std = net.params().data() + net.log_std_offset();
  const double inv_n = 1.0 / std::max(1, mb.valid_rows);
  SeqOutput d_out;
  d_out.head.assign(rows * kHeadOut, 0.0);
  d_out.value.assign(rows, 0.0);
  std::array<double, kActionDims> d_log_std{};

  LossParts parts;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mb.mask[r] == 0.0) continue;
    const double* head = out.head.data() + r * kHeadOut;
    const ActionSample& a = mb.actions[r];
    const double lp = action_log_prob(head, log_std, a);
    const double log_ratio = lp - mb.old_log_prob[r];
    const double ratio = std::exp(log_ratio);
    const double adv = mb.advantages[r];
    const double clipped = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    const bool unclipped_active = ratio * adv <= clipped * adv;
    parts.policy += -std::min(ratio * adv, clipped * adv) * inv_n;
    parts.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
    if (std::abs(ratio - 1.0) > config.clip) parts.clip_fraction += inv_n;
    const double ent = action_entropy(head, log_std);
    parts.entropy += ent * inv_n;
    const double verr = out.value[r] - mb.returns[r];
    parts.value += 0.5 * verr * verr * inv_n;

    if (grad == nullptr) continue;
    // d(policy)/d(log prob)
    const double g_lp = unclipped_active ? -adv * ratio * inv_n : 0.0;
    double* dh = d_out.head.data() + r * kHeadOut;
    for (int k = 0; k < kActionDims; ++k) {
      const double s2 = std::exp(2.0 * log_std[k]);
      const double diff = a.u[static_cast<std::size_t>(k)] - head[k];
      dh[k] += g_lp * diff / s2;
      d_log_std[static_cast<std::size_t>(k)] += g_lp * (diff * diff / s2 - 1.0);
      d_log_std[static_cast<std::size_t>(k)] -= config.entropy_coef * inv_n;
    }
    for (int k = 2; k < 4; ++k) {
      const double y = (k == 2 ? a.grasp : a.activate) ? 1.0 : 0.0;
      const double sg = sigmoid(head[k]);
      dh[k] += g_lp * (y - sg);
      // d(entropy)/d(logit) = -logit * s * (1 - s)
      dh[k] -= config.entropy_coef * inv_n * (-head[k] * sg * (1.0 - sg));
    }
    d_out.value[r] = config.value_coef * verr * inv_n;
  }
  parts.total = parts.policy + config.value_coef * parts.value - config.entropy_coef * parts.entropy;
  if (!std::isfinite(parts.total)) throw std::runtime_error("non-finite loss");

  if (grad != nullptr) {
    grad->assign(net.params().size(), 0.0);
    net.backward(mb.input, cache, d_out, *grad);
    for (int k = 0; k < kActionDims; ++k) (*grad)[net.log_std_offset() + static_cast<std::size_t>(k)] += d_log_std[static_cast<std::size_t>(k)];
  }
  return parts;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& s, double lr,
               const TrainConfig& config) {
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
    s.step = 0;
  }
  ++s.step;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * grad[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config.adam_eps);
  }
}

UpdateStats ppo_update(PolicyNet& net, AdamState& opt, std::span<const AgentEpisode> batch, const TrainConfig& config,
                       double lr, Rng rng) {
  if (batch.empty()) throw std::invalid_argument("ppo_update: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> adv(n), ret(n);
  for (std::size_t i = 0; i < n; ++i) {
    const AgentEpisode& e = batch[i];
    const auto len = static_cast<std::size_t>(e.length);
    const auto terminal = std::make_unique<bool[]>(len);
    if (len > 0) terminal[len - 1] = true;
    Gae g = compute_gae(e.reward, e.value, std::span<const bool>(terminal.get(), len), config.gamma, config.lambda);
    adv[i] = std::move(g.advantages);
    ret[i] = std::move(g.returns);
  }
  if (config.normalize_advantages) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (const auto& a : adv) {
      for (double x : a) {
        sum += x;
        sq += x * x;
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(std::max<std::size_t>(count, 1));
    const double var = std::max(0.0, sq / static_cast<double>(std::max<std::size_t>(count, 1)) - mean * mean);
    const double inv = 1.0 / (std::sqrt(var) + 1e-8);
    for (auto& a : adv) {
      for (double& x : a) x = (x - mean) * inv;
    }
  }

  UpdateStats stats;
  std::vector<std::size_t> order(n);
  std::vector<double> grad;
  const std::size_t groups = std::min<std::size_t>(static_cast<std::size_t>(config.minibatches), n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t lo = g * n / groups, hi = (g + 1) * n / groups;
      std::vector<const AgentEpisode*> eps;
      std::vector<const std::vector<double>*> a_ptr, r_ptr;
      for (std::size_t k = lo; k < hi; ++k) {
        eps.push_back(&batch[order[k]]);
        a_ptr.push_back(&adv[order[k]]);
        r_ptr.push_back(&ret[order[k]]);
      }
      const Minibatch mb = make_minibatch(net.shape(), eps, a_ptr, r_ptr);
      if (mb.valid_rows == 0) continue;
      const LossParts parts = minibatch_loss(net, mb, config, &grad);
      const double norm = std::sqrt(kernels::dot(grad.data(), grad.data(), grad.size()));
      if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient");
      if (config.max_grad_norm > 0.0 && norm > config.max_grad_norm) {
        const double scale = config.max_grad_norm / norm;
        for (double& x : grad) x *= scale;
      }
      adam_step(net.params(), grad, opt, lr, config);
      stats.policy_loss += parts.policy;
      stats.value_loss += parts.value;
      stats.entropy += parts.entropy;
      stats.approx_kl += parts.approx_kl;
      stats.clip_fraction += parts.clip_fraction;
      stats.grad_norm += norm;
      ++stats.minibatch_updates;
    }
  }
  if (stats.minibatch_updates > 0) {
    const double k = 1.0 / stats.minibatch_updates;
    stats.policy_loss *= k;
    stats.value_loss *= k;
    stats.entropy *= k;
    stats.approx_kl *= k;
    stats.clip_fraction *= k;
    stats.grad_norm *= k;
  }
  return stats;
}

namespace {

// Sign pattern of every rectifier in the network for this minibatch.
std::vector<bool> relu_pattern(const PolicyNet& net, const Minibatch& mb) {
  RecurrentState state = RecurrentState::zeros(mb.input.B, net.shape().hidden);
  SeqOutput out;
  PolicyNet::Cache cache;
  net.forward(mb.input, state, out, &cache);
  std::vector<bool> pattern;
  auto add = [&pattern](const std::vector<double>& v) {
    for (double x : v) pattern.push_back(x > 0.0);
  };
  add(cache.enc);
  for (const auto& layer : cache.conv_out) add(layer);
  add(cache.p1);
  add(cache.p2);
  add(cache.v1);
  add(cache.v2);
  return pattern;
}

}  // namespace

GradCheckReport finite_difference_check(const PolicyNet& net, const Minibatch& mb, const TrainConfig& config,
                                        int samples, Rng rng, double h, std::span<const std::string> only) {
  std::vector<double> analytic;
  minibatch_loss(net, mb, config, &analytic);
  std::vector<const Tensor*> pool;
  for (const Tensor& t : net.tensors()) {
    if (only.empty() || std::find(only.begin(), only.end(), t.name) != only.end()) pool.push_back(&t);
  }
  if (pool.empty()) throw std::invalid_argument("finite_difference_check: no tensors selected");
  const int per_tensor = (samples + static_cast<int>(pool.size()) - 1) / static_cast<int>(pool.size());

  PolicyNet probe = net;
  GradCheckReport report;
  for (const Tensor* t : pool) {
    const int count = std::min<int>(per_tensor, static_cast<int>(t->size()));
    const bool exhaustive = count == static_cast<int>(t->size());
    int done = 0;
    // A perturbation that flips a rectifier measures a one-sided kink, not the gradient;
    // such coordinates are skipped (and replaced when sampling).
    for (int attempt = 0; done < count && attempt < 20 * count; ++attempt) {
      if (exhaustive && attempt >= count) break;
      const std::size_t idx = t->offset + (exhaustive ? static_cast<std::size_t>(attempt) : rng.below(t->size()));
      const double saved = probe.params()[idx];
      probe.params()[idx] = saved + h;
      const double up = minibatch_loss(probe, mb, config, nullptr).total;
      const std::vector<bool> pattern_up = relu_pattern(probe, mb);
      probe.params()[idx] = saved - h;
      const double down = minibatch_loss(probe, mb, config, nullptr).total;
      const std::vector<bool> pattern_down = relu_pattern(probe, mb);
      probe.params()[idx] = saved;
      if (pattern_up != pattern_down) {
        ++report.skipped_kinks;
        continue;
      }
      ++done;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[idx];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelFloor});
      ++report.checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = t->name;
        report.worst_index = idx - t->offset;
      }
    }
  }
  return report;
}

}  // namespace coex
