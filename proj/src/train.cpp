#include "coex/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace coex {
namespace {

constexpr char kMagic[8] = {'C', 'O', 'E', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t episode_seed(std::uint64_t seed, long index) {
  return Rng(seed).split("episode", static_cast<std::uint64_t>(index)).next_u64();
}

void fill_prev(const Observation& o, double* prev) {
  for (std::size_t i = 0; i < 4; ++i) prev[i] = o.prev_action[i];
  prev[4] = o.prev_reward;
}

double json_number(double x) { return std::isfinite(x) ? x : -1.0; }

nlohmann::json summary_json(const Summary& s) {
  nlohmann::json j;
  j["episodes"] = s.episodes;
  j["stage_success"] = s.stage_success;
  j["single_success"] = {std::isnan(s.single_success[0]) ? nlohmann::json(nullptr) : nlohmann::json(s.single_success[0]),
                         std::isnan(s.single_success[1]) ? nlohmann::json(nullptr) : nlohmann::json(s.single_success[1])};
  j["skill_difference"] = std::isnan(s.skill_difference) ? nlohmann::json(nullptr) : nlohmann::json(s.skill_difference);
  j["multi_success"] = std::isnan(s.multi_success) ? nlohmann::json(nullptr) : nlohmann::json(s.multi_success);
  return j;
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

AgentPair AgentPair::fresh(const NetShape& shape, std::uint64_t seed) {
  const Rng root(seed);
  return AgentPair{{PolicyNet(shape, root.split("agent", 0).next_u64()),
                    PolicyNet(shape, root.split("agent", 1).next_u64())},
                   {}};
}

CollectedBatch collect_batch(const std::array<const PolicyNet*, kNumAgents>& nets, const EpisodeConfig& env, int count,
                             std::uint64_t seed, long first_index, CollectOptions options) {
  if (count < 1) throw std::invalid_argument("collect_batch: count must be >= 1");
  for (const PolicyNet* n : nets) {
    if (n == nullptr || n->shape().obs != env.obs) throw std::invalid_argument("network does not match observation mode");
  }
  const auto n = static_cast<std::size_t>(count);
  std::vector<Episode> eps;
  eps.reserve(n);
  std::vector<std::array<Observation, kNumAgents>> cur(n);
  std::vector<std::array<Rng, kNumAgents>> rngs;
  CollectedBatch out;
  for (std::size_t i = 0; i < n; ++i) {
    EpisodeConfig c = env;
    c.seed = episode_seed(seed, first_index + static_cast<long>(i));
    eps.emplace_back(c);
    cur[i] = eps.back().reset();
    const Rng act = Rng(seed).split("act", static_cast<std::uint64_t>(first_index) + i);
    rngs.push_back({act.split(0), act.split(1)});
    out.episodes.push_back({c.seed, eps.back().mode(), c.depth, {}});
  }
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    if (options.keep_experience) out.experience[k].assign(n, {});
  }

  std::array<RecurrentState, kNumAgents> state;
  std::array<int, kNumAgents> width{};
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    state[k] = RecurrentState::zeros(count, nets[k]->shape().hidden);
    width[k] = nets[k]->shape().obs_width();
  }
  std::vector<bool> active(n, true);
  std::size_t remaining = n;
  SeqInput in;
  SeqOutput net_out;
  std::vector<std::array<ActionCommand, kNumAgents>> cmds(n);
  while (remaining > 0) {
    for (std::size_t k = 0; k < kNumAgents; ++k) {
      const auto W = static_cast<std::size_t>(width[k]);
      in.T = 1;
      in.B = count;
      in.obs.assign(n * W, 0.0);
      in.prev.assign(n * kPrevWidth, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        const Observation& o = cur[i][k];
        std::copy(o.view.begin(), o.view.end(), in.obs.begin() + static_cast<std::ptrdiff_t>(i * W));
        fill_prev(o, in.prev.data() + i * kPrevWidth);
      }
      nets[k]->forward(in, state[k], net_out);
      const double* log_std = nets[k]->params().data() + nets[k]->log_std_offset();
      for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        const double* head = net_out.head.data() + i * kHeadOut;
        const ActionSample a = options.greedy ? mode_action(head, log_std) : sample_action(head, log_std, rngs[i][k]);
        cmds[i][k] = squash(a);
        if (options.keep_experience) {
          AgentEpisode& e = out.experience[k][i];
          e.obs.insert(e.obs.end(), in.obs.begin() + static_cast<std::ptrdiff_t>(i * W),
                       in.obs.begin() + static_cast<std::ptrdiff_t>((i + 1) * W));
          e.prev.insert(e.prev.end(), in.prev.begin() + static_cast<std::ptrdiff_t>(i * kPrevWidth),
                        in.prev.begin() + static_cast<std::ptrdiff_t>((i + 1) * kPrevWidth));
          e.actions.push_back(a);
          e.value.push_back(net_out.value[i]);
          ++e.length;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      StepResult r = eps[i].step(cmds[i]);
      for (std::size_t k = 0; k < kNumAgents; ++k) {
        if (options.keep_experience) out.experience[k][i].reward.push_back(r.reward[k]);
      }
      cur[i] = std::move(r.obs);
      if (r.done) {
        active[i] = false;
        --remaining;
        for (std::size_t k = 0; k < kNumAgents; ++k) out.episodes[i].progress[k] = eps[i].progress(static_cast<int>(k));
      }
    }
  }
  return out;
}

std::array<UpdateStats, kNumAgents> update_agents(AgentPair& agents, const CollectedBatch& batch,
                                                  const TrainConfig& config, double lr, const Rng& rng) {
  std::array<UpdateStats, kNumAgents> out{};
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    if (batch.experience[k].empty()) continue;
    out[k] = ppo_update(agents.nets[k], agents.opt[k], batch.experience[k], config, lr, rng.split(k));
  }
  return out;
}

Summary summarize(const std::vector<EpisodeRecord>& records) {
  if (records.empty()) throw std::invalid_argument("summarize: no episodes");
  Summary s;
  s.episodes = static_cast<int>(records.size());
  int depth = 0;
  for (const EpisodeRecord& r : records) depth = std::max(depth, r.depth);
  std::vector<int> stage_hits(static_cast<std::size_t>(depth), 0);
  int worlds = 0;
  std::array<int, kNumAgents> single_full{}, single_skill{};
  int multi_full = 0;
  auto count_world = [&](const StageProgress& p) {
    ++worlds;
    for (int st = 1; st <= p.depth; ++st) {
      if (p.completed[static_cast<std::size_t>(st - 1)]) ++stage_hits[static_cast<std::size_t>(st - 1)];
    }
  };
  for (const EpisodeRecord& r : records) {
    if (r.mode == Mode::kMulti) {
      ++s.multi_episodes;
      count_world(r.progress[0]);
      if (r.progress[0].all_complete()) ++multi_full;
    } else {
      ++s.single_episodes;
      for (std::size_t k = 0; k < kNumAgents; ++k) {
        const StageProgress& p = r.progress[k];
        count_world(p);
        if (p.all_complete()) ++single_full[k];
        const int skill_stage = std::min(3, p.depth);
        if (skill_stage >= 1 && p.completed[static_cast<std::size_t>(skill_stage - 1)]) ++single_skill[k];
      }
    }
  }
  s.stage_success.resize(static_cast<std::size_t>(depth));
  for (std::size_t i = 0; i < stage_hits.size(); ++i) s.stage_success[i] = static_cast<double>(stage_hits[i]) / worlds;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (s.single_episodes > 0) {
    for (std::size_t k = 0; k < kNumAgents; ++k) {
      s.single_success[k] = static_cast<double>(single_full[k]) / s.single_episodes;
    }
    s.skill_difference =
        std::abs(static_cast<double>(single_skill[0]) - static_cast<double>(single_skill[1])) / s.single_episodes;
  } else {
    s.single_success = {nan, nan};
    s.skill_difference = nan;
  }
  s.multi_success = s.multi_episodes > 0 ? static_cast<double>(multi_full) / s.multi_episodes : nan;
  return s;
}

std::string BatchMetrics::to_json() const {
  nlohmann::json j;
  j["batch"] = batch;
  j["episodes"] = episodes;
  j["lr"] = lr;
  j["train"] = summary_json(train);
  nlohmann::json up = nlohmann::json::array();
  for (const UpdateStats& u : update) {
    up.push_back({{"policy_loss", json_number(u.policy_loss)},
                  {"value_loss", json_number(u.value_loss)},
                  {"entropy", json_number(u.entropy)},
                  {"approx_kl", json_number(u.approx_kl)},
                  {"clip_fraction", u.clip_fraction},
                  {"grad_norm", json_number(u.grad_norm)}});
  }
  j["update"] = up;
  if (eval) j["eval"] = summary_json(*eval);
  j["seconds"] = seconds;
  return j.dump();
}

Summary evaluate_single(const AgentPair& agents, const EpisodeConfig& env, int episodes, std::uint64_t seed,
                        bool greedy) {
  EpisodeConfig c = env;
  c.p_multi = 0.0;
  const CollectedBatch b =
      collect_batch({&agents.nets[0], &agents.nets[1]}, c, episodes, seed, 0, {greedy, false});
  return summarize(b.episodes);
}

TrainResult train(const TrainSetup& setup, AgentPair& agents,
                  const std::function<void(const BatchMetrics&)>& on_batch) {
  setup.env.validate();
  setup.train.validate();
  std::ofstream metrics;
  if (!setup.metrics_path.empty()) {
    metrics.open(setup.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics file " + setup.metrics_path);
  }
  const Rng root(setup.seed);
  const std::uint64_t collect_seed = root.split("collect").next_u64();
  const std::uint64_t eval_seed = root.split("eval").next_u64();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  int batch = 0;
  while (result.episodes < setup.train.total_episodes) {
    const int count = static_cast<int>(
        std::min<long>(setup.train.episodes_per_batch, setup.train.total_episodes - result.episodes));
    BatchMetrics m;
    m.batch = batch;
    m.lr = setup.train.learning_rate(result.episodes);
    CollectedBatch collected =
        collect_batch({&agents.nets[0], &agents.nets[1]}, setup.env, count, collect_seed, result.episodes);
    try {
      m.update = update_agents(agents, collected, setup.train, m.lr,
                               root.split("update", static_cast<std::uint64_t>(batch)));
    } catch (const std::runtime_error&) {
      if (!setup.checkpoint_path.empty()) {
        save_checkpoint(setup.checkpoint_path, agents, setup.train.hash(), result.episodes);
      }
      throw;
    }
    result.episodes += count;
    m.episodes = result.episodes;
    m.train = summarize(collected.episodes);
    const bool last = result.episodes >= setup.train.total_episodes;
    if (setup.eval_every > 0 && ((batch + 1) % setup.eval_every == 0 || last)) {
      m.eval = evaluate_single(agents, setup.env, setup.eval_episodes, eval_seed);
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (metrics) metrics << m.to_json() << '\n' << std::flush;
    if (on_batch) on_batch(m);
    result.history.push_back(m);
    ++batch;
    if (setup.stop_at_single_success > 0.0 && m.eval) {
      const double mean = 0.5 * (m.eval->single_success[0] + m.eval->single_success[1]);
      if (mean > setup.stop_at_single_success) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (!setup.checkpoint_path.empty()) save_checkpoint(setup.checkpoint_path, agents, setup.train.hash(), result.episodes);
  return result;
}

LearnedPolicy::LearnedPolicy(const std::array<PolicyNet, kNumAgents>& nets, std::uint64_t seed, bool greedy)
    : nets_(&nets), rng_(Rng(seed).split("learned-policy")), greedy_(greedy) {
  reset();
}

void LearnedPolicy::reset() {
  for (std::size_t k = 0; k < kNumAgents; ++k) state_[k] = RecurrentState::zeros(1, (*nets_)[k].shape().hidden);
}

std::array<ActionCommand, kNumAgents> LearnedPolicy::act(const Episode& ep) {
  std::array<ActionCommand, kNumAgents> out{};
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    const PolicyNet& net = (*nets_)[k];
    const Observation o = ep.observe(static_cast<int>(k));
    SeqInput in;
    in.T = 1;
    in.B = 1;
    in.obs = o.view;
    in.prev.resize(kPrevWidth);
    fill_prev(o, in.prev.data());
    SeqOutput y;
    net.forward(in, state_[k], y);
    const double* log_std = net.params().data() + net.log_std_offset();
    out[k] = squash(greedy_ ? mode_action(y.head.data(), log_std) : sample_action(y.head.data(), log_std, rng_));
  }
  return out;
}

void save_checkpoint(const std::string& path, const AgentPair& agents, std::uint64_t config_hash, long episodes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  put(out, kCheckpointVersion);
  put(out, config_hash);
  put(out, static_cast<std::int64_t>(episodes));
  put(out, static_cast<std::uint32_t>(kNumAgents));
  for (const PolicyNet& net : agents.nets) {
    const NetShape& s = net.shape();
    put(out, static_cast<std::int32_t>(s.obs));
    put(out, static_cast<std::int32_t>(s.enc_width));
    put(out, static_cast<std::int32_t>(s.hidden));
    put(out, static_cast<std::int32_t>(s.head_width));
    put(out, static_cast<std::uint64_t>(net.params().size()));
    out.write(reinterpret_cast<const char*>(net.params().data()),
              static_cast<std::streamsize>(net.params().size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a checkpoint: " + path);
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto hash = get<std::uint64_t>(in);
  const auto episodes = get<std::int64_t>(in);
  if (get<std::uint32_t>(in) != kNumAgents) throw std::runtime_error("checkpoint agent count mismatch");
  auto read_net = [&in]() {
    NetShape s;
    const auto obs = get<std::int32_t>(in);
    if (obs != 0 && obs != 1) throw std::runtime_error("bad observation mode in checkpoint");
    s.obs = static_cast<ObsMode>(obs);
    s.enc_width = get<std::int32_t>(in);
    s.hidden = get<std::int32_t>(in);
    s.head_width = get<std::int32_t>(in);
    PolicyNet net(s, 0);
    if (get<std::uint64_t>(in) != net.params().size()) throw std::runtime_error("checkpoint parameter count mismatch");
    in.read(reinterpret_cast<char*>(net.params().data()),
            static_cast<std::streamsize>(net.params().size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return net;
  };
  PolicyNet a = read_net();
  PolicyNet b = read_net();
  return Checkpoint{hash, static_cast<long>(episodes), {std::move(a), std::move(b)}};
}

}  // namespace coex
