#include "coex/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "coex/oracle.hpp"
#include "coex/train.hpp"

namespace coex {

using json = nlohmann::json;

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "checkpoint") return PolicyKind::kCheckpoint;
  if (s == "scripted") return PolicyKind::kScripted;
  if (s == "bruteforce") return PolicyKind::kBruteForce;
  if (s == "random") return PolicyKind::kRandom;
  throw std::invalid_argument("unknown policy '" + s + "'");
}

EvalSpec parse_eval_spec(const std::string& s) {
  if (s == "training") return EvalSpec::kTraining;
  if (s == "novel") return EvalSpec::kNovel;
  if (s == "forced") return EvalSpec::kForced;
  if (s == "pressure_plate") return EvalSpec::kPressurePlate;
  if (s == "open_ended") return EvalSpec::kOpenEnded;
  throw std::invalid_argument("unknown eval spec '" + s + "'");
}

std::string to_string(EvalSpec s) {
  switch (s) {
    case EvalSpec::kTraining: return "training";
    case EvalSpec::kNovel: return "novel";
    case EvalSpec::kForced: return "forced";
    case EvalSpec::kPressurePlate: return "pressure_plate";
    case EvalSpec::kOpenEnded: return "open_ended";
  }
  return "?";
}

EpisodeConfig eval_config(EvalSpec spec, const EpisodeConfig& base) {
  EpisodeConfig c = base;
  c.terminate_on_success = true;
  switch (spec) {
    case EvalSpec::kTraining:
      break;
    case EvalSpec::kNovel:
      c.pool = PoolId::kNovel;
      break;
    case EvalSpec::kForced:
      c.forced = true;
      c.p_multi = 1.0;
      break;
    case EvalSpec::kPressurePlate:
      c.variant = TaskVariant::kPressurePlate;
      c.p_multi = 1.0;
      break;
    case EvalSpec::kOpenEnded: {
      const EpisodeConfig open = EpisodeConfig::open_ended();
      c.depth = open.depth;
      c.step_limit = open.step_limit;
      c.reward.bonus_enabled = open.reward.bonus_enabled;
      break;
    }
  }
  return c;
}

EpisodeSummary summarize_episode(const Episode& ep) {
  EpisodeSummary s;
  s.seed = ep.config().seed;
  s.mode = ep.mode();
  s.steps = ep.t();
  for (int i = 0; i < ep.slot_count(); ++i) {
    const StageProgress& p = ep.slot(i).progress;
    s.success.push_back(p.completed);
    s.completed_at.push_back(p.completed_at);
  }
  return s;
}

EpisodeSummary read_trace_summary(std::istream& in) {
  std::string header, footer, line;
  while (std::getline(in, line)) {
    if (header.empty()) header = line;
    if (!line.empty()) footer = line;
  }
  const std::string magic = "coex-trace ";
  if (header.rfind(magic, 0) != 0) throw std::invalid_argument("trace has no header");
  if (footer.rfind("end ", 0) != 0) throw std::invalid_argument("trace has no footer");
  try {
    const std::size_t brace = header.find('{');
    if (brace == std::string::npos) throw std::invalid_argument("trace header has no body");
    const json h = json::parse(header.substr(brace));
    const json f = json::parse(footer.substr(4));
    EpisodeSummary s;
    s.seed = h.at("config").at("seed").get<std::uint64_t>();
    const std::string mode = h.at("mode").get<std::string>();
    if (mode != "multi" && mode != "single") throw std::invalid_argument("unknown mode '" + mode + "'");
    s.mode = mode == "multi" ? Mode::kMulti : Mode::kSingle;
    s.steps = f.at("steps").get<int>();
    s.success = f.at("success").get<std::vector<std::vector<bool>>>();
    if (f.contains("completed_at")) {
      s.completed_at = f.at("completed_at").get<std::vector<std::vector<int>>>();
    } else {
      for (const auto& slot : s.success) s.completed_at.emplace_back(slot.size(), -1);
    }
    const std::size_t slots = s.mode == Mode::kMulti ? 1 : kNumAgents;
    if (s.success.size() != slots || s.completed_at.size() != slots) {
      throw std::invalid_argument("trace footer slot count does not match mode");
    }
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed trace: ") + e.what());
  }
}

RateCI wilson(int hits, int trials, double z) {
  RateCI r;
  r.hits = hits;
  r.trials = trials;
  if (trials <= 0) {
    r.hi = 1.0;
    return r;
  }
  const double n = trials;
  const double p = hits / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  r.rate = p;
  r.lo = std::max(0.0, centre - half);
  r.hi = std::min(1.0, centre + half);
  return r;
}

Stats compute_stats(std::span<const EpisodeSummary> episodes, int histogram_bin) {
  if (episodes.empty()) throw std::invalid_argument("compute_stats: empty trace set");
  if (histogram_bin < 1) throw std::invalid_argument("compute_stats: histogram bin must be >= 1");
  Stats st;
  st.episodes = static_cast<int>(episodes.size());
  st.histogram_bin = histogram_bin;
  std::size_t depth = 0;
  for (const EpisodeSummary& e : episodes) {
    for (const auto& slot : e.success) depth = std::max(depth, slot.size());
  }
  std::vector<int> hits(depth, 0), trials(depth, 0);
  st.completion_histogram.assign(depth, {});
  std::array<int, kNumAgents> single_hits{};
  int single_trials = 0;
  for (const EpisodeSummary& e : episodes) {
    for (std::size_t k = 0; k < e.success.size(); ++k) {
      const auto& slot = e.success[k];
      for (std::size_t s = 0; s < slot.size(); ++s) {
        ++trials[s];
        if (!slot[s]) continue;
        ++hits[s];
        const int at = k < e.completed_at.size() && s < e.completed_at[k].size() ? e.completed_at[k][s] : -1;
        if (at >= 0) {
          const auto bin = static_cast<std::size_t>(at / histogram_bin);
          auto& h = st.completion_histogram[s];
          if (h.size() <= bin) h.resize(bin + 1, 0);
          ++h[bin];
        }
      }
    }
    if (e.mode == Mode::kSingle && e.success.size() == kNumAgents) {
      ++single_trials;
      for (std::size_t k = 0; k < kNumAgents; ++k) {
        const auto& slot = e.success[k];
        const std::size_t stage = std::min<std::size_t>(3, slot.size());
        if (stage >= 1 && slot[stage - 1]) ++single_hits[k];
      }
    }
  }
  for (std::size_t s = 0; s < depth; ++s) st.stage_success.push_back(wilson(hits[s], trials[s]));
  for (std::size_t k = 0; k < kNumAgents; ++k) st.single_stage3[k] = wilson(single_hits[k], single_trials);
  if (single_trials > 0) st.skill_difference = std::abs(st.single_stage3[0].rate - st.single_stage3[1].rate);
  return st;
}

std::string Stats::to_records() const {
  std::ostringstream out;
  for (std::size_t s = 0; s < stage_success.size(); ++s) {
    const RateCI& r = stage_success[s];
    json j{{"record", "stage_success"}, {"stage", s + 1}, {"hits", r.hits}, {"trials", r.trials},
           {"rate", r.rate}, {"ci_lo", r.lo}, {"ci_hi", r.hi}};
    out << j.dump() << '\n';
  }
  for (std::size_t k = 0; k < kNumAgents; ++k) {
    const RateCI& r = single_stage3[k];
    json j{{"record", "single_agent_success"}, {"agent", k}, {"hits", r.hits}, {"trials", r.trials},
           {"rate", r.rate}, {"ci_lo", r.lo}, {"ci_hi", r.hi}};
    out << j.dump() << '\n';
  }
  json d{{"record", "skill_difference"}, {"episodes", episodes}};
  d["value"] = skill_difference ? json(*skill_difference) : json(nullptr);
  out << d.dump() << '\n';
  for (std::size_t s = 0; s < completion_histogram.size(); ++s) {
    json h{{"record", "completion_histogram"}, {"stage", s + 1}, {"bin", histogram_bin},
           {"counts", completion_histogram[s]}};
    out << h.dump() << '\n';
  }
  return out.str();
}

std::string Stats::human_summary() const {
  std::ostringstream out;
  out << "episodes: " << episodes << '\n';
  char buf[160];
  for (std::size_t s = 0; s < stage_success.size(); ++s) {
    const RateCI& r = stage_success[s];
    std::snprintf(buf, sizeof buf, "stage %zu: %.3f  [%.3f, %.3f]  (%d/%d)\n", s + 1, r.rate, r.lo, r.hi, r.hits,
                  r.trials);
    out << buf;
  }
  if (skill_difference) {
    std::snprintf(buf, sizeof buf, "single-agent success: agent0 %.3f, agent1 %.3f, difference %.3f\n",
                  single_stage3[0].rate, single_stage3[1].rate, *skill_difference);
    out << buf;
  } else {
    out << "single-agent success: no single-agent episodes\n";
  }
  return out.str();
}

EvalReport run_evaluation(const EvalRequest& req) {
  if (req.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (req.n_agents < 1 || req.n_agents > kNumAgents) throw std::invalid_argument("n_agents must be 1 or 2");
  req.config.validate();
  std::optional<Checkpoint> ckpt;
  if (req.policy == PolicyKind::kCheckpoint) {
    if (req.checkpoint.empty() || !std::filesystem::exists(req.checkpoint)) {
      throw std::invalid_argument("missing checkpoint '" + req.checkpoint + "'");
    }
    ckpt = load_checkpoint(req.checkpoint);
    for (const PolicyNet& n : ckpt->nets) {
      if (n.shape().obs != req.config.obs) throw std::invalid_argument("checkpoint observation mode mismatch");
    }
  }
  if (!req.trace_dir.empty()) std::filesystem::create_directories(req.trace_dir);

  EvalReport report;
  for (int i = 0; i < req.episodes; ++i) {
    EpisodeConfig c = req.config;
    c.seed = req.seed + static_cast<std::uint64_t>(i);
    c.record_trace = !req.trace_dir.empty();
    Episode ep(c);
    ep.reset();
    switch (req.policy) {
      case PolicyKind::kScripted: {
        ScriptedOracle o(req.n_agents);
        while (!ep.done()) ep.step(o.act(ep));
        break;
      }
      case PolicyKind::kBruteForce: {
        BruteForceExplorer o(req.n_agents);
        while (!ep.done()) ep.step(o.act(ep));
        break;
      }
      case PolicyKind::kRandom: {
        RandomPolicy o(c.seed);
        while (!ep.done()) ep.step(o.act(ep));
        break;
      }
      case PolicyKind::kCheckpoint: {
        LearnedPolicy o(ckpt->nets, c.seed, req.greedy);
        while (!ep.done()) ep.step(o.act(ep));
        break;
      }
    }
    report.episodes.push_back(summarize_episode(ep));
    if (!req.trace_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "episode_%06d.trace", i);
      std::ofstream out(std::filesystem::path(req.trace_dir) / name);
      if (!out) throw std::runtime_error("cannot write trace in " + req.trace_dir);
      ep.write_trace(out);
    }
  }
  report.stats = compute_stats(report.episodes);
  return report;
}

// ---- configuration ----

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "episode.preset",        "episode.depth",          "episode.step_limit",     "episode.p_multi",
      "episode.forced",        "episode.pool",           "episode.variant",        "episode.obs",
      "episode.seed",          "episode.terminate_on_success",
      "reward.r0",             "reward.beta",            "reward.b0",              "reward.bonus",
      "arena.rooms_x",         "arena.rooms_y",          "arena.room_size",        "arena.view_radius",
      "sampler.types",         "sampler.landmarks",
      "train.episodes_per_batch", "train.total_episodes", "train.lr_start",        "train.lr_decay",
      "train.gamma",           "train.lambda",           "train.clip",             "train.epochs",
      "train.minibatches",     "train.entropy_coef",     "train.value_coef",       "train.max_grad_norm",
      "train.normalize_advantages",
      "run.seed",              "run.eval_every",         "run.eval_episodes",      "run.stop_at",
      "run.metrics",           "run.checkpoint",         "run.episodes",           "run.policy",
      "run.spec",              "run.agents",             "run.trace_dir",
  };
  return keys;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad number for " + key + ": '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad integer for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::runtime_error("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) c.set(section + "." + key, value.get_value<std::string>());
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

void RunConfig::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0 || assignment.find('.') > eq) {
    throw std::invalid_argument("override must look like section.key=value: '" + assignment + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void RunConfig::check_known_keys() const {
  for (const auto& [k, v] : values_) {
    if (!known_keys().contains(k)) throw std::invalid_argument("unknown config key '" + k + "'");
  }
}

EpisodeConfig RunConfig::episode(EpisodeConfig c) const {
  check_known_keys();
  if (auto v = get("episode.preset")) {
    if (*v == "smoke") {
      c = EpisodeConfig::smoke();
    } else if (*v == "open_ended") {
      c = EpisodeConfig::open_ended();
    } else if (*v == "training") {
      c = EpisodeConfig{};
    } else {
      throw std::invalid_argument("unknown preset '" + *v + "'");
    }
  }
  for (const auto& [key, v] : values_) {
    if (key == "episode.depth") c.depth = static_cast<int>(to_long(key, v));
    else if (key == "episode.step_limit") c.step_limit = static_cast<int>(to_long(key, v));
    else if (key == "episode.p_multi") c.p_multi = to_double(key, v);
    else if (key == "episode.forced") c.forced = to_bool(key, v);
    else if (key == "episode.pool") {
      if (v != "training" && v != "novel") throw std::invalid_argument("unknown pool '" + v + "'");
      c.pool = v == "training" ? PoolId::kTraining : PoolId::kNovel;
    } else if (key == "episode.variant") {
      if (v != "standard" && v != "pressure_plate") throw std::invalid_argument("unknown variant '" + v + "'");
      c.variant = v == "standard" ? TaskVariant::kStandard : TaskVariant::kPressurePlate;
    } else if (key == "episode.obs") {
      if (v != "symbolic" && v != "pixel") throw std::invalid_argument("unknown obs '" + v + "'");
      c.obs = v == "symbolic" ? ObsMode::kSymbolic : ObsMode::kPixel;
    } else if (key == "episode.seed") c.seed = static_cast<std::uint64_t>(to_long(key, v));
    else if (key == "episode.terminate_on_success") c.terminate_on_success = to_bool(key, v);
    else if (key == "reward.r0") c.reward.r0 = to_double(key, v);
    else if (key == "reward.beta") c.reward.beta = to_double(key, v);
    else if (key == "reward.b0") c.reward.b0 = to_double(key, v);
    else if (key == "reward.bonus") c.reward.bonus_enabled = to_bool(key, v);
    else if (key == "arena.rooms_x") c.arena.rooms_x = static_cast<int>(to_long(key, v));
    else if (key == "arena.rooms_y") c.arena.rooms_y = static_cast<int>(to_long(key, v));
    else if (key == "arena.room_size") c.arena.room_size = to_double(key, v);
    else if (key == "arena.view_radius") c.arena.view_radius = to_double(key, v);
    else if (key == "sampler.landmarks") c.sampler.landmark_count = static_cast<int>(to_long(key, v));
    else if (key == "sampler.types") {
      c.sampler.allowed_types.clear();
      std::istringstream in(v);
      for (std::string t; std::getline(in, t, ',');) {
        if (!t.empty()) c.sampler.allowed_types.push_back(parse_task_type(t));
      }
    }
  }
  c.validate();
  return c;
}

TrainConfig RunConfig::train(TrainConfig c) const {
  check_known_keys();
  for (const auto& [key, v] : values_) {
    if (key == "train.episodes_per_batch") c.episodes_per_batch = static_cast<int>(to_long(key, v));
    else if (key == "train.total_episodes") c.total_episodes = to_long(key, v);
    else if (key == "train.lr_start") c.lr_start = to_double(key, v);
    else if (key == "train.lr_decay") c.lr_linear_decay = to_bool(key, v);
    else if (key == "train.gamma") c.gamma = to_double(key, v);
    else if (key == "train.lambda") c.lambda = to_double(key, v);
    else if (key == "train.clip") c.clip = to_double(key, v);
    else if (key == "train.epochs") c.epochs = static_cast<int>(to_long(key, v));
    else if (key == "train.minibatches") c.minibatches = static_cast<int>(to_long(key, v));
    else if (key == "train.entropy_coef") c.entropy_coef = to_double(key, v);
    else if (key == "train.value_coef") c.value_coef = to_double(key, v);
    else if (key == "train.max_grad_norm") c.max_grad_norm = to_double(key, v);
    else if (key == "train.normalize_advantages") c.normalize_advantages = to_bool(key, v);
  }
  c.validate();
  return c;
}

}  // namespace coex
