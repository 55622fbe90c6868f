// coex: generation, play, training, evaluation, replay and statistics.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 gate failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coex/episode.hpp"
#include "coex/harness.hpp"
#include "coex/oracle.hpp"
#include "coex/task_tree.hpp"
#include "coex/train.hpp"

namespace fs = std::filesystem;
using namespace coex;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGate = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by every command that builds an EpisodeConfig.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> direct;

  void add_to(CLI::App& cmd, bool with_train) {
    cmd.add_option("-c,--config", file, "key-value configuration file (INI sections)")->check(CLI::ExistingFile);
    cmd.add_option("--set", sets, "override, section.key=value (repeatable)");
    auto flag = [&](const char* name, const char* key, const char* help) {
      cmd.add_option_function<std::string>(name, [this, key](const std::string& v) { direct[key] = v; }, help);
    };
    flag("--preset", "episode.preset", "training | smoke | open_ended");
    flag("--depth", "episode.depth", "task depth");
    flag("--step-limit", "episode.step_limit", "episode step limit");
    flag("--p-multi", "episode.p_multi", "probability of a shared-world episode");
    flag("--forced", "episode.forced", "forced-cooperation task variants (true|false)");
    flag("--pool", "episode.pool", "training | novel");
    flag("--variant", "episode.variant", "standard | pressure_plate");
    flag("--obs", "episode.obs", "symbolic | pixel");
    flag("--bonus", "reward.bonus", "stage completion bonuses (true|false)");
    flag("--beta", "reward.beta", "reward growth factor");
    flag("--rooms", "arena.rooms_x", "rooms per side");
    if (with_train) {
      flag("--batch", "train.episodes_per_batch", "episodes per update batch");
      flag("--total", "train.total_episodes", "training episode budget");
      flag("--lr", "train.lr_start", "initial learning rate");
      flag("--epochs", "train.epochs", "optimization epochs per batch");
      flag("--minibatches", "train.minibatches", "minibatches per epoch");
      flag("--entropy", "train.entropy_coef", "entropy bonus coefficient");
    }
  }

  [[nodiscard]] RunConfig resolve() const {
    RunConfig rc = file.empty() ? RunConfig{} : RunConfig::load(file);
    for (const auto& [k, v] : direct) {
      rc.set(k, v);
      if (k == "arena.rooms_x") rc.set("arena.rooms_y", v);
    }
    for (const std::string& s : sets) rc.apply_override(s);
    rc.check_known_keys();
    return rc;
  }
};

std::uint64_t seed_or(const RunConfig& rc, std::optional<std::uint64_t> flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto v = rc.get("run.seed")) return std::stoull(*v);
  return fallback;
}

// ---- gen ----

int cmd_gen(const ConfigFlags& cf, int count, std::optional<std::uint64_t> seed_flag) {
  const RunConfig rc = cf.resolve();
  const EpisodeConfig c = rc.episode();
  const std::uint64_t seed = seed_or(rc, seed_flag, 0);
  const std::vector<ObjectSpec> pool = c.pool == PoolId::kTraining ? training_pool() : novel_pool();
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng(seed).split("gen", static_cast<std::uint64_t>(i));
    const TaskTree tree = c.variant == TaskVariant::kPressurePlate
                              ? make_pressure_plate_task(rng, pool)
                              : sample_task_tree(rng, c.depth, c.forced, pool, c.sampler);
    validate_tree(tree);
    std::cout << serialize(tree) << '\n';
  }
  return 0;
}

// ---- play ----

char shape_char(Shape s) {
  static constexpr char kChars[] = {'o', 's', 't', 'p', '*', 'x'};
  return kChars[static_cast<int>(s)];
}

char env_char(EnvKind k) {
  static constexpr char kChars[] = {'L', 'M', 'D', 'G', 'P'};
  return kChars[static_cast<int>(k)];
}

void render_ascii(const WorldState& w, std::ostream& out) {
  constexpr int kCols = 64;
  const int rows = std::max(8, static_cast<int>(std::lround(kCols * w.arena.height() / w.arena.width() / 2)));
  std::vector<std::string> grid(static_cast<std::size_t>(rows), std::string(kCols, ' '));
  auto cell = [&](Vec2 p) -> char* {
    const int c = std::clamp(static_cast<int>(p.x / w.arena.width() * kCols), 0, kCols - 1);
    const int r = std::clamp(static_cast<int>(p.y / w.arena.height() * rows), 0, rows - 1);
    return &grid[static_cast<std::size_t>(rows - 1 - r)][static_cast<std::size_t>(c)];
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < kCols; ++c) {
      const Vec2 p{(c + 0.5) * w.arena.width() / kCols, (rows - 1 - r + 0.5) * w.arena.height() / rows};
      for (const Rect& wall : w.walls) {
        if (p.x >= wall.x0 && p.x <= wall.x1 && p.y >= wall.y0 && p.y <= wall.y1) {
          grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = '#';
        }
      }
    }
  }
  for (const Entity& e : w.entities) {
    char ch = e.spec.is_task() ? shape_char(e.spec.shape) : env_char(e.spec.env_kind);
    if (e.held_by) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    *cell(e.position) = ch;
  }
  for (const AgentBody& a : w.agents) *cell(a.position) = static_cast<char>('0' + a.id);
  for (const std::string& line : grid) out << '|' << line << "|\n";
  for (const AgentBody& a : w.agents) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "agent %d at (%.0f, %.0f) heading %.0f deg", a.id, a.position.x, a.position.y,
                  a.heading * 180.0 / 3.141592653589793);
    out << buf;
    if (a.held) out << " holding " << to_string(w.find(*a.held)->spec);
    out << '\n';
  }
  for (const Entity& e : w.entities) {
    out << "  #" << e.id << ' ' << to_string(e.spec);
    if (e.activated_at) out << " (lit at " << *e.activated_at << ')';
    out << '\n';
  }
}

std::array<ActionCommand, kNumAgents> human_step(const Episode& ep, int& controlled, bool& grasp, bool& quit) {
  for (int s = 0; s < ep.slot_count(); ++s) {
    if (ep.slot_count() > 1) std::cout << "world " << s << '\n';
    render_ascii(ep.slot(s).task.world, std::cout);
  }
  std::cout << "t=" << ep.t() << " agent " << controlled
            << " [w forward, a/d turn, g toggle grasp, e activate, o other agent, q quit]> " << std::flush;
  std::string line;
  std::array<ActionCommand, kNumAgents> cmd{};
  if (!std::getline(std::cin, line)) {
    quit = true;
    return cmd;
  }
  ActionCommand& c = cmd[static_cast<std::size_t>(controlled)];
  for (char ch : line) {
    switch (ch) {
      case 'w': c.forward = 1.0; break;
      case 'a': c.turn = 1.0; break;
      case 'd': c.turn = -1.0; break;
      case 'g': grasp = !grasp; break;
      case 'e': c.activate = true; break;
      case 'o': controlled = 1 - controlled; break;
      case 'q': quit = true; break;
      default: break;
    }
  }
  c.grasp = grasp;
  return cmd;
}

int cmd_play(const ConfigFlags& cf, const std::string& mode, int agents, std::optional<std::uint64_t> seed_flag,
             const std::string& trace_path, bool show) {
  const RunConfig rc = cf.resolve();
  EpisodeConfig c = rc.episode();
  c.seed = seed_or(rc, seed_flag, c.seed);
  c.record_trace = !trace_path.empty();
  if (!rc.get("episode.terminate_on_success")) c.terminate_on_success = true;
  Episode ep(c);
  ep.reset();
  std::cout << "mode " << to_string(ep.mode()) << '\n';
  for (int s = 0; s < ep.slot_count(); ++s) std::cout << "tree " << serialize(ep.slot(s).tree) << '\n';

  if (mode == "human-terminal") {
    int controlled = 0;
    bool grasp = false;
    bool quit = false;
    while (!ep.done()) {
      const auto cmd = human_step(ep, controlled, grasp, quit);
      if (quit) break;
      const StepResult r = ep.step(cmd);
      if (r.reward[0] != 0.0) std::cout << "reward " << r.reward[0] << '\n';
    }
  } else if (mode == "scripted") {
    ScriptedOracle o(agents);
    while (!ep.done()) {
      ep.step(o.act(ep));
      if (show) render_ascii(ep.slot(0).task.world, std::cout);
    }
  } else if (mode == "bruteforce") {
    BruteForceExplorer o(agents);
    while (!ep.done()) {
      ep.step(o.act(ep));
      if (show) render_ascii(ep.slot(0).task.world, std::cout);
    }
  } else if (mode == "random") {
    RandomPolicy o(c.seed);
    while (!ep.done()) {
      ep.step(o.act(ep));
      if (show) render_ascii(ep.slot(0).task.world, std::cout);
    }
  } else {
    throw UsageError("unknown play mode '" + mode + "'");
  }

  const EpisodeSummary s = summarize_episode(ep);
  std::cout << "steps " << s.steps << '\n';
  for (std::size_t k = 0; k < s.success.size(); ++k) {
    std::cout << "world " << k << " stages:";
    for (std::size_t st = 0; st < s.success[k].size(); ++st) {
      std::cout << ' ' << (s.success[k][st] ? std::to_string(s.completed_at[k][st]) : std::string("-"));
    }
    std::cout << '\n';
  }
  if (!trace_path.empty()) {
    if (!ep.done()) throw std::runtime_error("episode abandoned; trace not written");
    std::ofstream out(trace_path);
    if (!out) throw std::runtime_error("cannot write " + trace_path);
    ep.write_trace(out);
  }
  return 0;
}

// ---- train ----

int cmd_train(const ConfigFlags& cf, std::optional<std::uint64_t> seed_flag, const std::string& checkpoint,
              const std::string& metrics, int eval_every, int eval_episodes, double stop_at) {
  const RunConfig rc = cf.resolve();
  TrainSetup setup;
  setup.env = rc.episode(EpisodeConfig::smoke());
  setup.train = rc.train(TrainConfig::desk());
  setup.shape = setup.env.obs == ObsMode::kSymbolic ? NetShape::symbolic() : NetShape::pixel();
  setup.seed = seed_or(rc, seed_flag, 0);
  setup.eval_every = eval_every;
  setup.eval_episodes = eval_episodes;
  setup.stop_at_single_success = stop_at;
  setup.metrics_path = metrics;
  setup.checkpoint_path = checkpoint;
  AgentPair agents = AgentPair::fresh(setup.shape, setup.seed);
  const TrainResult r = train(setup, agents, [](const BatchMetrics& m) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "batch %d  episodes %ld  lr %.2e  train stage1 %.3f  entropy %.2f  %.0fs",
                  m.batch, m.episodes, m.lr, m.train.stage_success.empty() ? 0.0 : m.train.stage_success[0],
                  m.update[0].entropy, m.seconds);
    std::cout << buf;
    if (m.eval) {
      std::snprintf(buf, sizeof buf, "  eval single %.3f %.3f", m.eval->single_success[0], m.eval->single_success[1]);
      std::cout << buf;
    }
    std::cout << '\n' << std::flush;
  });
  std::cout << "trained " << r.episodes << " episodes" << (r.stopped_early ? " (target reached)" : "") << '\n';
  return 0;
}

// ---- eval ----

struct Gate {
  int stage = 0;
  double min_rate = 0.0;
};

Gate parse_gate(const std::string& s) {
  const std::size_t eq = s.find('=');
  if (eq == std::string::npos) throw UsageError("gate must look like STAGE=RATE: '" + s + "'");
  Gate g;
  try {
    g.stage = std::stoi(s.substr(0, eq));
    g.min_rate = std::stod(s.substr(eq + 1));
  } catch (const std::exception&) {
    throw UsageError("gate must look like STAGE=RATE: '" + s + "'");
  }
  return g;
}

int cmd_eval(const ConfigFlags& cf, const std::string& policy, const std::string& checkpoint, const std::string& spec,
             int episodes, std::optional<std::uint64_t> seed_flag, int agents, bool greedy,
             const std::string& trace_dir, const std::string& records, const std::vector<std::string>& gates) {
  const RunConfig rc = cf.resolve();
  std::vector<Gate> parsed;
  for (const std::string& g : gates) parsed.push_back(parse_gate(g));
  EvalRequest req;
  req.policy = parse_policy_kind(policy);
  req.checkpoint = checkpoint;
  req.config = eval_config(parse_eval_spec(spec), rc.episode());
  req.episodes = episodes;
  req.seed = seed_or(rc, seed_flag, 0);
  req.n_agents = agents;
  req.greedy = greedy;
  req.trace_dir = trace_dir;
  const EvalReport report = run_evaluation(req);
  std::cout << "spec " << spec << ", policy " << policy << '\n' << report.stats.human_summary();
  if (!records.empty()) {
    std::ofstream out(records);
    if (!out) throw std::runtime_error("cannot write " + records);
    out << report.stats.to_records();
  }
  bool pass = true;
  for (const Gate& g : parsed) {
    if (g.stage < 1 || g.stage > static_cast<int>(report.stats.stage_success.size())) {
      throw UsageError("gate stage " + std::to_string(g.stage) + " out of range");
    }
    const double rate = report.stats.stage_success[static_cast<std::size_t>(g.stage - 1)].rate;
    const bool ok = rate >= g.min_rate;
    std::printf("gate stage %d >= %.3f: %s (%.3f)\n", g.stage, g.min_rate, ok ? "pass" : "FAIL", rate);
    pass = pass && ok;
  }
  return pass ? 0 : kExitGate;
}

// ---- replay / stats ----

std::vector<fs::path> expand_traces(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> dir;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".trace") dir.push_back(e.path());
      }
      std::sort(dir.begin(), dir.end());
      out.insert(out.end(), dir.begin(), dir.end());
    } else if (fs::is_regular_file(in)) {
      out.emplace_back(in);
    } else {
      throw UsageError("no such trace file or directory: " + in);
    }
  }
  return out;
}

int cmd_replay(const std::vector<std::string>& inputs) {
  int code = 0;
  for (const fs::path& p : expand_traces(inputs)) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    const ReplayReport r = replay_trace(in);
    if (r.ok) {
      std::cout << p.string() << ": ok (" << r.steps << " steps)\n";
    } else if (r.malformed_line >= 0) {
      std::cout << p.string() << ": malformed at line " << r.malformed_line << ": " << r.message << '\n';
      code = std::max(code, kExitRuntime);
    } else {
      std::cout << p.string() << ": diverged at step " << r.divergent_step << ": " << r.message << '\n';
      code = kExitGate;
    }
  }
  return code;
}

int cmd_stats(const std::vector<std::string>& inputs, int bin, const std::string& records, bool json) {
  std::vector<EpisodeSummary> episodes;
  for (const fs::path& p : expand_traces(inputs)) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    try {
      episodes.push_back(read_trace_summary(in));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(p.string() + ": " + e.what());
    }
  }
  if (episodes.empty()) throw UsageError("no traces given");
  const Stats st = compute_stats(episodes, bin);
  if (json) {
    std::cout << st.to_records();
  } else {
    std::cout << st.human_summary();
  }
  if (!records.empty()) {
    std::ofstream out(records);
    if (!out) throw std::runtime_error("cannot write " + records);
    out << st.to_records();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coex: cooperative task-tree environment tools"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;

  ConfigFlags gen_cf;
  int gen_count = 1;
  auto* gen = app.add_subcommand("gen", "emit serialized task trees");
  gen_cf.add_to(*gen, false);
  gen->add_option("-n,--count", gen_count, "number of trees")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "root seed");

  ConfigFlags play_cf;
  std::string play_mode = "scripted";
  int play_agents = 2;
  std::string play_trace;
  bool play_show = false;
  auto* play = app.add_subcommand("play", "run one episode");
  play_cf.add_to(*play, false);
  play->add_option("-m,--mode", play_mode, "scripted | bruteforce | random | human-terminal")
      ->check(CLI::IsMember({"scripted", "bruteforce", "random", "human-terminal"}));
  play->add_option("--agents", play_agents, "agents driven by the oracle")->check(CLI::Range(1, 2));
  play->add_option("--seed", seed, "episode seed");
  play->add_option("--trace", play_trace, "write the episode trace here");
  play->add_flag("--show", play_show, "render every step");

  ConfigFlags train_cf;
  std::string train_ckpt = "coex.ckpt";
  std::string train_metrics;
  int train_eval_every = 10;
  int train_eval_episodes = 100;
  double train_stop = 0.0;
  auto* trn = app.add_subcommand("train", "decentralized training of two agents");
  train_cf.add_to(*trn, true);
  trn->add_option("--seed", seed, "root seed");
  trn->add_option("--checkpoint", train_ckpt, "checkpoint path");
  trn->add_option("--metrics", train_metrics, "append per-batch records here");
  trn->add_option("--eval-every", train_eval_every, "batches between evaluations (0 disables)");
  trn->add_option("--eval-episodes", train_eval_episodes, "episodes per evaluation")->check(CLI::PositiveNumber);
  trn->add_option("--stop-at", train_stop, "stop once mean single-agent success exceeds this");

  ConfigFlags eval_cf;
  std::string eval_policy = "scripted";
  std::string eval_ckpt;
  std::string eval_spec = "training";
  int eval_episodes = 1000;
  int eval_agents = 2;
  bool eval_greedy = false;
  std::string eval_traces;
  std::string eval_records;
  std::vector<std::string> eval_gates;
  auto* evl = app.add_subcommand("eval", "evaluate a policy on an evaluation spec");
  eval_cf.add_to(*evl, false);
  evl->add_option("-p,--policy", eval_policy, "checkpoint | scripted | bruteforce | random");
  evl->add_option("--checkpoint", eval_ckpt, "checkpoint for --policy checkpoint");
  evl->add_option("-s,--spec", eval_spec, "training | novel | forced | pressure_plate | open_ended");
  evl->add_option("-n,--episodes", eval_episodes, "episodes")->check(CLI::PositiveNumber);
  evl->add_option("--seed", seed, "episode i uses seed + i");
  evl->add_option("--agents", eval_agents, "agents driven by the oracle")->check(CLI::Range(1, 2));
  evl->add_flag("--greedy", eval_greedy, "deterministic learned actions");
  evl->add_option("--trace-dir", eval_traces, "write one trace per episode");
  evl->add_option("--records", eval_records, "write line-delimited records here");
  evl->add_option("--gate", eval_gates, "STAGE=RATE: exit 3 unless the stage success rate reaches RATE");

  std::vector<std::string> replay_inputs;
  auto* rpl = app.add_subcommand("replay", "re-simulate traces and compare");
  rpl->add_option("traces", replay_inputs, "trace files or directories")->required();

  std::vector<std::string> stats_inputs;
  int stats_bin = 50;
  std::string stats_records;
  bool stats_json = false;
  auto* sts = app.add_subcommand("stats", "success rates and skill difference from traces");
  sts->add_option("traces", stats_inputs, "trace files or directories")->required();
  sts->add_option("--bin", stats_bin, "histogram bin width in steps")->check(CLI::PositiveNumber);
  sts->add_option("--records", stats_records, "write line-delimited records here");
  sts->add_flag("--json", stats_json, "print records instead of the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_cf, gen_count, seed);
    if (*play) return cmd_play(play_cf, play_mode, play_agents, seed, play_trace, play_show);
    if (*trn) {
      return cmd_train(train_cf, seed, train_ckpt, train_metrics, train_eval_every, train_eval_episodes, train_stop);
    }
    if (*evl) {
      return cmd_eval(eval_cf, eval_policy, eval_ckpt, eval_spec, eval_episodes, seed, eval_agents, eval_greedy,
                      eval_traces, eval_records, eval_gates);
    }
    if (*rpl) return cmd_replay(replay_inputs);
    if (*sts) return cmd_stats(stats_inputs, stats_bin, stats_records, stats_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
