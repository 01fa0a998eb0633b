// leashsim: command-line front end for the scheduler/mitigation simulator.
// Bad input exits 1; bad usage exits 2.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "leashsim/leashsim.hpp"

namespace fs = std::filesystem;
using namespace leashsim;

namespace {

int log_level() {
  static const int level = [] {
    const char* v = std::getenv("LEASHSIM_LOG");
    if (!v) return 0;
    auto parsed = csv::parse_int(v);
    return parsed ? static_cast<int>(*parsed) : 1;
  }();
  return level;
}

void log(int level, const std::string& msg) {
  if (log_level() >= level) std::cerr << "leashsim: " << msg << '\n';
}

struct GlobalFlags {
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  std::string leash;  // "", "on" or "off"
  bool strict_alg1 = false;
  bool incremental_actuator = false;
};

void apply_overrides(Scenario& sc, const GlobalFlags& g) {
  if (g.seed_override) sc.seed = *g.seed_override;
  if (g.leash == "on") sc.leash.enabled = true;
  if (g.leash == "off") sc.leash.enabled = false;
  if (g.strict_alg1) sc.leash.detector.strict_alg1 = true;
  if (g.incremental_actuator) sc.leash.actuator_mode = ActuatorMode::kIncremental;
}

std::ofstream open_out(const GlobalFlags& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  const fs::path p = fs::path(g.out_dir) / name;
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ParseError(p.string(), 0, "cannot open for writing");
  log(1, "writing " + p.string());
  return out;
}

void write_run_outputs(const GlobalFlags& g, const Scenario& sc, const RunResult& r) {
  auto tl = open_out(g, "timeline.csv");
  write_timeline_csv(tl, r);
  auto sm = open_out(g, "summary.csv");
  write_summary_csv(sm, r, sc.covert ? std::optional<std::string>(sc.covert->receiver) : std::nullopt);
}

int cmd_run(const GlobalFlags& g, const std::string& path) {
  ScenarioFile file = load_scenario(path);
  apply_overrides(file.scenario, g);
  log(1, "running " + path);
  const RunResult r = run(file.scenario);
  write_run_outputs(g, file.scenario, r);
  log(1, std::to_string(r.timeline.size()) + " epoch records");
  return 0;
}

int cmd_sweep(const GlobalFlags& g, const std::string& kind, const std::string& path,
              const std::vector<std::string>& values) {
  ScenarioFile file = load_scenario(path);
  Scenario& sc = file.scenario;
  apply_overrides(sc, g);
  auto out = open_out(g, "sweep.csv");
  if (kind == "share") {
    if (!sc.covert) throw ParseError(path, 0, "share sweep needs a [covert] section");
    std::vector<double> shares;
    for (const auto& v : values) {
      auto s = csv::parse_double(v);
      if (!s || !(*s > 0.0) || *s > 1.0) throw ConfigError("share '" + v + "' not in (0,1]");
      shares.push_back(*s);
    }
    write_share_sweep_csv(out, sweep_share(sc.covert->spec, shares));
  } else if (kind == "N") {
    std::vector<std::size_t> ns;
    for (const auto& v : values) {
      auto n = csv::parse_int(v);
      if (!n || *n < 1) throw ConfigError("N value '" + v + "' must be an integer >= 1");
      ns.push_back(static_cast<std::size_t>(*n));
    }
    write_n_sweep_csv(out, sweep_n(sc, ns));
  } else {
    write_policy_csv(out, compare_policies(sc));
  }
  return 0;
}

/// Per-thread epoch matrices of every trace file, in file then thread order.
std::vector<EventTraceMatrix> load_matrices(const std::vector<std::string>& paths, std::size_t epoch_n,
                                            std::vector<std::string>& events) {
  std::vector<EventTraceMatrix> out;
  for (const auto& p : paths) {
    TraceTable t = load_trace_csv(p);
    if (events.empty()) events = t.events;
    if (t.events != events)
      throw ParseError(p, 0, "event columns differ from the first trace (" + scenario_detail::join(t.events) +
                                 " vs " + scenario_detail::join(events) + ")");
    for (const auto& [thread, rows] : t.threads) out.push_back(epoch_matrix(rows, epoch_n, thread));
  }
  return out;
}

int cmd_calibrate(const GlobalFlags& g, const std::vector<std::string>& traces, double k, std::size_t epoch_n) {
  std::vector<std::string> events;
  const auto benign = load_matrices(traces, epoch_n, events);
  const auto tau = calibrate_thresholds(benign, k);
  auto out = open_out(g, "thresholds.csv");
  out << "event,tau\n";
  for (std::size_t e = 0; e < events.size(); ++e) csv::write_row(out, {events[e], csv::format_double(tau[e])});
  return 0;
}

ScoreMatrix build_scores(const std::vector<std::string>& benign_paths, const std::vector<std::string>& attack_args,
                         std::size_t epoch_n) {
  std::vector<std::string> events;
  const auto benign = load_matrices(benign_paths, epoch_n, events);
  std::vector<EventTraceMatrix> attacks;
  for (const auto& arg : attack_args) {
    auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--attack expects NAME=PATH, got '" + arg + "'");
    const std::string name = arg.substr(0, eq), path = arg.substr(eq + 1);
    TraceTable t = load_trace_csv(path);
    if (t.events != events) throw ParseError(path, 0, "event columns differ from the benign traces");
    EventTraceMatrix m{name, true, {}};
    for (const auto& [thread, rows] : t.threads) {
      auto part = epoch_matrix(rows, epoch_n, name, true);
      m.rows.insert(m.rows.end(), part.rows.begin(), part.rows.end());
    }
    attacks.push_back(std::move(m));
  }
  return score_matrix(benign, attacks, events);
}

int cmd_rank(const GlobalFlags& g, const std::vector<std::string>& benign, const std::vector<std::string>& attacks,
             std::size_t epoch_n) {
  const ScoreMatrix m = build_scores(benign, attacks, epoch_n);
  auto out = open_out(g, "heatmap.csv");
  write_heatmap_csv(out, m);
  return 0;
}

int cmd_select(const GlobalFlags& g, const std::vector<std::string>& benign, const std::vector<std::string>& attacks,
               const std::string& scores_path, std::size_t epoch_n, int registers, double min_score) {
  ScoreMatrix m;
  if (!scores_path.empty()) {
    std::ifstream in(scores_path);
    if (!in) throw ParseError(scores_path, 0, "cannot open heatmap");
    m = parse_heatmap_csv(in, scores_path);
  } else {
    m = build_scores(benign, attacks, epoch_n);
  }
  const Selection sel = select_events(m, registers, min_score);
  auto out = open_out(g, "selection.csv");
  out << "order,event,newly_covered\n";
  std::map<std::size_t, std::string> covered_by;
  for (std::size_t i = 0; i < sel.events.size(); ++i) {
    std::string names;
    for (auto a : sel.newly_covered[i]) {
      names += (names.empty() ? "" : ";") + m.attacks[a];
      covered_by[a] = m.events[sel.events[i]];
    }
    csv::write_row(out, {std::to_string(i + 1), m.events[sel.events[i]], names});
  }
  auto cov = open_out(g, "coverage.csv");
  cov << "attack,covered_by\n";
  for (std::size_t a = 0; a < m.attacks.size(); ++a)
    csv::write_row(cov, {m.attacks[a], covered_by.count(a) ? covered_by[a] : ""});
  if (!sel.uncovered.empty()) {
    std::string names;
    for (auto a : sel.uncovered) names += " " + m.attacks[a];
    std::cerr << "leashsim: register budget exhausted; uncovered attacks:" << names << '\n';
  }
  return 0;
}

int cmd_replay(const GlobalFlags& g, const std::string& scenario_path, const std::vector<std::string>& traces,
               const std::string& exhaustion) {
  ScenarioFile file = load_scenario(scenario_path);
  Scenario& sc = file.scenario;
  apply_overrides(sc, g);
  sc.threads.clear();
  sc.covert.reset();
  const Exhaustion mode = exhaustion == "terminate" ? Exhaustion::kTerminate : Exhaustion::kRepeat;
  for (const auto& p : traces) {
    TraceTable t = load_trace_csv(p);
    for (const auto& [thread, rows] : t.threads)
      sc.threads.push_back({thread, replay_trace(t, thread, sc.leash.detector.events, mode)});
  }
  sc.validate();
  const RunResult r = run(sc);
  write_run_outputs(g, sc, r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair-share scheduler simulator with a reactive micro-architectural attack throttle"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--out-dir", g.out_dir, "Directory for output CSVs");
  app.add_option("--seed-override", g.seed_override, "Replace the scenario seed");
  app.add_option("--leash", g.leash, "Force the mitigation loop on or off")->check(CLI::IsMember({"on", "off"}));
  app.add_flag("--strict-alg1", g.strict_alg1, "Unflag on default weight without requiring recovery");
  app.add_flag("--incremental-actuator", g.incremental_actuator, "Scale weight by (1-gamma)^(dT) per epoch");

  std::string scenario_path;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario; writes timeline.csv and summary.csv");
  run_cmd->add_option("scenario", scenario_path, "Scenario file")->required();

  std::string sweep_kind;
  std::vector<std::string> sweep_values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Parameter sweep; writes sweep.csv");
  sweep_cmd->add_option("--kind", sweep_kind, "share, N or policy")
      ->required()
      ->check(CLI::IsMember({"share", "N", "policy"}));
  sweep_cmd->add_option("scenario", scenario_path, "Scenario file")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated sweep values")->delimiter(',');

  std::vector<std::string> traces;
  double k = 3.0;
  std::size_t epoch_n = 32;
  auto* cal_cmd = app.add_subcommand("calibrate", "Thresholds from benign traces; writes thresholds.csv");
  cal_cmd->add_option("traces", traces, "Benign trace CSVs")->required();
  cal_cmd->add_option("-k", k, "Standard deviations above the mean");
  cal_cmd->add_option("--epoch-n", epoch_n, "Switches per epoch")->check(CLI::PositiveNumber);

  std::vector<std::string> benign, attacks;
  auto* rank_cmd = app.add_subcommand("rank-events", "Detectability heatmap; writes heatmap.csv");
  rank_cmd->add_option("--benign", benign, "Benign trace CSVs")->required();
  rank_cmd->add_option("--attack", attacks, "Attack traces as NAME=PATH")->required();
  rank_cmd->add_option("--epoch-n", epoch_n, "Switches per epoch")->check(CLI::PositiveNumber);

  std::string scores_path;
  int registers = 4;
  double min_score = 0.5;
  auto* sel_cmd = app.add_subcommand("select-events", "Greedy event cover; writes selection.csv and coverage.csv");
  sel_cmd->add_option("--benign", benign, "Benign trace CSVs");
  sel_cmd->add_option("--attack", attacks, "Attack traces as NAME=PATH");
  sel_cmd->add_option("--scores", scores_path, "Precomputed heatmap.csv");
  sel_cmd->add_option("--registers", registers, "Number of HPC registers")->check(CLI::PositiveNumber);
  sel_cmd->add_option("--min-score", min_score, "Coverage score threshold")->check(CLI::Range(0.0, 1.0));
  sel_cmd->add_option("--epoch-n", epoch_n, "Switches per epoch")->check(CLI::PositiveNumber);

  std::string exhaustion = "repeat";
  auto* replay_cmd = app.add_subcommand("replay", "Run recorded traces through a scenario's loop settings");
  replay_cmd->add_option("scenario", scenario_path, "Scenario file (threads are replaced)")->required();
  replay_cmd->add_option("--trace", traces, "Trace CSVs, one thread per trace thread")->required();
  replay_cmd->add_option("--exhaustion", exhaustion, "repeat or terminate")
      ->check(CLI::IsMember({"repeat", "terminate"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (sel_cmd->parsed() && scores_path.empty() && (benign.empty() || attacks.empty())) {
    std::cerr << "select-events: give --scores or both --benign and --attack\n";
    return 2;
  }
  if (sweep_cmd->parsed() && sweep_kind != "policy" && sweep_values.empty()) {
    std::cerr << "sweep: --values is required for kind " << sweep_kind << '\n';
    return 2;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(g, scenario_path);
    if (sweep_cmd->parsed()) return cmd_sweep(g, sweep_kind, scenario_path, sweep_values);
    if (cal_cmd->parsed()) return cmd_calibrate(g, traces, k, epoch_n);
    if (rank_cmd->parsed()) return cmd_rank(g, benign, attacks, epoch_n);
    if (sel_cmd->parsed()) return cmd_select(g, benign, attacks, scores_path, epoch_n, registers, min_score);
    if (replay_cmd->parsed()) return cmd_replay(g, scenario_path, traces, exhaustion);
  } catch (const leashsim::Error& e) {
    std::cerr << "leashsim: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "leashsim: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
