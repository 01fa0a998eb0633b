#pragma once

// Scenario files: an INI-style document with [sched], [detector], [policy],
// [modes], [covert] and one [threads.<name>] section per thread. Every key
// is checked on load and unknown sections or keys are rejected with the
// offending line number.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "leashsim/csv.hpp"
#include "leashsim/errors.hpp"
#include "leashsim/sim_engine.hpp"
#include "leashsim/workloads.hpp"

namespace leashsim {

namespace scenario_detail {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct Section {
  std::string name;
  std::size_t line = 0;
  std::vector<Entry> entries;
};

inline std::vector<Section> tokenize(std::istream& in, const std::string& source) {
  std::vector<Section> sections;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, lineno, "unterminated section header");
      std::string name(csv::trim(line.substr(1, line.size() - 2)));
      if (name.empty()) throw ParseError(source, lineno, "empty section name");
      for (const auto& s : sections)
        if (s.name == name) throw ParseError(source, lineno, "duplicate section [" + name + "]");
      sections.push_back({name, lineno, {}});
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, lineno, "expected 'key = value'");
    if (sections.empty()) throw ParseError(source, lineno, "key outside of any section");
    Entry e{std::string(csv::trim(line.substr(0, eq))), std::string(csv::trim(line.substr(eq + 1))), lineno};
    if (e.key.empty()) throw ParseError(source, lineno, "empty key");
    auto& entries = sections.back().entries;
    for (const auto& prev : entries)
      if (prev.key == e.key) throw ParseError(source, lineno, "duplicate key '" + e.key + "'");
    entries.push_back(std::move(e));
  }
  return sections;
}

/// Typed, consuming view over one section; leftover keys are errors.
class Reader {
 public:
  Reader(const Section& s, std::string source) : section_(s), source_(std::move(source)) {}

  const Entry* find(const std::string& key) {
    for (const auto& e : section_.entries)
      if (e.key == key) {
        used_.insert(key);
        return &e;
      }
    return nullptr;
  }

  const Entry& require(const std::string& key) {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, section_.line, "[" + section_.name + "] is missing key '" + key + "'");
    return *e;
  }

  [[noreturn]] void fail(const Entry& e, const std::string& what) const {
    throw ParseError(source_, e.line, "[" + section_.name + "] " + e.key + ": " + what);
  }

  double real(const Entry& e) const {
    auto v = csv::parse_double(e.value);
    if (!v) fail(e, "'" + e.value + "' is not a number");
    return *v;
  }

  std::int64_t integer(const Entry& e) const {
    auto v = csv::parse_int(e.value);
    if (!v) fail(e, "'" + e.value + "' is not an integer");
    return *v;
  }

  bool boolean(const Entry& e) const {
    if (e.value == "true" || e.value == "on" || e.value == "1") return true;
    if (e.value == "false" || e.value == "off" || e.value == "0") return false;
    fail(e, "'" + e.value + "' is not a boolean (true/false/on/off)");
  }

  std::vector<std::string> list(const Entry& e) const {
    auto items = csv::split(e.value);
    for (const auto& i : items)
      if (i.empty()) fail(e, "empty list item");
    return items;
  }

  std::vector<double> reals(const Entry& e) const {
    std::vector<double> out;
    for (const auto& item : list(e)) {
      auto v = csv::parse_double(item);
      if (!v) fail(e, "'" + item + "' is not a number");
      out.push_back(*v);
    }
    return out;
  }

  template <typename T>
  void opt_real(const std::string& key, T& out, const std::function<bool(double)>& ok, const std::string& range) {
    if (const Entry* e = find(key)) {
      const double v = real(*e);
      if (!ok(v)) fail(*e, "must be " + range);
      out = static_cast<T>(v);
    }
  }

  void opt_int(const std::string& key, std::int64_t& out, std::int64_t min_value) {
    if (const Entry* e = find(key)) {
      const auto v = integer(*e);
      if (v < min_value) fail(*e, "must be >= " + std::to_string(min_value));
      out = v;
    }
  }

  void finish() const {
    for (const auto& e : section_.entries)
      if (!used_.count(e.key)) throw ParseError(source_, e.line, "[" + section_.name + "] unknown key '" + e.key + "'");
  }

 private:
  const Section& section_;
  std::string source_;
  std::set<std::string> used_;
};

inline BehaviorKind parse_kind(Reader& r, const Entry& e) {
  static const std::map<std::string, BehaviorKind> kinds{
      {"steady", BehaviorKind::kSteady},
      {"bursty", BehaviorKind::kBursty},
      {"attack_constant", BehaviorKind::kAttackConstant},
      {"trace_replay", BehaviorKind::kTraceReplay},
      {"covert_sender", BehaviorKind::kCovertSender},
      {"covert_receiver", BehaviorKind::kCovertReceiver},
  };
  auto it = kinds.find(e.value);
  if (it == kinds.end()) r.fail(e, "unknown thread kind '" + e.value + "'");
  return it->second;
}

inline const char* kind_name(BehaviorKind k) {
  switch (k) {
    case BehaviorKind::kSteady: return "steady";
    case BehaviorKind::kBursty: return "bursty";
    case BehaviorKind::kAttackConstant: return "attack_constant";
    case BehaviorKind::kTraceReplay: return "trace_replay";
    case BehaviorKind::kCovertSender: return "covert_sender";
    case BehaviorKind::kCovertReceiver: return "covert_receiver";
  }
  return "steady";
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

inline std::string join(const std::vector<double>& items) {
  std::vector<std::string> s;
  for (double d : items) s.push_back(csv::format_double(d));
  return join(s);
}

}  // namespace scenario_detail

/// Origin of a trace-replay thread, kept so the scenario can be written back.
struct TraceSource {
  std::string path;    // as written in the file
  std::string thread;  // thread name inside the trace
};

/// A parsed scenario plus the file-level details needed to serialize it.
struct ScenarioFile {
  Scenario scenario;
  std::map<std::string, TraceSource> traces;  // by scenario thread name
};

inline std::string variant_name(const CovertChannelSpec& s) {
  switch (s.variant) {
    case CovertVariant::kBase: return "base";
    case CovertVariant::kRedundant: return "redundant(" + std::to_string(s.variant_param) + ")";
    case CovertVariant::kMultiset: return "multiset(" + std::to_string(s.variant_param) + ")";
  }
  return "base";
}

/// Parses "base", "redundant(k)" or "multiset(m)".
inline bool parse_variant(const std::string& text, CovertChannelSpec& spec) {
  if (text == "base") {
    spec.variant = CovertVariant::kBase;
    spec.variant_param = 1;
    return true;
  }
  for (auto [prefix, kind] : {std::pair{"redundant(", CovertVariant::kRedundant},
                              std::pair{"multiset(", CovertVariant::kMultiset}}) {
    const std::string p = prefix;
    if (text.rfind(p, 0) == 0 && text.back() == ')') {
      auto v = csv::parse_int(std::string_view(text).substr(p.size(), text.size() - p.size() - 1));
      if (!v || *v < 1) return false;
      spec.variant = kind;
      spec.variant_param = static_cast<int>(*v);
      return true;
    }
  }
  return false;
}

/// Parses a scenario document. Relative trace paths resolve against `base_dir`.
inline ScenarioFile parse_scenario(std::istream& in, const std::string& source,
                                   const std::filesystem::path& base_dir = {}) {
  using namespace scenario_detail;
  const auto sections = tokenize(in, source);
  auto section = [&](const std::string& name) -> const Section* {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  };
  for (const auto& s : sections) {
    static const std::set<std::string> known{"sched", "detector", "policy", "modes", "covert"};
    if (!known.count(s.name) && s.name.rfind("threads.", 0) != 0)
      throw ParseError(source, s.line, "unknown section [" + s.name + "]");
    if (s.name == "threads.") throw ParseError(source, s.line, "thread section needs a name");
  }
  for (const char* required : {"sched", "detector", "policy"})
    if (!section(required)) throw ParseError(source, 0, std::string("missing [") + required + "] section");

  ScenarioFile file;
  Scenario& sc = file.scenario;
  auto positive = [](double v) { return v > 0.0; };

  {
    Reader r(*section("sched"), source);
    std::int64_t latency = sc.sched.targeted_latency.count();
    r.opt_int("targeted_latency_us", latency, 1);
    sc.sched.targeted_latency = Micros(latency);
    r.opt_real("level_ratio", sc.sched.level_ratio, [](double v) { return v > 0.0 && v < 1.0; }, "in (0,1)");
    std::int64_t levels = sc.sched.num_levels, def = sc.sched.default_level;
    r.opt_int("num_levels", levels, 1);
    r.opt_int("default_level", def, 0);
    sc.sched.num_levels = static_cast<int>(levels);
    sc.sched.default_level = static_cast<int>(def);
    if (sc.sched.default_level >= sc.sched.num_levels) {
      const Entry* e = r.find("default_level");
      r.fail(e ? *e : r.require("num_levels"), "default_level must be < num_levels");
    }
    std::int64_t duration = sc.duration.count();
    r.opt_int("duration_us", duration, 1);
    sc.duration = Micros(duration);
    std::int64_t seed = static_cast<std::int64_t>(sc.seed);
    r.opt_int("seed", seed, 0);
    sc.seed = static_cast<std::uint64_t>(seed);
    r.finish();
  }
  {
    Reader r(*section("detector"), source);
    sc.leash.detector.events = r.list(r.require("events"));
    const Entry& th = r.require("thresholds");
    sc.leash.detector.thresholds = r.reals(th);
    if (sc.leash.detector.thresholds.size() != sc.leash.detector.events.size())
      r.fail(th, "expected one threshold per event");
    for (double t : sc.leash.detector.thresholds)
      if (!(t > 0.0)) r.fail(th, "thresholds must be > 0");
    std::int64_t n = static_cast<std::int64_t>(sc.leash.buffer_n);
    r.opt_int("buffer_n", n, 1);
    sc.leash.buffer_n = static_cast<std::size_t>(n);
    r.finish();
  }
  {
    Reader r(*section("policy"), source);
    std::string kind = "adaptive";
    if (const Entry* e = r.find("kind")) {
      if (e->value != "static" && e->value != "adaptive") r.fail(*e, "expected 'static' or 'adaptive'");
      kind = e->value;
    }
    double penalty = 1.0, reward = -1.0;
    r.opt_real("static_penalty", penalty, positive, "> 0");
    r.opt_real("static_reward", reward, [](double v) { return v < 0.0; }, "< 0");
    sc.leash.policy = SupervisorPolicy::make(
        kind == "static" ? SupervisorPolicy::Kind::kStatic : SupervisorPolicy::Kind::kAdaptive, penalty, reward);
    r.opt_real("actuator_gamma", sc.leash.actuator_gamma, [](double v) { return v > 0.0 && v < 1.0; }, "in (0,1)");
    r.finish();
  }
  if (const Section* s = section("modes")) {
    Reader r(*s, source);
    if (const Entry* e = r.find("leash")) sc.leash.enabled = r.boolean(*e);
    if (const Entry* e = r.find("strict_alg1")) sc.leash.detector.strict_alg1 = r.boolean(*e);
    if (const Entry* e = r.find("incremental_actuator"))
      sc.leash.actuator_mode = r.boolean(*e) ? ActuatorMode::kIncremental : ActuatorMode::kLiteral;
    r.finish();
  }

  const std::size_t width = sc.leash.detector.events.size();
  std::map<std::string, TraceTable> loaded;
  for (const auto& s : sections) {
    if (s.name.rfind("threads.", 0) != 0) continue;
    Reader r(s, source);
    ThreadSpec t;
    t.name = s.name.substr(std::string("threads.").size());
    BehaviorModel& b = t.behavior;
    b.kind = parse_kind(r, r.require("kind"));
    if (const Entry* e = r.find("seed")) {
      auto v = r.integer(*e);
      if (v < 0) r.fail(*e, "must be >= 0");
      b.seed = static_cast<std::uint64_t>(v);
    }
    if (const Entry* e = r.find("noise")) {
      if (e->value != "poisson" && e->value != "off") r.fail(*e, "expected 'poisson' or 'off'");
      b.poisson_noise = e->value == "poisson";
    }
    auto rates_of = [&](const Entry& e) {
      auto v = r.reals(e);
      if (v.size() != width) r.fail(e, "expected " + std::to_string(width) + " rates (one per event)");
      for (double x : v)
        if (x < 0.0) r.fail(e, "rates must be >= 0");
      return v;
    };
    if (b.kind == BehaviorKind::kTraceReplay) {
      const Entry& path_entry = r.require("trace");
      TraceSource src{path_entry.value, t.name};
      if (const Entry* e = r.find("trace_thread")) src.thread = e->value;
      if (const Entry* e = r.find("exhaustion")) {
        if (e->value != "repeat" && e->value != "terminate") r.fail(*e, "expected 'repeat' or 'terminate'");
        b.exhaustion = e->value == "repeat" ? Exhaustion::kRepeat : Exhaustion::kTerminate;
      }
      std::filesystem::path p(src.path);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      auto [it, fresh] = loaded.try_emplace(p.string());
      if (fresh) it->second = load_trace_csv(p.string());
      try {
        BehaviorModel replay = replay_trace(it->second, src.thread, sc.leash.detector.events, b.exhaustion);
        replay.seed = b.seed;
        replay.poisson_noise = b.poisson_noise;
        b = std::move(replay);
      } catch (const ConfigError& err) {
        r.fail(path_entry, err.what());
      }
      file.traces[t.name] = src;
    } else {
      b.rates = rates_of(r.require("rates"));
    }
    if (b.kind == BehaviorKind::kBursty) {
      b.burst.rates = rates_of(r.require("burst_rates"));
      const Entry& period = r.require("burst_period_switches");
      b.burst.period_switches = r.integer(period);
      if (b.burst.period_switches < 1) r.fail(period, "must be >= 1");
      r.opt_real("burst_duty", b.burst.duty, [](double v) { return v >= 0.0 && v <= 1.0; }, "in [0,1]");
      r.opt_int("burst_offset_switches", b.burst.offset_switches, 0);
      r.opt_int("bursts", b.burst.bursts, 0);
    }
    r.finish();
    sc.threads.push_back(std::move(t));
  }
  if (sc.threads.empty()) throw ParseError(source, 0, "scenario defines no [threads.<name>] section");

  if (const Section* s = section("covert")) {
    Reader r(*s, source);
    CovertSetup cs;
    cs.receiver = r.require("receiver").value;
    const Entry* msg = r.find("message");
    const Entry* bits = r.find("message_bits");
    if (msg && bits) r.fail(*bits, "give either message or message_bits, not both");
    if (msg) {
      cs.spec.message = msg->value;
      for (char c : cs.spec.message)
        if (c != '0' && c != '1') r.fail(*msg, "must be a bit string");
    } else if (bits) {
      auto v = r.integer(*bits);
      if (v < 1) r.fail(*bits, "must be >= 1");
      cs.spec.message = random_message(static_cast<std::size_t>(v), sc.seed);
    } else {
      r.require("message");
    }
    std::int64_t cost = cs.spec.probe_cost.count(), window = cs.spec.sync_window.count(),
                 period = sc.sched.targeted_latency.count(), rounds = cs.spec.rounds_per_bit;
    r.opt_int("probe_cost_us", cost, 1);
    r.opt_int("sync_window_us", window, 1);
    r.opt_int("rounds_per_bit", rounds, 1);
    r.opt_int("period_us", period, 1);
    cs.spec.probe_cost = Micros(cost);
    cs.spec.sync_window = Micros(window);
    cs.spec.rounds_per_bit = static_cast<int>(rounds);
    cs.spec.period = Micros(period);
    if (const Entry* e = r.find("variant"))
      if (!parse_variant(e->value, cs.spec)) r.fail(*e, "expected base, redundant(k) or multiset(m)");
    r.finish();
    sc.covert = cs;
  }

  try {
    sc.validate();
  } catch (const ConfigError& e) {
    throw ParseError(source, 0, e.what());
  }
  return file;
}

inline ScenarioFile load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open scenario file");
  return parse_scenario(in, path, std::filesystem::path(path).parent_path());
}

inline void write_scenario(std::ostream& os, const ScenarioFile& file) {
  using scenario_detail::join;
  const Scenario& sc = file.scenario;
  os << "[sched]\n"
     << "targeted_latency_us = " << sc.sched.targeted_latency.count() << '\n'
     << "level_ratio = " << csv::format_double(sc.sched.level_ratio) << '\n'
     << "num_levels = " << sc.sched.num_levels << '\n'
     << "default_level = " << sc.sched.default_level << '\n'
     << "duration_us = " << sc.duration.count() << '\n'
     << "seed = " << sc.seed << "\n\n";
  os << "[detector]\n"
     << "events = " << join(sc.leash.detector.events) << '\n'
     << "thresholds = " << join(sc.leash.detector.thresholds) << '\n'
     << "buffer_n = " << sc.leash.buffer_n << "\n\n";
  const auto& p = sc.leash.policy;
  os << "[policy]\n"
     << "kind = " << (p.kind() == SupervisorPolicy::Kind::kStatic ? "static" : "adaptive") << '\n'
     << "static_penalty = " << csv::format_double(p.static_penalty()) << '\n'
     << "static_reward = " << csv::format_double(p.static_reward()) << '\n'
     << "actuator_gamma = " << csv::format_double(sc.leash.actuator_gamma) << "\n\n";
  os << "[modes]\n"
     << "leash = " << (sc.leash.enabled ? "on" : "off") << '\n'
     << "strict_alg1 = " << (sc.leash.detector.strict_alg1 ? "true" : "false") << '\n'
     << "incremental_actuator = " << (sc.leash.actuator_mode == ActuatorMode::kIncremental ? "true" : "false")
     << "\n\n";
  if (sc.covert) {
    const auto& c = *sc.covert;
    os << "[covert]\n"
       << "receiver = " << c.receiver << '\n'
       << "message = " << c.spec.message << '\n'
       << "probe_cost_us = " << c.spec.probe_cost.count() << '\n'
       << "rounds_per_bit = " << c.spec.rounds_per_bit << '\n'
       << "sync_window_us = " << c.spec.sync_window.count() << '\n'
       << "period_us = " << c.spec.period.count() << '\n'
       << "variant = " << variant_name(c.spec) << "\n\n";
  }
  for (const auto& t : sc.threads) {
    const auto& b = t.behavior;
    os << "[threads." << t.name << "]\n"
       << "kind = " << scenario_detail::kind_name(b.kind) << '\n'
       << "seed = " << b.seed << '\n'
       << "noise = " << (b.poisson_noise ? "poisson" : "off") << '\n';
    if (b.kind == BehaviorKind::kTraceReplay) {
      const auto& src = file.traces.at(t.name);
      os << "trace = " << src.path << '\n'
         << "trace_thread = " << src.thread << '\n'
         << "exhaustion = " << (b.exhaustion == Exhaustion::kRepeat ? "repeat" : "terminate") << '\n';
    } else {
      os << "rates = " << join(b.rates) << '\n';
    }
    if (b.kind == BehaviorKind::kBursty) {
      os << "burst_rates = " << join(b.burst.rates) << '\n'
         << "burst_period_switches = " << b.burst.period_switches << '\n'
         << "burst_duty = " << csv::format_double(b.burst.duty) << '\n'
         << "burst_offset_switches = " << b.burst.offset_switches << '\n'
         << "bursts = " << b.burst.bursts << '\n';
    }
    os << '\n';
  }
}

}  // namespace leashsim
