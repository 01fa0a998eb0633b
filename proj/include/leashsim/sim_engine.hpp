#pragma once

// Deterministic single-CPU discrete-event engine. Each targeted-latency
// period is carved into proportional slices from the weights in force at
// its start; every slice expiry runs the context-switch hook.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "leashsim/csv.hpp"
#include "leashsim/errors.hpp"
#include "leashsim/leash_loop.hpp"
#include "leashsim/sched_core.hpp"
#include "leashsim/workloads.hpp"

namespace leashsim {

struct ThreadSpec {
  std::string name;
  BehaviorModel behavior;
};

struct CovertSetup {
  CovertChannelSpec spec;
  std::string receiver;
};

struct Scenario {
  SchedParams sched;
  LeashConfig leash;
  std::vector<ThreadSpec> threads;
  Micros duration{10'000'000};
  std::uint64_t seed = 1;
  std::optional<CovertSetup> covert;

  /// Throws ConfigError naming every offending key.
  void validate() const {
    std::vector<std::string> bad;
    auto check = [&](bool ok, const std::string& key) {
      if (!ok) bad.push_back(key);
    };
    check(sched.targeted_latency.count() > 0, "sched.targeted_latency_us");
    check(sched.level_ratio > 0.0 && sched.level_ratio < 1.0, "sched.level_ratio");
    check(sched.num_levels >= 1, "sched.num_levels");
    check(sched.default_level >= 0 && sched.default_level < sched.num_levels, "sched.default_level");
    check(sched.w_min() > 0.0 && std::isfinite(sched.w_max()), "sched.num_levels (weight range)");
    check(duration.count() > 0, "sched.duration_us");
    check(!leash.detector.events.empty(), "detector.events");
    check(leash.detector.thresholds.size() == leash.detector.events.size() &&
              std::all_of(leash.detector.thresholds.begin(), leash.detector.thresholds.end(),
                          [](double t) { return t > 0.0; }),
          "detector.thresholds");
    check(leash.buffer_n >= 1, "detector.buffer_n");
    check(leash.actuator_gamma > 0.0 && leash.actuator_gamma < 1.0, "policy.actuator_gamma");
    check(!threads.empty(), "threads");
    const std::size_t width = leash.detector.events.size();
    for (std::size_t i = 0; i < threads.size(); ++i) {
      const auto& t = threads[i];
      const std::string key = "threads." + t.name;
      check(!t.name.empty(), "threads[" + std::to_string(i) + "].name");
      for (std::size_t j = 0; j < i; ++j) check(threads[j].name != t.name, key + " (duplicate)");
      const auto& b = t.behavior;
      if (b.kind == BehaviorKind::kTraceReplay) {
        check(!b.trace_rows.empty(), key + ".trace");
        for (const auto& r : b.trace_rows) check(r.size() == width, key + ".trace");
      } else {
        check(b.rates.size() == width &&
                  std::all_of(b.rates.begin(), b.rates.end(), [](double r) { return r >= 0.0; }),
              key + ".rates");
      }
      if (b.kind == BehaviorKind::kBursty) {
        check(b.burst.rates.size() == width, key + ".burst_rates");
        check(b.burst.period_switches >= 1, key + ".burst_period_switches");
        check(b.burst.duty >= 0.0 && b.burst.duty <= 1.0, key + ".burst_duty");
      }
    }
    if (covert) {
      bool receiver_found = false;
      for (const auto& t : threads) receiver_found |= t.name == covert->receiver;
      check(receiver_found, "covert.receiver");
      try {
        covert->spec.validate();
      } catch (const ConfigError& e) {
        bad.push_back(std::string("covert (") + e.what() + ")");
      }
    }
    if (!bad.empty()) {
      std::string msg = "invalid scenario keys:";
      for (const auto& k : bad) msg += " " + k;
      throw ConfigError(msg);
    }
  }
};

struct EpochRecord {
  std::string thread;
  std::int64_t epoch_index = 0;
  std::vector<double> mu;
  double threat_index = 0.0;
  Weight weight = kDefaultWeight;
  bool flagged = false;
  double timeslice_us = 0.0;
  double cpu_share = 0.0;
  Micros vtime{0};
};

struct ThreadSummary {
  std::string name;
  BehaviorKind kind = BehaviorKind::kSteady;
  Micros cpu_time{0};
  double cpu_share = 0.0;
  std::int64_t epochs = 0;
  std::int64_t flagged_epochs = 0;
  Weight min_weight = kDefaultWeight;
  Weight final_weight = kDefaultWeight;
  std::optional<std::int64_t> first_flag_epoch;
  std::optional<std::int64_t> first_unflag_epoch;
  std::optional<std::int64_t> w_min_epoch;
  bool ever_unflagged_after_w_min = false;
};

/// CPU time actually executed per thread in one targeted-latency period.
struct PeriodRecord {
  Micros start{0};
  bool complete = true;
  std::vector<std::pair<ThreadId, Micros>> executed;
};

struct RunResult {
  std::vector<std::string> events;
  std::vector<EpochRecord> timeline;  // by thread name, then epoch
  std::vector<ThreadSummary> summary;  // by thread name
  std::vector<PeriodRecord> periods;
  std::optional<CovertResult> covert;
  Micros dummy_cpu{0};
  std::uint64_t detector_invocations = 0;
  std::uint64_t context_switches = 0;
  std::uint64_t sensor_logs = 0;
  std::uint64_t pending_samples = 0;

  const ThreadSummary& thread(const std::string& name) const {
    for (const auto& s : summary)
      if (s.name == name) return s;
    throw MembershipError("no thread named '" + name + "'");
  }

  std::vector<EpochRecord> epochs_of(const std::string& name) const {
    std::vector<EpochRecord> out;
    for (const auto& r : timeline)
      if (r.thread == name) out.push_back(r);
    return out;
  }
};

inline RunResult run(const Scenario& scenario) {
  scenario.validate();
  const SchedParams& sched = scenario.sched;
  LeashLoop loop(sched, scenario.leash);
  const auto w_min = loop.bounds().w_min;

  const std::size_t n = scenario.threads.size();
  std::vector<BehaviorModel> models;
  std::vector<ThreadSummary> summary(n);
  std::vector<std::vector<EpochRecord>> records(n);
  std::vector<Micros> epoch_start(n, Micros{0}), epoch_cpu(n, Micros{0});
  RunQueue rq;
  for (std::size_t i = 0; i < n; ++i) {
    const ThreadId id{static_cast<std::uint32_t>(i)};
    BehaviorModel m = scenario.threads[i].behavior;
    m.seed = detail::splitmix64(scenario.seed ^ detail::splitmix64(m.seed + i));
    models.push_back(std::move(m));
    summary[i].name = scenario.threads[i].name;
    summary[i].kind = models[i].kind;
    loop.add_thread(id);
    rq.add(id);
  }

  std::optional<std::size_t> receiver;
  if (scenario.covert)
    for (std::size_t i = 0; i < n; ++i)
      if (scenario.threads[i].name == scenario.covert->receiver) receiver = i;
  std::vector<CpuInterval> receiver_cpu;

  RunResult result;
  result.events = scenario.leash.detector.events;
  Micros now{0};
  while (now < scenario.duration && !rq.empty()) {
    const auto slices = allocate_period(sched, rq, loop.weights());
    PeriodRecord period{now, true, {}};
    for (std::size_t k = 0; k < slices.size(); ++k) {
      const ThreadId t = slices[k].first;
      Micros len = std::min(slices[k].second, scenario.duration - now);
      if (len < slices[k].second) period.complete = false;
      if (len.count() <= 0) continue;
      if (t != kDummyThread && !rq.contains(t)) continue;

      const Micros start = now;
      now += len;
      period.executed.emplace_back(t, len);
      Counts counts;
      if (t == kDummyThread) {
        result.dummy_cpu += len;
      } else {
        const std::size_t i = t.value;
        counts = emit_counts(models[i], len);
        summary[i].cpu_time += len;
        epoch_cpu[i] += len;
        if (receiver && *receiver == i) {
          if (!receiver_cpu.empty() && receiver_cpu.back().end == start)
            receiver_cpu.back().end = now;
          else
            receiver_cpu.push_back({start, now});
        }
      }

      ThreadId next = t;
      for (std::size_t j = k + 1; j < slices.size(); ++j)
        if (slices[j].second.count() > 0) {
          next = slices[j].first;
          break;
        }
      if (next == t && !rq.empty()) next = rq.members().front();
      ++result.context_switches;
      auto outcome = loop.on_context_switch(t, next, rq, counts, now);

      if (outcome) {
        const std::size_t i = t.value;
        EpochRecord rec;
        rec.thread = summary[i].name;
        rec.epoch_index = outcome->state.epoch_index;
        rec.mu = outcome->mu;
        rec.threat_index = outcome->state.threat_index;
        rec.weight = outcome->weight;
        rec.flagged = outcome->state.flagged;
        rec.timeslice_us = timeslice(sched, rq, loop.weights(), t).count();
        const Micros span = now - epoch_start[i];
        rec.cpu_share = span.count() > 0 ? static_cast<double>(epoch_cpu[i].count()) / span.count() : 0.0;
        rec.vtime = now;
        epoch_start[i] = now;
        epoch_cpu[i] = Micros{0};

        auto& s = summary[i];
        ++s.epochs;
        if (rec.flagged) ++s.flagged_epochs;
        if (outcome->flag_event && !s.first_flag_epoch) s.first_flag_epoch = rec.epoch_index;
        if (outcome->unflag_event && !s.first_unflag_epoch) s.first_unflag_epoch = rec.epoch_index;
        if (outcome->unflag_event && s.w_min_epoch) s.ever_unflagged_after_w_min = true;
        if (rec.weight <= w_min && !s.w_min_epoch) s.w_min_epoch = rec.epoch_index;
        s.min_weight = std::min(s.min_weight, rec.weight);
        records[i].push_back(std::move(rec));
      }
      if (t != kDummyThread && models[t.value].finished()) rq.remove(t);
    }
    result.periods.push_back(std::move(period));
  }

  for (std::size_t i = 0; i < n; ++i) {
    const ThreadId id{static_cast<std::uint32_t>(i)};
    summary[i].final_weight = loop.weight(id);
    summary[i].cpu_share =
        now.count() > 0 ? static_cast<double>(summary[i].cpu_time.count()) / static_cast<double>(now.count()) : 0.0;
  }
  if (receiver) result.covert = decode_covert(scenario.covert->spec, receiver_cpu, scenario.duration);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return summary[a].name < summary[b].name; });
  for (auto i : order) {
    for (auto& r : records[i]) result.timeline.push_back(std::move(r));
    result.summary.push_back(std::move(summary[i]));
  }
  result.detector_invocations = loop.detector_invocations();
  result.sensor_logs = loop.sensor_logs();
  result.pending_samples = loop.pending_samples();
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

struct NSweepRow {
  std::size_t n = 0;
  double bandwidth_bps = 0.0;
  double error_rate = 0.0;
  std::uint64_t detector_invocations = 0;
  std::uint64_t epoch_switches = 0;  // samples consumed by closed epochs

  /// Detector invocations per logged context switch.
  double detector_frequency() const {
    return epoch_switches ? static_cast<double>(detector_invocations) / static_cast<double>(epoch_switches) : 0.0;
  }
};

/// Reruns `base` once per buffer size. Runs are independent and execute
/// concurrently; rows come back in input order.
inline std::vector<NSweepRow> sweep_n(const Scenario& base, const std::vector<std::size_t>& values) {
  if (!base.covert) throw ConfigError("N sweep needs a [covert] section");
  for (auto v : values)
    if (v < 1) throw ConfigError("N values must be >= 1");
  std::vector<std::future<NSweepRow>> jobs;
  for (auto v : values) {
    Scenario sc = base;
    sc.leash.buffer_n = v;
    jobs.push_back(std::async(std::launch::async, [sc = std::move(sc), v] {
      const RunResult r = run(sc);
      NSweepRow row;
      row.n = v;
      row.bandwidth_bps = r.covert->bandwidth_bps;
      row.error_rate = r.covert->error_rate;
      row.detector_invocations = r.detector_invocations;
      row.epoch_switches = r.sensor_logs - r.pending_samples;
      return row;
    }));
  }
  std::vector<NSweepRow> rows;
  for (auto& j : jobs) rows.push_back(j.get());
  return rows;
}

struct ShareSweepRow {
  double share = 0.0;
  double bandwidth_bps = 0.0;
  double error_rate = 0.0;
};

inline std::vector<ShareSweepRow> sweep_share(const CovertChannelSpec& spec, const std::vector<double>& shares) {
  std::vector<ShareSweepRow> rows;
  if (shares.empty()) return rows;
  const Micros wall = spec.sync_window * static_cast<std::int64_t>(spec.windows_needed());
  for (double s : shares) {
    const auto r = covert_channel_run(spec, s, wall);
    rows.push_back({s, r.bandwidth_bps, r.error_rate});
  }
  return rows;
}

struct PolicyRow {
  std::string policy;
  std::int64_t flagged_epochs = 0;
  std::optional<std::int64_t> epochs_to_unflag;
  Weight min_weight = kDefaultWeight;
};

/// Epochs from the first flag to the first unflag of `s`; nullopt if it never unflags.
inline std::optional<std::int64_t> epochs_to_unflag(const ThreadSummary& s) {
  if (!s.first_flag_epoch || !s.first_unflag_epoch) return std::nullopt;
  return *s.first_unflag_epoch - *s.first_flag_epoch;
}

/// Runs `base` under the static and the adaptive supervisor and reports the
/// recovery of its first bursty thread.
inline std::vector<PolicyRow> compare_policies(const Scenario& base) {
  std::string target;
  for (const auto& t : base.threads)
    if (t.behavior.kind == BehaviorKind::kBursty) {
      target = t.name;
      break;
    }
  if (target.empty()) throw ConfigError("policy comparison needs a bursty thread");

  std::vector<PolicyRow> rows;
  for (auto [name, policy] : {std::pair{"static", SupervisorPolicy::fixed()},
                              std::pair{"adaptive", SupervisorPolicy::adaptive()}}) {
    Scenario s = base;
    s.leash.policy = policy;
    const RunResult r = run(s);
    const auto& th = r.thread(target);
    PolicyRow row;
    row.policy = name;
    row.flagged_epochs = th.flagged_epochs;
    row.epochs_to_unflag = th.flagged_epochs == 0 ? std::optional<std::int64_t>(0) : epochs_to_unflag(th);
    row.min_weight = th.min_weight;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kTimelineHeader = "epoch,thread,event,mu,threat_index,weight,flag,timeslice_us,cpu_share,vtime_us";
inline constexpr const char* kSummaryHeader =
    "thread,cpu_time_us,cpu_share,epochs,flagged_epochs,min_weight,final_weight,first_flag_epoch,"
    "first_unflag_epoch,w_min_epoch,bandwidth_bps,error_rate";

inline void write_timeline_csv(std::ostream& os, const RunResult& r) {
  os << kTimelineHeader << '\n';
  for (const auto& rec : r.timeline)
    for (std::size_t e = 0; e < r.events.size(); ++e)
      csv::write_row(os, {std::to_string(rec.epoch_index), rec.thread, r.events[e], csv::format_double(rec.mu[e]),
                          csv::format_double(rec.threat_index), csv::format_double(rec.weight),
                          rec.flagged ? "1" : "0", csv::format_fixed(rec.timeslice_us, 3),
                          csv::format_fixed(rec.cpu_share, 9), std::to_string(rec.vtime.count())});
}

inline void write_summary_csv(std::ostream& os, const RunResult& r, const std::optional<std::string>& receiver) {
  auto opt = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string{}; };
  os << kSummaryHeader << '\n';
  for (const auto& s : r.summary) {
    const bool is_receiver = r.covert && receiver && *receiver == s.name;
    csv::write_row(os, {s.name, std::to_string(s.cpu_time.count()), csv::format_fixed(s.cpu_share, 9),
                        std::to_string(s.epochs), std::to_string(s.flagged_epochs), csv::format_double(s.min_weight),
                        csv::format_double(s.final_weight), opt(s.first_flag_epoch), opt(s.first_unflag_epoch),
                        opt(s.w_min_epoch), is_receiver ? csv::format_fixed(r.covert->bandwidth_bps, 6) : "",
                        is_receiver ? csv::format_fixed(r.covert->error_rate, 6) : ""});
  }
}

inline void write_share_sweep_csv(std::ostream& os, const std::vector<ShareSweepRow>& rows) {
  os << "share,bandwidth_bps,error_rate\n";
  for (const auto& r : rows)
    csv::write_row(os, {csv::format_double(r.share), csv::format_fixed(r.bandwidth_bps, 6),
                        csv::format_fixed(r.error_rate, 6)});
}

inline void write_n_sweep_csv(std::ostream& os, const std::vector<NSweepRow>& rows) {
  os << "n,bandwidth_bps,error_rate,detector_invocations,epoch_switches,detector_per_switch\n";
  for (const auto& r : rows)
    csv::write_row(os, {std::to_string(r.n), csv::format_fixed(r.bandwidth_bps, 6), csv::format_fixed(r.error_rate, 6),
                        std::to_string(r.detector_invocations), std::to_string(r.epoch_switches),
                        csv::format_double(r.detector_frequency())});
}

inline void write_policy_csv(std::ostream& os, const std::vector<PolicyRow>& rows) {
  os << "policy,flagged_epochs,epochs_to_unflag,min_weight\n";
  for (const auto& r : rows)
    csv::write_row(os, {r.policy, std::to_string(r.flagged_epochs),
                        r.epochs_to_unflag ? std::to_string(*r.epochs_to_unflag) : "none",
                        csv::format_double(r.min_weight)});
}

}  // namespace leashsim
