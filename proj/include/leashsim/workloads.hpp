#pragma once

// Per-thread event-count emitters, including recorded-trace replay. The
// prime+probe covert-channel timing model lives at the bottom.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leashsim/csv.hpp"
#include "leashsim/errors.hpp"
#include "leashsim/leash_loop.hpp"
#include "leashsim/sched_core.hpp"

namespace leashsim {

enum class BehaviorKind { kSteady, kBursty, kAttackConstant, kTraceReplay, kCovertSender, kCovertReceiver };

enum class Exhaustion { kRepeat, kTerminate };

/// Burst schedule for `BehaviorKind::kBursty`, counted in context switches
/// of the thread: switch k is in a burst iff k >= offset and
/// (k - offset) mod period < duty * period, for at most `bursts` periods
/// (0 = unbounded).
struct BurstPattern {
  std::vector<double> rates;
  std::int64_t period_switches = 0;
  double duty = 0.5;
  std::int64_t offset_switches = 0;
  std::int64_t bursts = 0;

  bool active(std::int64_t switch_index) const {
    if (period_switches <= 0 || switch_index < offset_switches) return false;
    const std::int64_t rel = switch_index - offset_switches;
    if (bursts > 0 && rel / period_switches >= bursts) return false;
    const auto on = static_cast<std::int64_t>(std::llround(duty * static_cast<double>(period_switches)));
    return rel % period_switches < on;
  }
};

struct BehaviorModel {
  BehaviorKind kind = BehaviorKind::kSteady;
  /// Mean counts per millisecond of CPU time, one entry per monitored event.
  std::vector<double> rates;
  BurstPattern burst;
  std::vector<Counts> trace_rows;
  Exhaustion exhaustion = Exhaustion::kRepeat;
  bool poisson_noise = false;
  std::uint64_t seed = 0;

  // Emission state.
  Micros cpu_time{0};
  std::int64_t switches = 0;

  /// Trace replay in terminate mode has emitted its last row.
  bool finished() const {
    return kind == BehaviorKind::kTraceReplay && exhaustion == Exhaustion::kTerminate &&
           switches >= static_cast<std::int64_t>(trace_rows.size());
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// floor(rate * t_ms) differences telescope, so the emitted total only
// depends on the cumulative CPU time.
inline std::int64_t deterministic_count(double rate_per_ms, Micros before, Micros after) {
  const auto at = [rate_per_ms](Micros t) {
    return static_cast<std::int64_t>(std::floor(rate_per_ms * static_cast<double>(t.count()) / 1000.0));
  };
  return std::max<std::int64_t>(0, at(after) - at(before));
}

}  // namespace detail

/// Event counts for one slice of `cpu_time`; advances the model's state.
inline Counts emit_counts(BehaviorModel& model, Micros cpu_time) {
  if (cpu_time.count() <= 0) throw RangeError("emit_counts needs a positive cpu_time");
  const Micros before = model.cpu_time;
  const Micros after = before + cpu_time;
  const std::int64_t index = model.switches;
  model.cpu_time = after;
  ++model.switches;

  if (model.kind == BehaviorKind::kTraceReplay) {
    if (model.trace_rows.empty()) throw ConfigError("trace replay without rows");
    const auto n = static_cast<std::int64_t>(model.trace_rows.size());
    if (index >= n && model.exhaustion == Exhaustion::kTerminate)
      throw InvariantError("trace exhausted; thread should have terminated");
    return model.trace_rows[static_cast<std::size_t>(index % n)];
  }

  const std::vector<double>& rates =
      (model.kind == BehaviorKind::kBursty && model.burst.active(index)) ? model.burst.rates : model.rates;
  Counts out(rates.size(), 0);
  for (std::size_t e = 0; e < rates.size(); ++e) {
    if (model.poisson_noise) {
      const double mean = rates[e] * static_cast<double>(cpu_time.count()) / 1000.0;
      std::uint64_t key = detail::splitmix64(model.seed);
      key = detail::splitmix64(key ^ static_cast<std::uint64_t>(before.count()));
      key = detail::splitmix64(key ^ e);
      std::mt19937_64 rng(key);
      std::poisson_distribution<std::int64_t> dist(mean > 0 ? mean : 0.0);
      out[e] = mean > 0 ? dist(rng) : 0;
    } else {
      out[e] = detail::deterministic_count(rates[e], before, after);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recorded traces

/// Long-format per-switch event counts: `thread,switch_index,event,count`.
struct TraceTable {
  std::vector<std::string> events;
  /// Per thread, one count row per switch in switch_index order; columns
  /// follow `events`, absent (switch, event) pairs are zero.
  std::map<std::string, std::vector<Counts>> threads;

  std::size_t event_index(const std::string& name) const {
    auto it = std::find(events.begin(), events.end(), name);
    if (it == events.end()) throw ConfigError("trace has no event '" + name + "'");
    return static_cast<std::size_t>(it - events.begin());
  }
};

inline constexpr const char* kTraceHeader = "thread,switch_index,event,count";

inline TraceTable parse_trace_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "empty trace file");
  ++lineno;
  if (csv::trim(line) != kTraceHeader)
    throw ParseError(source, lineno, std::string("expected header '") + kTraceHeader + "'");

  // thread -> switch_index -> event -> count
  std::map<std::string, std::map<std::int64_t, std::map<std::size_t, std::int64_t>>> cells;
  TraceTable table;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 4) throw ParseError(source, lineno, "expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(source, lineno, "empty thread name");
    auto sw = csv::parse_int(f[1]);
    if (!sw || *sw < 0) throw ParseError(source, lineno, "switch_index '" + f[1] + "' is not a non-negative integer");
    if (f[2].empty()) throw ParseError(source, lineno, "empty event name");
    auto count = csv::parse_int(f[3]);
    if (!count) throw ParseError(source, lineno, "count '" + f[3] + "' is not an integer");
    if (*count < 0) throw ParseError(source, lineno, "count must be non-negative");

    auto ev = std::find(table.events.begin(), table.events.end(), f[2]);
    if (ev == table.events.end()) {
      table.events.push_back(f[2]);
      ev = table.events.end() - 1;
    }
    auto& slot = cells[f[0]][*sw];
    const auto e = static_cast<std::size_t>(ev - table.events.begin());
    if (!slot.emplace(e, *count).second)
      throw ParseError(source, lineno, "duplicate row for thread " + f[0] + " switch " + f[1] + " event " + f[2]);
  }
  for (const auto& [thread, switches] : cells) {
    auto& rows = table.threads[thread];
    for (const auto& [sw, evs] : switches) {
      Counts row(table.events.size(), 0);
      for (const auto& [e, c] : evs) row[e] = c;
      rows.push_back(std::move(row));
    }
  }
  return table;
}

inline TraceTable load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open trace file");
  return parse_trace_csv(in, path);
}

inline void write_trace_csv(std::ostream& os, const TraceTable& table) {
  os << kTraceHeader << '\n';
  for (const auto& [thread, rows] : table.threads)
    for (std::size_t sw = 0; sw < rows.size(); ++sw)
      for (std::size_t e = 0; e < table.events.size(); ++e)
        csv::write_row(os, {thread, std::to_string(sw), table.events[e], std::to_string(rows[sw][e])});
}

/// Replay model for one recorded thread, projected onto `events`.
inline BehaviorModel replay_trace(const TraceTable& trace, const std::string& thread,
                                  std::span<const std::string> events, Exhaustion exhaustion) {
  auto it = trace.threads.find(thread);
  if (it == trace.threads.end()) throw ConfigError("trace has no thread '" + thread + "'");
  std::vector<std::size_t> cols;
  for (const auto& ev : events) cols.push_back(trace.event_index(ev));

  BehaviorModel m;
  m.kind = BehaviorKind::kTraceReplay;
  m.exhaustion = exhaustion;
  for (const auto& row : it->second) {
    Counts projected;
    for (auto c : cols) projected.push_back(row[c]);
    m.trace_rows.push_back(std::move(projected));
  }
  if (m.trace_rows.empty()) throw ConfigError("trace for '" + thread + "' has no rows");
  return m;
}

// ---------------------------------------------------------------------------
// Covert channel

enum class CovertVariant { kBase, kRedundant, kMultiset };

/// Prime+probe channel in which the receiver needs `rounds_per_bit` probe
/// rounds of CPU time inside each synchronisation window to decode it.
struct CovertChannelSpec {
  std::string message = "10";
  Micros probe_cost{1000};
  int rounds_per_bit = 10;
  CovertVariant variant = CovertVariant::kBase;
  /// k for redundant(k), m for multiset(m); ignored for base.
  int variant_param = 1;
  Micros sync_window{50000};
  /// Scheduling period used when a fixed CPU share is imposed.
  Micros period{20000};

  void validate() const {
    if (message.empty()) throw ConfigError("covert message must be non-empty");
    for (char c : message)
      if (c != '0' && c != '1') throw ConfigError("covert message must be a bit string");
    if (probe_cost.count() <= 0) throw ConfigError("probe_cost must be > 0");
    if (rounds_per_bit < 1) throw ConfigError("rounds_per_bit must be >= 1");
    if (sync_window.count() <= 0) throw ConfigError("sync_window must be > 0");
    if (period.count() <= 0) throw ConfigError("period must be > 0");
    if (variant != CovertVariant::kBase && variant_param < 1) throw ConfigError("variant parameter must be >= 1");
  }

  std::size_t message_bits() const { return message.size(); }

  std::size_t windows_needed() const {
    const std::size_t bits = message_bits();
    switch (variant) {
      case CovertVariant::kBase:
        return bits;
      case CovertVariant::kRedundant:
        return bits * static_cast<std::size_t>(variant_param);
      case CovertVariant::kMultiset:
        return (bits + static_cast<std::size_t>(variant_param) - 1) / static_cast<std::size_t>(variant_param);
    }
    return bits;
  }

  /// CPU time of one probe round; multiset probes m set pairs per round.
  Micros round_cost() const {
    return variant == CovertVariant::kMultiset ? probe_cost * variant_param : probe_cost;
  }
};

struct CpuInterval {
  Micros begin;
  Micros end;
};

struct CovertResult {
  double bandwidth_bps = 0.0;
  double error_rate = 0.0;
  std::size_t bits_sent = 0;
  std::size_t bits_correct = 0;
};

/// Receiver CPU time that falls inside [lo, hi) for sorted, disjoint intervals.
inline Micros cpu_within(std::span<const CpuInterval> cpu, Micros lo, Micros hi) {
  auto first = std::lower_bound(cpu.begin(), cpu.end(), lo,
                                [](const CpuInterval& iv, Micros t) { return iv.end <= t; });
  Micros total{0};
  for (auto it = first; it != cpu.end() && it->begin < hi; ++it)
    total += std::min(it->end, hi) - std::max(it->begin, lo);
  return total;
}

/// Decodes the channel from the receiver's actual CPU intervals.
///
/// Window w spans [w * sync_window, (w+1) * sync_window). Probe rounds that
/// do not complete within their window are lost; a window succeeds iff it
/// holds at least rounds_per_bit complete rounds. Only logical bits whose
/// windows all end by `wall_time` count as transmitted.
inline CovertResult decode_covert(const CovertChannelSpec& spec, std::span<const CpuInterval> receiver_cpu,
                                  Micros wall_time) {
  spec.validate();
  const std::size_t capacity = static_cast<std::size_t>(wall_time / spec.sync_window);
  const std::size_t windows = std::min(spec.windows_needed(), capacity);
  std::vector<bool> ok(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    const Micros lo = spec.sync_window * static_cast<std::int64_t>(w);
    const Micros got = cpu_within(receiver_cpu, lo, lo + spec.sync_window);
    ok[w] = got / spec.round_cost() >= spec.rounds_per_bit;
  }

  CovertResult r;
  const std::size_t bits = spec.message_bits();
  switch (spec.variant) {
    case CovertVariant::kBase:
      r.bits_sent = windows;
      r.bits_correct = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), true));
      break;
    case CovertVariant::kRedundant: {
      const auto k = static_cast<std::size_t>(spec.variant_param);
      r.bits_sent = windows / k;
      for (std::size_t b = 0; b < r.bits_sent; ++b) {
        std::size_t good = 0;
        for (std::size_t j = 0; j < k; ++j) good += ok[b * k + j] ? 1 : 0;
        if (2 * good > k) ++r.bits_correct;  // majority of copies decoded
      }
      break;
    }
    case CovertVariant::kMultiset: {
      const auto m = static_cast<std::size_t>(spec.variant_param);
      for (std::size_t w = 0; w < windows; ++w) {
        const std::size_t carried = std::min(m, bits - w * m);
        r.bits_sent += carried;
        if (ok[w]) r.bits_correct += carried;
      }
      break;
    }
  }
  const double seconds = static_cast<double>(wall_time.count()) / 1e6;
  r.bandwidth_bps = seconds > 0 ? static_cast<double>(r.bits_correct) / seconds : 0.0;
  r.error_rate = r.bits_sent ? static_cast<double>(r.bits_sent - r.bits_correct) / static_cast<double>(r.bits_sent) : 0.0;
  return r;
}

/// CPU intervals of a receiver that runs the first share*period of every period.
inline std::vector<CpuInterval> periodic_share(double share, Micros period, Micros wall_time) {
  std::vector<CpuInterval> out;
  const auto run = Micros(std::llround(share * static_cast<double>(period.count())));
  if (run.count() <= 0) return out;
  for (Micros t{0}; t < wall_time; t += period) out.push_back({t, std::min(t + run, wall_time)});
  return out;
}

inline CovertResult covert_channel_run(const CovertChannelSpec& spec, double receiver_cpu_share, Micros wall_time) {
  spec.validate();
  if (!(receiver_cpu_share > 0.0) || receiver_cpu_share > 1.0)
    throw ConfigError("receiver CPU share must lie in (0,1]");
  if (wall_time < spec.sync_window * static_cast<std::int64_t>(spec.windows_needed()))
    throw ConfigError("wall_time shorter than the message needs");
  const auto cpu = periodic_share(receiver_cpu_share, spec.period, wall_time);
  return decode_covert(spec, cpu, wall_time);
}

/// Deterministic pseudo-random bit string.
inline std::string random_message(std::size_t bits, std::uint64_t seed) {
  std::string s(bits, '0');
  std::uint64_t x = seed;
  for (auto& c : s) {
    x = detail::splitmix64(x);
    c = (x & 1) ? '1' : '0';
  }
  return s;
}

}  // namespace leashsim
