#pragma once

// The reactive mitigation loop, driven from the context-switch hook. A
// per-thread counter buffer feeds an epoch detector whose threat index
// sets the thread's scheduler weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leashsim/errors.hpp"
#include "leashsim/sched_core.hpp"

namespace leashsim {

using Counts = std::vector<std::int64_t>;

/// Per-thread log of event-count deltas, one row per context switch.
class HpcBuffer {
 public:
  HpcBuffer(std::size_t capacity, std::size_t width) : capacity_(capacity), width_(width) {
    if (capacity_ == 0) throw ConfigError("HPC buffer capacity must be >= 1");
    if (width_ == 0) throw ConfigError("HPC buffer width must be >= 1");
    samples_.reserve(capacity_ * width_);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t fill() const noexcept { return fill_; }
  bool full() const noexcept { return fill_ == capacity_; }

  std::span<const std::int64_t> sample(std::size_t i) const {
    if (i >= fill_) throw RangeError("sample index out of range");
    return {samples_.data() + i * width_, width_};
  }

  /// Per-event mean over the logged samples.
  std::vector<double> means() const {
    std::vector<double> mu(width_, 0.0);
    if (fill_ == 0) return mu;
    for (std::size_t i = 0; i < fill_; ++i)
      for (std::size_t e = 0; e < width_; ++e) mu[e] += static_cast<double>(samples_[i * width_ + e]);
    for (auto& m : mu) m /= static_cast<double>(fill_);
    return mu;
  }

  void reset() noexcept {
    samples_.clear();
    fill_ = 0;
  }

  friend bool sensor_log(HpcBuffer& buf, std::span<const std::int64_t> counts);

 private:
  std::size_t capacity_;
  std::size_t width_;
  std::size_t fill_ = 0;
  std::vector<std::int64_t> samples_;
};

/// Appends one context switch worth of counts. Returns true on the epoch
/// boundary, i.e. when the buffer has just become full.
inline bool sensor_log(HpcBuffer& buf, std::span<const std::int64_t> counts) {
  if (buf.full()) throw InvariantError("HPC buffer full but the detector has not run");
  if (counts.size() != buf.width_)
    throw RangeError("expected " + std::to_string(buf.width_) + " event counts, got " +
                     std::to_string(counts.size()));
  for (auto c : counts)
    if (c < 0) throw RangeError("event count deltas must be non-negative");
  buf.samples_.insert(buf.samples_.end(), counts.begin(), counts.end());
  ++buf.fill_;
  return buf.full();
}

struct ThreatState {
  double threat_index = 0.0;
  bool flagged = false;
  std::int64_t epoch_index = 0;
};

struct DetectorConfig {
  std::vector<std::string> events;
  std::vector<double> thresholds;
  /// Apply the printed unflag test (previous weight == w_DEF) without
  /// requiring the epoch to be a recovering one.
  bool strict_alg1 = false;

  void validate() const {
    if (events.empty()) throw ConfigError("detector needs at least one monitored event");
    if (thresholds.size() != events.size())
      throw ConfigError("detector has " + std::to_string(events.size()) + " events but " +
                        std::to_string(thresholds.size()) + " thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (!(thresholds[i] > 0.0)) throw ConfigError("threshold for " + events[i] + " must be > 0");
  }
};

/// Penalty/reward rule consulted once per epoch for flagged threads.
class SupervisorPolicy {
 public:
  enum class Kind { kStatic, kAdaptive };

  static SupervisorPolicy fixed(double penalty = 1.0, double reward = -1.0) {
    if (!(penalty > 0.0)) throw ConfigError("static penalty must be > 0");
    if (!(reward < 0.0)) throw ConfigError("static reward must be < 0");
    SupervisorPolicy p;
    p.kind_ = Kind::kStatic;
    p.static_penalty_ = penalty;
    p.static_reward_ = reward;
    return p;
  }

  static SupervisorPolicy adaptive() { return make(Kind::kAdaptive, 1.0, -1.0); }

  /// `penalty`/`reward` are the static constants; kept for either kind.
  static SupervisorPolicy make(Kind kind, double penalty, double reward) {
    SupervisorPolicy p = fixed(penalty, reward);
    p.kind_ = kind;
    return p;
  }

  Kind kind() const noexcept { return kind_; }
  double penalty_state() const noexcept { return penalty_; }
  double reward_state() const noexcept { return reward_; }
  double static_penalty() const noexcept { return static_penalty_; }
  double static_reward() const noexcept { return static_reward_; }

  // Adaptive penalties escalate +1 per violating epoch, rewards -1 per
  // recovering epoch; both start from zero after every reset.
  double step(bool flagged, bool exceeds) {
    if (!flagged) return 0.0;
    if (exceeds) {
      if (kind_ == Kind::kStatic) return static_penalty_;
      penalty_ += 1.0;
      return penalty_;
    }
    if (kind_ == Kind::kStatic) return static_reward_;
    reward_ -= 1.0;
    return reward_;
  }

  void reset() noexcept {
    penalty_ = 0.0;
    reward_ = 0.0;
  }

 private:
  SupervisorPolicy() = default;

  Kind kind_ = Kind::kStatic;
  double penalty_ = 0.0;
  double reward_ = 0.0;
  double static_penalty_ = 1.0;
  double static_reward_ = -1.0;
};

inline double supervisor_step(SupervisorPolicy& policy, bool flagged, bool mu_exceeds_tau) {
  return policy.step(flagged, mu_exceeds_tau);
}

struct WeightBounds {
  Weight w_min;
  Weight w_def;
  Weight w_max;

  static WeightBounds from(const SchedParams& p) { return {p.w_min(), p.w_def(), p.w_max()}; }
};

struct DetectorResult {
  ThreatState state;
  bool unflag_event = false;
  bool flag_event = false;
  bool exceeds = false;
  double control = 0.0;
  std::vector<double> mu;
};

/// True iff at least one event mean reaches its threshold.
inline bool any_exceeds(std::span<const double> mu, std::span<const double> tau) {
  for (std::size_t e = 0; e < mu.size(); ++e)
    if (mu[e] >= tau[e]) return true;
  return false;
}

/// One detector evaluation at the end of an epoch; consumes the full buffer.
///
/// A flagged thread accumulates the supervisor's control value into its
/// threat index. While it keeps violating at w_MIN the index saturates
/// instead. A recovering flagged thread whose weight is back at w_DEF is
/// unflagged with its index and policy state cleared. An unflagged thread
/// that violates becomes flagged with its index left at zero.
inline DetectorResult detector_step(ThreatState state, HpcBuffer& buf, const DetectorConfig& cfg,
                                    SupervisorPolicy& policy, Weight current_weight, const WeightBounds& bounds) {
  if (!buf.full()) throw InvariantError("detector invoked before the HPC buffer filled");
  if (buf.width() != cfg.thresholds.size()) throw ConfigError("buffer width does not match detector events");

  DetectorResult r;
  r.mu = buf.means();
  r.exceeds = any_exceeds(r.mu, cfg.thresholds);
  r.state = state;
  ++r.state.epoch_index;

  if (state.flagged) {
    const bool saturated = r.exceeds && current_weight <= bounds.w_min;
    if (!saturated) {
      r.control = supervisor_step(policy, true, r.exceeds);
      r.state.threat_index = state.threat_index + r.control;
    }
    const bool at_default = current_weight == bounds.w_def;
    if (at_default && (cfg.strict_alg1 || !r.exceeds)) {
      r.state.flagged = false;
      r.state.threat_index = 0.0;
      r.unflag_event = true;
      policy.reset();
    }
  } else {
    r.control = supervisor_step(policy, false, r.exceeds);
  }
  if (!r.state.flagged && r.exceeds) {
    r.state.flagged = true;
    r.flag_event = true;
  }
  buf.reset();
  return r;
}

enum class ActuatorMode {
  kLiteral,      // w_i = w_{i-1} * (1 - gamma * T_i)
  kIncremental,  // w_i = w_{i-1} * (1 - gamma)^(T_i - T_{i-1})
};

struct ActuatorInput {
  Weight weight;
  double threat_index;
  double previous_threat_index = 0.0;
  bool flagged = true;
  ActuatorMode mode = ActuatorMode::kLiteral;
};

/// Relative tolerance for reaching w_DEF when re-growing a weight.
inline constexpr double kDefaultSnapTolerance = 1e-9;

inline Weight actuator_apply(const ActuatorInput& in, double actuator_gamma, const WeightBounds& bounds) {
  if (!(actuator_gamma > 0.0 && actuator_gamma < 1.0)) throw ConfigError("actuator_gamma must lie in (0,1)");
  double raw = 0.0;
  if (in.mode == ActuatorMode::kLiteral) {
    raw = in.weight * (1.0 - actuator_gamma * in.threat_index);
  } else {
    raw = in.weight * std::pow(1.0 - actuator_gamma, in.threat_index - in.previous_threat_index);
  }
  // A flagged thread never holds more than the default weight; reaching it
  // lands exactly on w_DEF so the detector's equality test can fire.
  if (in.flagged && raw >= bounds.w_def * (1.0 - kDefaultSnapTolerance)) return bounds.w_def;
  if (!(raw >= bounds.w_min)) return bounds.w_min;  // also catches NaN
  return std::min(raw, bounds.w_max);
}

/// Convenience overload for the literal update.
inline Weight actuator_apply(Weight weight, double threat_index, double actuator_gamma, const WeightBounds& bounds) {
  return actuator_apply(ActuatorInput{weight, threat_index}, actuator_gamma, bounds);
}

struct LeashConfig {
  DetectorConfig detector;
  SupervisorPolicy policy = SupervisorPolicy::adaptive();
  double actuator_gamma = 0.1;
  std::size_t buffer_n = 32;
  ActuatorMode actuator_mode = ActuatorMode::kLiteral;
  bool enabled = true;

  void validate() const {
    detector.validate();
    if (!(actuator_gamma > 0.0 && actuator_gamma < 1.0)) throw ConfigError("actuator_gamma must lie in (0,1)");
    if (buffer_n < 1) throw ConfigError("buffer_n must be >= 1");
  }
};

/// Observation emitted at each epoch boundary of a thread.
struct EpochOutcome {
  ThreadId thread;
  ThreatState state;
  std::vector<double> mu;
  Weight weight = kDefaultWeight;
  double control = 0.0;
  bool flag_event = false;
  bool unflag_event = false;
};

/// Per-thread reactive loop state plus the context-switch hook.
class LeashLoop {
 public:
  LeashLoop(SchedParams sched, LeashConfig cfg) : sched_(sched), cfg_(std::move(cfg)) {
    sched_.validate();
    cfg_.validate();
    bounds_ = WeightBounds::from(sched_);
  }

  void add_thread(ThreadId t) {
    if (t == kDummyThread) throw MembershipError("dummy thread is not monitored");
    if (monitors_.count(t)) throw MembershipError("thread " + std::to_string(t.value) + " already monitored");
    monitors_.emplace(t, Monitor{HpcBuffer(cfg_.buffer_n, cfg_.detector.events.size()), {}, cfg_.policy,
                                 bounds_.w_def, Micros{0}});
    weights_[t] = bounds_.w_def;
  }

  const SchedParams& sched() const noexcept { return sched_; }
  const LeashConfig& config() const noexcept { return cfg_; }
  const WeightBounds& bounds() const noexcept { return bounds_; }

  const WeightMap& weights() const noexcept { return weights_; }
  Weight weight(ThreadId t) const { return monitor(t).weight; }
  const ThreatState& threat(ThreadId t) const { return monitor(t).threat; }
  const HpcBuffer& buffer(ThreadId t) const { return monitor(t).buffer; }
  const SupervisorPolicy& policy(ThreadId t) const { return monitor(t).policy; }
  Micros slice_start(ThreadId t) const { return monitor(t).slice_start; }

  FlagMap flags() const {
    FlagMap f;
    for (const auto& [t, m] : monitors_) f[t] = m.threat.flagged;
    return f;
  }

  std::uint64_t detector_invocations() const noexcept { return detector_calls_; }
  std::uint64_t sensor_logs() const noexcept { return sensor_logs_; }

  /// Samples sitting in buffers whose epoch has not closed yet.
  std::uint64_t pending_samples() const {
    std::uint64_t n = 0;
    for (const auto& [t, m] : monitors_) n += m.buffer.fill();
    return n;
  }

  /// Context-switch hook: dummy update, sensor log for `prev`, detector and
  /// actuator on an epoch boundary, then the slice start of `next`.
  /// `prev == next` models a slice expiry with nothing else to run.
  std::optional<EpochOutcome> on_context_switch(ThreadId prev, ThreadId next, RunQueue& rq,
                                                std::span<const std::int64_t> prev_counts, Micros clock) {
    rq = update_dummy(std::move(rq), cfg_.enabled ? flags() : FlagMap{});

    std::optional<EpochOutcome> out;
    if (prev != kDummyThread) {
      Monitor& m = monitor(prev);
      ++sensor_logs_;
      if (sensor_log(m.buffer, prev_counts)) out = close_epoch(prev, m);
    }
    if (next != kDummyThread) monitor(next).slice_start = clock;
    return out;
  }

 private:
  struct Monitor {
    HpcBuffer buffer;
    ThreatState threat;
    SupervisorPolicy policy;
    Weight weight;
    Micros slice_start;
  };

  Monitor& monitor(ThreadId t) {
    auto it = monitors_.find(t);
    if (it == monitors_.end()) throw MembershipError("thread " + std::to_string(t.value) + " not monitored");
    return it->second;
  }
  const Monitor& monitor(ThreadId t) const {
    auto it = monitors_.find(t);
    if (it == monitors_.end()) throw MembershipError("thread " + std::to_string(t.value) + " not monitored");
    return it->second;
  }

  EpochOutcome close_epoch(ThreadId t, Monitor& m) {
    ++detector_calls_;
    EpochOutcome o;
    o.thread = t;
    if (!cfg_.enabled) {
      o.mu = m.buffer.means();
      m.buffer.reset();
      ++m.threat.epoch_index;
      o.state = m.threat;
      o.weight = m.weight;
      return o;
    }
    const double previous_index = m.threat.threat_index;
    DetectorResult r = detector_step(m.threat, m.buffer, cfg_.detector, m.policy, m.weight, bounds_);
    if (r.unflag_event) {
      m.weight = bounds_.w_def;
    } else if (r.state.flagged) {
      m.weight = actuator_apply(
          ActuatorInput{m.weight, r.state.threat_index, previous_index, true, cfg_.actuator_mode},
          cfg_.actuator_gamma, bounds_);
    }
    m.threat = r.state;
    weights_[t] = m.weight;
    o.state = r.state;
    o.mu = std::move(r.mu);
    o.weight = m.weight;
    o.control = r.control;
    o.flag_event = r.flag_event;
    o.unflag_event = r.unflag_event;
    return o;
  }

  SchedParams sched_;
  LeashConfig cfg_;
  WeightBounds bounds_{};
  std::map<ThreadId, Monitor> monitors_;
  WeightMap weights_;
  std::uint64_t detector_calls_ = 0;
  std::uint64_t sensor_logs_ = 0;
};

}  // namespace leashsim
