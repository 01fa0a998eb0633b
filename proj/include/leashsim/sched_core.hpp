#pragma once

// Fair-share scheduler model with proportional timeslices. A dummy thread
// keeps a lone flagged thread from owning the whole targeted latency.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "leashsim/errors.hpp"

namespace leashsim {

using Micros = std::chrono::microseconds;
using FracMicros = std::chrono::duration<double, std::micro>;

/// Scheduler weight, normalized so that the default weight is exactly 1.0.
using Weight = double;

inline constexpr Weight kDefaultWeight = 1.0;

struct ThreadId {
  std::uint32_t value = 0;

  friend constexpr auto operator<=>(ThreadId, ThreadId) = default;
};

/// Reserved id of the dummy thread. It never appears in a thread roster.
inline constexpr ThreadId kDummyThread{std::numeric_limits<std::uint32_t>::max()};

struct SchedParams {
  Micros targeted_latency{20000};
  double level_ratio = 0.8;
  int num_levels = 40;
  int default_level = 20;

  void validate() const {
    if (targeted_latency.count() <= 0) throw ConfigError("targeted_latency must be > 0");
    if (!(level_ratio > 0.0 && level_ratio < 1.0)) throw ConfigError("level_ratio must lie in (0,1)");
    if (num_levels < 1) throw ConfigError("num_levels must be >= 1");
    if (default_level < 0 || default_level >= num_levels)
      throw ConfigError("default_level must lie in [0, num_levels)");
    if (!(w_min() > 0.0) || !std::isfinite(w_max()))
      throw ConfigError("weight ladder under- or overflows; reduce num_levels or raise level_ratio");
  }

  // w_MIN = ratio^(levels below default) * w_DEF; w_MAX = w_DEF / ratio^(levels above).
  Weight w_min() const { return std::pow(level_ratio, num_levels - 1 - default_level); }
  Weight w_max() const { return std::pow(level_ratio, -default_level); }
  Weight w_def() const { return kDefaultWeight; }
};

/// Weight at ladder position `level`; level 0 is the w_MAX end.
inline Weight weight_at_level(const SchedParams& params, int level) {
  if (level < 0 || level >= params.num_levels)
    throw RangeError("weight level " + std::to_string(level) + " outside [0, " +
                     std::to_string(params.num_levels) + ")");
  if (level == params.default_level) return kDefaultWeight;
  return std::pow(params.level_ratio, level - params.default_level);
}

/// Runnable threads of a single CPU, in round-robin order.
class RunQueue {
 public:
  RunQueue() = default;
  explicit RunQueue(std::vector<ThreadId> members) {
    for (auto t : members) add(t);
  }

  void add(ThreadId t) {
    if (t == kDummyThread) throw MembershipError("dummy thread is managed through dummy_awake");
    if (contains(t)) throw MembershipError("thread " + std::to_string(t.value) + " already runnable");
    members_.push_back(t);
  }

  void remove(ThreadId t) {
    auto it = std::find(members_.begin(), members_.end(), t);
    if (it == members_.end()) throw MembershipError("thread " + std::to_string(t.value) + " not runnable");
    members_.erase(it);
  }

  bool contains(ThreadId t) const {
    if (t == kDummyThread) return dummy_awake_;
    return std::find(members_.begin(), members_.end(), t) != members_.end();
  }

  const std::vector<ThreadId>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }

  bool dummy_awake() const noexcept { return dummy_awake_; }
  void set_dummy_awake(bool awake) noexcept { dummy_awake_ = awake; }

 private:
  std::vector<ThreadId> members_;
  bool dummy_awake_ = false;
};

using WeightMap = std::map<ThreadId, Weight>;
using FlagMap = std::map<ThreadId, bool>;

namespace detail {

inline Weight lookup_weight(const WeightMap& weights, ThreadId t) {
  if (t == kDummyThread) return kDefaultWeight;
  auto it = weights.find(t);
  if (it == weights.end()) throw MembershipError("no weight recorded for thread " + std::to_string(t.value));
  return it->second;
}

inline Weight total_weight(const RunQueue& rq, const WeightMap& weights) {
  Weight sum = 0.0;
  for (auto m : rq.members()) sum += lookup_weight(weights, m);
  if (rq.dummy_awake()) sum += kDefaultWeight;
  return sum;
}

}  // namespace detail

/// Share s = w_t / sum of runnable weights (dummy included while awake).
inline double relative_weight(const RunQueue& rq, const WeightMap& weights, ThreadId t) {
  if (!rq.contains(t)) throw MembershipError("thread " + std::to_string(t.value) + " not in runqueue");
  return detail::lookup_weight(weights, t) / detail::total_weight(rq, weights);
}

inline FracMicros timeslice(const SchedParams& params, const RunQueue& rq, const WeightMap& weights,
                            ThreadId t) {
  return FracMicros(static_cast<double>(params.targeted_latency.count()) * relative_weight(rq, weights, t));
}

/// Wakes the dummy thread iff exactly one thread is runnable and it is flagged.
inline RunQueue update_dummy(RunQueue rq, const FlagMap& flags) {
  bool wake = false;
  if (rq.size() == 1) {
    auto it = flags.find(rq.members().front());
    wake = it != flags.end() && it->second;
  }
  rq.set_dummy_awake(wake);
  return rq;
}

/// Whole-microsecond timeslices for one targeted-latency period.
///
/// Each entry is floor(exact slice); the leftover microseconds go to the
/// largest fractional remainders (ties to runqueue order), so the slices
/// always sum to exactly the targeted latency. The dummy, when awake, is
/// appended last.
inline std::vector<std::pair<ThreadId, Micros>> allocate_period(const SchedParams& params, const RunQueue& rq,
                                                                const WeightMap& weights) {
  std::vector<ThreadId> order = rq.members();
  if (rq.dummy_awake()) order.push_back(kDummyThread);
  std::vector<std::pair<ThreadId, Micros>> out;
  if (order.empty()) return out;

  const Weight total = detail::total_weight(rq, weights);
  const auto latency = params.targeted_latency.count();
  std::vector<double> remainder;
  std::int64_t assigned = 0;
  for (auto t : order) {
    const double exact = static_cast<double>(latency) * detail::lookup_weight(weights, t) / total;
    auto whole = static_cast<std::int64_t>(std::floor(exact));
    whole = std::clamp<std::int64_t>(whole, 0, latency);
    out.emplace_back(t, Micros(whole));
    remainder.push_back(exact - static_cast<double>(whole));
    assigned += whole;
  }
  std::int64_t leftover = latency - assigned;
  std::vector<std::size_t> idx(order.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; leftover > 0; k = (k + 1) % idx.size(), --leftover) out[idx[k]].second += Micros(1);
  return out;
}

}  // namespace leashsim
