#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "leashsim/sched_core.hpp"

using namespace leashsim;

namespace {

WeightMap weights_of(std::initializer_list<std::pair<std::uint32_t, double>> init) {
  WeightMap m;
  for (auto [id, w] : init) m[ThreadId{id}] = w;
  return m;
}

}  // namespace

TEST(WeightLadder, DefaultLevelIsExactlyOne) {
  SchedParams p;
  EXPECT_EQ(weight_at_level(p, 20), 1.0);
}

TEST(WeightLadder, EndsMatchDirectPowers) {
  SchedParams p;
  // Independent products rather than pow().
  double lo = 1.0, hi = 1.0;
  for (int i = 0; i < 19; ++i) lo *= 0.8;
  for (int i = 0; i < 20; ++i) hi /= 0.8;
  EXPECT_NEAR(weight_at_level(p, 39), lo, 1e-15);
  EXPECT_NEAR(weight_at_level(p, 0), hi, 1e-11);
  EXPECT_NEAR(weight_at_level(p, 39), 0.01441, 1e-5);
  EXPECT_NEAR(weight_at_level(p, 0), 86.736, 1e-3);
  EXPECT_DOUBLE_EQ(p.w_min(), weight_at_level(p, 39));
  EXPECT_DOUBLE_EQ(p.w_max(), weight_at_level(p, 0));
}

TEST(WeightLadder, OutOfRangeThrows) {
  SchedParams p;
  EXPECT_THROW(weight_at_level(p, -1), RangeError);
  EXPECT_THROW(weight_at_level(p, 40), RangeError);
}

TEST(WeightLadder, AdjacentLevelsDifferByRatio) {
  SchedParams p;
  for (int k = 0; k + 1 < p.num_levels; ++k)
    EXPECT_NEAR(weight_at_level(p, k + 1) / weight_at_level(p, k), 0.8, 1e-12);
}

TEST(SchedParams, ValidateRejectsBadValues) {
  SchedParams p;
  p.level_ratio = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.default_level = 40;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.targeted_latency = Micros{0};
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.num_levels = 100000;
  p.default_level = 50000;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(RelativeWeight, Symmetric) {
  RunQueue rq({ThreadId{0}, ThreadId{1}});
  auto w = weights_of({{0, 1.0}, {1, 1.0}});
  EXPECT_DOUBLE_EQ(relative_weight(rq, w, ThreadId{0}), 0.5);
  EXPECT_DOUBLE_EQ(relative_weight(rq, w, ThreadId{1}), 0.5);
}

TEST(RelativeWeight, Proportional) {
  RunQueue rq({ThreadId{0}, ThreadId{1}, ThreadId{2}});
  auto w = weights_of({{0, 1.0}, {1, 1.0}, {2, 2.0}});
  EXPECT_DOUBLE_EQ(relative_weight(rq, w, ThreadId{0}), 0.25);
  EXPECT_DOUBLE_EQ(relative_weight(rq, w, ThreadId{1}), 0.25);
  EXPECT_DOUBLE_EQ(relative_weight(rq, w, ThreadId{2}), 0.5);
}

TEST(RelativeWeight, FlaggedWithDummy) {
  RunQueue rq({ThreadId{0}});
  rq.set_dummy_awake(true);
  auto w = weights_of({{0, 0.5}});
  EXPECT_NEAR(relative_weight(rq, w, ThreadId{0}), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(relative_weight(rq, w, kDummyThread), 2.0 / 3.0, 1e-15);
}

TEST(RelativeWeight, NonMemberThrows) {
  RunQueue rq({ThreadId{0}});
  auto w = weights_of({{0, 1.0}, {1, 1.0}});
  EXPECT_THROW(relative_weight(rq, w, ThreadId{1}), MembershipError);
  EXPECT_THROW(relative_weight(rq, w, kDummyThread), MembershipError);
}

TEST(Timeslice, EqualSplit) {
  SchedParams p;
  RunQueue rq({ThreadId{0}, ThreadId{1}});
  auto w = weights_of({{0, 1.0}, {1, 1.0}});
  EXPECT_DOUBLE_EQ(timeslice(p, rq, w, ThreadId{0}).count(), 10000.0);
}

TEST(Timeslice, LoneUnflaggedThreadGetsWholeLatency) {
  SchedParams p;
  RunQueue rq = update_dummy(RunQueue({ThreadId{0}}), {{ThreadId{0}, false}});
  auto w = weights_of({{0, 1.0}});
  EXPECT_DOUBLE_EQ(timeslice(p, rq, w, ThreadId{0}).count(), 20000.0);
}

TEST(Timeslice, LoneFlaggedThreadSharesWithDummy) {
  SchedParams p;
  RunQueue rq = update_dummy(RunQueue({ThreadId{0}}), {{ThreadId{0}, true}});
  auto w = weights_of({{0, 0.1}});
  EXPECT_NEAR(timeslice(p, rq, w, ThreadId{0}).count(), 20000.0 * 0.1 / 1.1, 1e-9);
  EXPECT_EQ(static_cast<int>(timeslice(p, rq, w, ThreadId{0}).count()), 1818);
}

TEST(Timeslice, PropagatesMembershipError) {
  SchedParams p;
  RunQueue rq({ThreadId{0}});
  EXPECT_THROW(timeslice(p, rq, weights_of({{0, 1.0}}), ThreadId{3}), MembershipError);
}

TEST(UpdateDummy, Cases) {
  EXPECT_TRUE(update_dummy(RunQueue({ThreadId{0}}), {{ThreadId{0}, true}}).dummy_awake());
  EXPECT_FALSE(update_dummy(RunQueue({ThreadId{0}}), {{ThreadId{0}, false}}).dummy_awake());
  EXPECT_FALSE(
      update_dummy(RunQueue({ThreadId{0}, ThreadId{1}}), {{ThreadId{0}, true}, {ThreadId{1}, false}}).dummy_awake());
  EXPECT_FALSE(update_dummy(RunQueue(), {}).dummy_awake());
}

TEST(UpdateDummy, GoesBackToSleep) {
  RunQueue rq = update_dummy(RunQueue({ThreadId{0}}), {{ThreadId{0}, true}});
  ASSERT_TRUE(rq.dummy_awake());
  rq = update_dummy(std::move(rq), {{ThreadId{0}, false}});
  EXPECT_FALSE(rq.dummy_awake());
}

TEST(RunQueue, MembershipErrors) {
  RunQueue rq;
  rq.add(ThreadId{1});
  EXPECT_THROW(rq.add(ThreadId{1}), MembershipError);
  EXPECT_THROW(rq.remove(ThreadId{2}), MembershipError);
  EXPECT_THROW(rq.add(kDummyThread), MembershipError);
}

TEST(AllocatePeriod, SumsExactlyAndTracksExactShares) {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> count(1, 12);
  std::uniform_int_distribution<int> level(0, 39);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 500; ++trial) {
    SchedParams p;
    p.targeted_latency = Micros{1000 + trial * 97};
    RunQueue rq;
    WeightMap w;
    FlagMap flags;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      ThreadId id{static_cast<std::uint32_t>(i)};
      rq.add(id);
      w[id] = weight_at_level(p, level(rng));
      flags[id] = coin(rng);
    }
    rq = update_dummy(std::move(rq), flags);
    const auto slices = allocate_period(p, rq, w);
    std::int64_t total = 0;
    for (auto [t, len] : slices) {
      total += len.count();
      EXPECT_LE(std::abs(static_cast<double>(len.count()) - timeslice(p, rq, w, t).count()), 1.0);
    }
    EXPECT_EQ(total, p.targeted_latency.count());
    EXPECT_EQ(slices.size(), rq.size() + (rq.dummy_awake() ? 1 : 0));
  }
}
