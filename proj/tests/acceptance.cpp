// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"

using namespace leashsim;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

Scenario load(const std::string& name) { return load_scenario(fixtures::scenario_path(name)).scenario; }

std::string fmt(double v) { return csv::format_fixed(v, 4); }

std::string csv_of(const RunResult& r, const Scenario& sc) {
  std::ostringstream os;
  write_timeline_csv(os, r);
  write_summary_csv(os, r, sc.covert ? std::optional<std::string>(sc.covert->receiver) : std::nullopt);
  return os.str();
}

// Epoch at which a persistently violating thread first sits at w_MIN, by
// stepping flag -> escalating penalties -> literal weight update by hand.
std::int64_t hand_stepped_w_min_epoch(double gamma, double w_min, bool adaptive) {
  bool flagged = false;
  double w = 1.0, threat = 0.0, penalty = 0.0;
  for (std::int64_t epoch = 1; epoch < 10000; ++epoch) {
    if (!flagged) {
      flagged = true;
    } else {
      penalty = adaptive ? penalty + 1.0 : 1.0;
      threat += penalty;
      w = w * (1.0 - gamma * threat);
      if (w < w_min) w = w_min;
    }
    if (w <= w_min) return epoch;
  }
  return -1;
}

Outcome throttle_saturation() {
  Outcome o;
  const auto sc = load("covert_channel.ini");
  const auto r = run(sc);
  const auto& rx = r.thread("receiver");
  const double w_min = sc.sched.w_min();
  const double gamma = sc.leash.actuator_gamma;
  const auto bound = static_cast<std::int64_t>(std::ceil(std::log(w_min) / std::log(1.0 - gamma))) + 1;
  const auto expected = hand_stepped_w_min_epoch(gamma, w_min, true);
  o.require(rx.w_min_epoch.has_value(), "receiver reaches w_MIN");
  if (!rx.w_min_epoch) return o;
  o.require(*rx.w_min_epoch == expected, "w_MIN epoch equals hand-stepped value " + std::to_string(expected));
  o.require(*rx.w_min_epoch <= bound, "within bound " + std::to_string(bound));
  o.require(!rx.first_unflag_epoch, "never unflags");
  double frozen = std::nan("");
  bool saturated = true;
  for (const auto& rec : r.epochs_of("receiver")) {
    if (rec.epoch_index < *rx.w_min_epoch) continue;
    if (std::isnan(frozen)) frozen = rec.threat_index;
    saturated &= rec.threat_index == frozen && rec.weight == w_min && rec.flagged;
  }
  o.require(saturated, "threat index frozen at w_MIN");
  o.note("w_MIN at epoch " + std::to_string(*rx.w_min_epoch) + " (oracle " + std::to_string(expected) + ", bound " +
         std::to_string(bound) + "), T frozen at " + fmt(frozen));
  return o;
}

Outcome benign_recovery() {
  Outcome o;
  auto sc = load("benign_burst.ini");
  const auto on = run(sc);
  sc.leash.enabled = false;
  const auto off = run(sc);
  const auto& b = on.thread("bursty");
  o.require(b.first_flag_epoch.has_value(), "burst gets flagged");
  o.require(b.first_unflag_epoch.has_value(), "bursty thread unflags");
  o.require(b.final_weight == 1.0, "weight returns exactly to 1.0");
  if (!b.first_unflag_epoch) return o;
  const auto on_epochs = on.epochs_of("bursty");
  const auto off_epochs = off.epochs_of("bursty");
  double worst = 0.0;
  std::size_t compared = 0;
  for (const auto& rec : on_epochs) {
    if (rec.epoch_index <= *b.first_unflag_epoch) continue;
    for (const auto& ref : off_epochs)
      if (ref.epoch_index == rec.epoch_index) {
        worst = std::max(worst, std::abs(rec.cpu_share - ref.cpu_share));
        ++compared;
      }
  }
  o.require(compared > 10, "enough post-recovery epochs");
  o.require(worst <= 1e-9, "post-recovery share matches throttle-off run");
  o.note("flag@" + std::to_string(*b.first_flag_epoch) + " unflag@" + std::to_string(*b.first_unflag_epoch) +
         ", max share gap " + csv::format_double(worst) + " over " + std::to_string(compared) + " epochs");
  return o;
}

Outcome policy_comparison() {
  constexpr std::int64_t kGoldenDifference = 8;
  Outcome o;
  const auto rows = compare_policies(load("benign_burst.ini"));
  o.require(rows.size() == 2 && rows[0].epochs_to_unflag && rows[1].epochs_to_unflag, "both policies unflag");
  if (!o.pass) return o;
  const auto st = *rows[0].epochs_to_unflag, ad = *rows[1].epochs_to_unflag;
  o.require(ad < st, "adaptive faster than static");
  o.require(st - ad >= 1, "difference >= 1");
  o.require(st - ad == kGoldenDifference, "difference equals golden " + std::to_string(kGoldenDifference));
  o.note("static " + std::to_string(st) + ", adaptive " + std::to_string(ad) + " epochs to unflag");
  return o;
}

Outcome bandwidth_collapse() {
  Outcome o;
  auto sc = load("covert_channel.ini");
  const auto rows = sweep_share(sc.covert->spec, {1.0, 0.75, 0.5, 0.25, 0.1});
  std::string curve;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) {
      o.require(rows[i].bandwidth_bps <= rows[i - 1].bandwidth_bps, "bandwidth non-increasing");
      o.require(rows[i].error_rate >= rows[i - 1].error_rate, "error non-decreasing");
    }
    curve += (i ? " " : "") + fmt(rows[i].share) + ":" + fmt(rows[i].bandwidth_bps);
  }
  o.require(rows.back().bandwidth_bps < rows.front().bandwidth_bps, "sweep actually degrades");
  const auto on = run(sc);
  sc.leash.enabled = false;
  const auto off = run(sc);
  const double ratio = on.covert->bandwidth_bps / off.covert->bandwidth_bps;
  o.require(off.covert->bandwidth_bps > 0, "baseline channel works");
  o.require(ratio <= 0.10, "throttled bandwidth <= 10% of baseline");
  o.note("share sweep " + curve + "; end-to-end " + fmt(on.covert->bandwidth_bps) + "/" +
         fmt(off.covert->bandwidth_bps) + " bps = " + fmt(100 * ratio) + "%");
  return o;
}

Outcome n_tradeoff() {
  Outcome o;
  const std::vector<std::size_t> ns{8, 16, 32, 64, 128};
  const auto rows = sweep_n(load("covert_channel.ini"), ns);
  std::string curve;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    o.require(rows[i].detector_invocations * ns[i] == rows[i].epoch_switches, "frequency exactly 1/N");
    o.require(rows[i].detector_invocations > 0, "detector ran");
    if (i) o.require(rows[i].bandwidth_bps >= rows[i - 1].bandwidth_bps, "bandwidth non-decreasing in N");
    curve += (i ? " " : "") + std::to_string(ns[i]) + ":" + fmt(rows[i].bandwidth_bps);
  }
  o.note("bandwidth by N " + curve);
  return o;
}

Outcome variant_robustness() {
  Outcome o;
  auto base = load("covert_channel.ini");
  // Longer than the run can carry, so throughput rather than message length binds.
  base.covert->spec.message = random_message(2400, base.seed);
  const std::vector<std::pair<CovertVariant, int>> variants{
      {CovertVariant::kBase, 1}, {CovertVariant::kRedundant, 4}, {CovertVariant::kMultiset, 2}};
  std::vector<double> unthrottled;
  std::string detail;
  for (auto [v, k] : variants) {
    Scenario sc = base;
    sc.covert->spec.variant = v;
    sc.covert->spec.variant_param = k;
    const auto on = run(sc);
    const auto& rx = on.thread("receiver");
    const std::string name = variant_name(sc.covert->spec);
    o.require(rx.first_flag_epoch.has_value(), name + " flagged");
    o.require(rx.w_min_epoch.has_value() && !rx.first_unflag_epoch, name + " throttled to w_MIN");
    sc.leash.enabled = false;
    const auto off = run(sc);
    unthrottled.push_back(off.covert->bandwidth_bps);
    o.require(on.covert->bandwidth_bps < off.covert->bandwidth_bps, name + " bandwidth reduced");
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt(off.covert->bandwidth_bps) + "->" +
              fmt(on.covert->bandwidth_bps);
  }
  o.require(unthrottled[2] > unthrottled[0] && unthrottled[0] > unthrottled[1], "multiset > base > redundant");
  o.note(detail + " bps");
  return o;
}

Outcome event_selection() {
  Outcome o;
  const auto m = fixtures::score_corpus(fixtures::make_corpus());
  o.require(m.events.size() == 40 && m.attacks.size() == 7, "40x7 fixture");
  const auto sel = select_events(m, 4);
  const auto greedy = fixtures::coverage(m, sel.events);
  const auto best = fixtures::brute_force_cover(m, 4);
  o.require(sel.events.size() <= 4, "within budget");
  o.require(greedy == 7 && sel.uncovered.empty(), "all 7 attacks covered");
  o.require(greedy == best, "greedy matches brute-force optimum");
  std::vector<std::string> names;
  for (auto e : sel.events) names.push_back(m.events[e]);
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  o.require(sorted == std::vector<std::string>{"e11", "e12", "e2", "e39"}, "selects e2, e11, e12, e39");
  o.note("greedy picks " + scenario_detail::join(names) + " covering " + std::to_string(greedy) + "/7, optimum " +
         std::to_string(best));
  return o;
}

Outcome scheduler_correctness() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> size(1, 16), level(0, 39), latency(1000, 100000);
  std::bernoulli_distribution flag(0.4);
  int bad_sum = 0, bad_prop = 0, bad_dummy = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    SchedParams p;
    p.targeted_latency = Micros{latency(rng)};
    RunQueue rq;
    WeightMap w;
    FlagMap f;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) {
      const ThreadId id{static_cast<std::uint32_t>(i)};
      rq.add(id);
      w[id] = weight_at_level(p, level(rng));
      f[id] = flag(rng);
    }
    rq = update_dummy(std::move(rq), f);
    const bool want_dummy = n == 1 && f[ThreadId{0}];
    bad_dummy += rq.dummy_awake() != want_dummy;

    double total_w = 0, exact_sum = 0;
    for (const auto& [id, wt] : w) total_w += wt;
    if (want_dummy) total_w += 1.0;
    std::int64_t alloc_sum = 0;
    for (auto [t, len] : allocate_period(p, rq, w)) {
      const double wt = t == kDummyThread ? 1.0 : w[t];
      const double eq1 = static_cast<double>(p.targeted_latency.count()) * wt / total_w;
      const double ts = timeslice(p, rq, w, t).count();
      bad_prop += std::abs(ts - eq1) > 1e-9 * eq1 || std::abs(static_cast<double>(len.count()) - eq1) > 1.0;
      exact_sum += ts;
      alloc_sum += len.count();
    }
    bad_sum += alloc_sum != p.targeted_latency.count() ||
               std::abs(exact_sum - static_cast<double>(p.targeted_latency.count())) > 1.0;
  }
  o.require(bad_sum == 0, "conservation");
  o.require(bad_prop == 0, "proportionality");
  o.require(bad_dummy == 0, "dummy invariant");
  o.note("1000 runqueues: " + std::to_string(bad_sum) + " conservation, " + std::to_string(bad_prop) +
         " proportionality, " + std::to_string(bad_dummy) + " dummy violations");
  return o;
}

Outcome determinism() {
  Outcome o;
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(LEASHSIM_SCENARIO_DIR)) {
    const auto sc = load_scenario(entry.path().string()).scenario;
    o.require(csv_of(run(sc), sc) == csv_of(run(sc), sc), entry.path().filename().string() + " identical");
    ++n;
  }
  o.require(n >= 4, "scenario corpus present");
  o.note(std::to_string(n) + " scenarios byte-identical across reruns");
  return o;
}

Outcome neutrality() {
  Outcome o;
  std::vector<Scenario> cases{load("steady.ini")};
  std::mt19937_64 rng(10);
  // A lone thread runs 20ms slices; keep it under both thresholds then.
  std::uniform_real_distribution<double> rate(1.0, 20.0);
  std::uniform_int_distribution<int> threads(1, 5);
  for (int k = 0; k < 20; ++k) {
    Scenario sc = cases.front();
    sc.seed = rng();
    sc.duration = Micros{3'000'000};
    sc.threads.clear();
    const int n = threads(rng);
    for (int i = 0; i < n; ++i) {
      BehaviorModel m;
      m.poisson_noise = k % 2 == 0;
      for (std::size_t e = 0; e < sc.leash.detector.events.size(); ++e) m.rates.push_back(rate(rng));
      sc.threads.push_back({"t" + std::to_string(i), m});
    }
    cases.push_back(sc);
  }
  std::size_t threads_checked = 0;
  for (auto sc : cases) {
    sc.leash.enabled = true;
    const auto on = run(sc);
    sc.leash.enabled = false;
    const auto off = run(sc);
    for (const auto& s : on.summary) {
      o.require(s.flagged_epochs == 0, s.name + " never flagged");
      o.require(s.cpu_time == off.thread(s.name).cpu_time, s.name + " identical CPU time");
      ++threads_checked;
    }
    for (std::size_t i = 0; i < on.timeline.size(); ++i)
      o.require(on.timeline[i].cpu_share == off.timeline[i].cpu_share, "identical per-epoch share");
  }
  o.note(std::to_string(cases.size()) + " scenarios, " + std::to_string(threads_checked) +
         " threads, zero virtual-time overhead");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"throttle saturation", throttle_saturation},
      {"benign recovery", benign_recovery},
      {"policy comparison", policy_comparison},
      {"bandwidth collapse", bandwidth_collapse},
      {"buffer size trade-off", n_tradeoff},
      {"covert variant robustness", variant_robustness},
      {"event selection", event_selection},
      {"scheduler correctness", scheduler_correctness},
      {"determinism", determinism},
      {"neutrality", neutrality},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << " - " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
