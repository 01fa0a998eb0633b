#pragma once

// Shared test fixtures: a synthetic 40-event / 7-attack counter corpus and
// helpers for the scenario files under scenarios/.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "leashsim/leashsim.hpp"

namespace fixtures {

using leashsim::Counts;

inline const std::vector<std::string> kAttacks{"Meltdown", "Rowhammer", "L1-I", "TLB", "L1-D CC", "AES", "LLC"};
inline constexpr std::size_t kEvents = 40;
inline constexpr std::size_t kEpochN = 8;
inline constexpr std::size_t kEpochsPerProgram = 64;

inline std::string event_name(std::size_t index) { return "e" + std::to_string(index + 1); }

/// Attack -> per-event mean shift in counts per switch. Strong shifts give
/// scores near 1; weak ones land between 0 and 1; absent events score 0.
inline std::map<std::string, std::map<std::size_t, double>> shifts() {
  std::map<std::string, std::map<std::size_t, double>> s;
  auto add = [&](std::size_t event_1based, std::vector<std::string> attacks, double shift) {
    for (const auto& a : attacks) s[a][event_1based - 1] = shift;
  };
  add(2, {"Meltdown", "Rowhammer"}, 500);
  add(11, {"L1-I", "TLB"}, 400);
  add(12, {"L1-D CC", "AES"}, 450);
  add(39, {"LLC", "Rowhammer"}, 600);
  // Decoys.
  add(5, {"Meltdown", "L1-I"}, 20);
  add(30, {"LLC"}, 18);
  add(17, {"AES"}, 6);
  add(23, {"Rowhammer", "TLB"}, 5);
  return s;
}

struct Corpus {
  std::vector<std::string> events;
  std::map<std::string, std::vector<Counts>> benign;   // program -> switch rows
  std::map<std::string, std::vector<Counts>> attacks;  // attack -> switch rows
};

/// Deterministic corpus. Each attack replays both benign programs back to
/// back with its shifted columns raised, so unaffected columns match the
/// pooled benign distribution exactly.
inline Corpus make_corpus(std::uint64_t seed = 2024) {
  Corpus c;
  for (std::size_t e = 0; e < kEvents; ++e) c.events.push_back(event_name(e));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(-20, 20);
  for (const char* program : {"bzip2", "mcf"}) {
    auto& rows = c.benign[program];
    for (std::size_t sw = 0; sw < kEpochN * kEpochsPerProgram; ++sw) {
      Counts row(kEvents);
      for (std::size_t e = 0; e < kEvents; ++e) row[e] = 100 + static_cast<std::int64_t>(e) + noise(rng);
      rows.push_back(std::move(row));
    }
  }
  const auto sh = shifts();
  for (const auto& a : kAttacks) {
    auto& rows = c.attacks[a];
    for (const auto& [program, brows] : c.benign)
      for (auto row : brows) {
        if (auto it = sh.find(a); it != sh.end())
          for (auto [e, d] : it->second) row[e] += static_cast<std::int64_t>(d);
        rows.push_back(std::move(row));
      }
  }
  return c;
}

inline std::vector<leashsim::EventTraceMatrix> benign_matrices(const Corpus& c) {
  std::vector<leashsim::EventTraceMatrix> out;
  for (const auto& [name, rows] : c.benign) out.push_back(leashsim::epoch_matrix(rows, kEpochN, name));
  return out;
}

inline std::vector<leashsim::EventTraceMatrix> attack_matrices(const Corpus& c) {
  std::vector<leashsim::EventTraceMatrix> out;
  for (const auto& a : kAttacks) out.push_back(leashsim::epoch_matrix(c.attacks.at(a), kEpochN, a, true));
  return out;
}

inline leashsim::ScoreMatrix score_corpus(const Corpus& c) {
  const auto b = benign_matrices(c);
  const auto a = attack_matrices(c);
  return leashsim::score_matrix(b, a, c.events);
}

inline leashsim::TraceTable as_trace(const std::vector<std::string>& events,
                                     const std::map<std::string, std::vector<Counts>>& threads) {
  leashsim::TraceTable t;
  t.events = events;
  t.threads = threads;
  return t;
}

/// Attacks covered by a set of events at `min_score`.
inline std::size_t coverage(const leashsim::ScoreMatrix& m, const std::vector<std::size_t>& events,
                            double min_score = 0.5) {
  std::size_t n = 0;
  for (std::size_t a = 0; a < m.attacks.size(); ++a) {
    bool hit = false;
    for (auto e : events) hit |= m.scores[e][a] >= min_score;
    n += hit;
  }
  return n;
}

/// Best coverage over every subset of at most `k` events with a nonzero score.
inline std::size_t brute_force_cover(const leashsim::ScoreMatrix& m, std::size_t k, double min_score = 0.5) {
  std::vector<std::size_t> live;
  for (std::size_t e = 0; e < m.events.size(); ++e)
    for (double s : m.scores[e])
      if (s > 0.0) {
        live.push_back(e);
        break;
      }
  std::size_t best = 0;
  std::vector<std::size_t> pick;
  auto rec = [&](auto&& self, std::size_t from) -> void {
    best = std::max(best, coverage(m, pick, min_score));
    if (pick.size() == k) return;
    for (std::size_t i = from; i < live.size(); ++i) {
      pick.push_back(live[i]);
      self(self, i + 1);
      pick.pop_back();
    }
  };
  rec(rec, 0);
  return best;
}

inline std::string scenario_path(const std::string& name) { return std::string(LEASHSIM_SCENARIO_DIR) + "/" + name; }

}  // namespace fixtures
