#pragma once

// Event ranking (detectability of each attack per counter event) and the
// register-budgeted greedy cover that picks which events to monitor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "leashsim/csv.hpp"
#include "leashsim/errors.hpp"
#include "leashsim/leash_loop.hpp"

namespace leashsim {

/// Per-epoch mean vectors of one program, one column per candidate event.
struct EventTraceMatrix {
  std::string label;
  bool attack = false;
  std::vector<std::vector<double>> rows;

  std::size_t width() const { return rows.empty() ? 0 : rows.front().size(); }

  void validate() const {
    for (const auto& r : rows)
      if (r.size() != width()) throw ConfigError("ragged rows in trace matrix '" + label + "'");
  }
};

/// Groups consecutive switches into epochs of `epoch_n` and averages them.
/// A trailing partial epoch is dropped.
inline EventTraceMatrix epoch_matrix(const std::vector<Counts>& switches, std::size_t epoch_n, std::string label,
                                     bool attack = false) {
  if (epoch_n < 1) throw ConfigError("epoch size must be >= 1");
  EventTraceMatrix m{std::move(label), attack, {}};
  for (std::size_t start = 0; start + epoch_n <= switches.size(); start += epoch_n) {
    std::vector<double> mu(switches[start].size(), 0.0);
    for (std::size_t i = start; i < start + epoch_n; ++i) {
      if (switches[i].size() != mu.size()) throw ConfigError("ragged switch rows in '" + m.label + "'");
      for (std::size_t e = 0; e < mu.size(); ++e) mu[e] += static_cast<double>(switches[i][e]);
    }
    for (auto& v : mu) v /= static_cast<double>(epoch_n);
    m.rows.push_back(std::move(mu));
  }
  return m;
}

namespace stats {

/// Linear-interpolation quantile (the "type 7" definition).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw RangeError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }
inline double iqr(const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace stats

struct DetectabilityScore {
  std::size_t event = 0;
  std::string attack;
  double score = 0.0;
};

inline constexpr double kIqrFloor = 1e-9;

/// Separation of one event column between benign and attack samples, in [0,1].
///
/// Both samples are standardized against the benign mean and deviation. The
/// first principal axis of a single standardized column is the column
/// itself, so the projection is the z-score and the score reduces to
/// |median_a - median_b| / (|median_a - median_b| + IQR_b + IQR_a).
inline double separation_score(const std::vector<double>& benign, const std::vector<double>& attack) {
  if (benign.empty() || attack.empty()) throw RangeError("separation score needs non-empty samples");
  const double mu = stats::mean(benign);
  double sd = stats::stddev(benign);
  if (!(sd > 0.0)) sd = 1.0;
  auto standardize = [&](const std::vector<double>& v) {
    std::vector<double> z;
    z.reserve(v.size());
    for (double x : v) z.push_back((x - mu) / sd);
    return z;
  };
  const auto zb = standardize(benign);
  const auto za = standardize(attack);
  const double sep = std::abs(stats::median(za) - stats::median(zb));
  const double spread = std::max(stats::iqr(zb), kIqrFloor) + std::max(stats::iqr(za), kIqrFloor);
  return std::clamp(sep / (sep + spread), 0.0, 1.0);
}

/// Scores every event for one attack, best first (ties by event index).
inline std::vector<DetectabilityScore> rank_events(std::span<const EventTraceMatrix> benign,
                                                   const EventTraceMatrix& attack) {
  if (benign.size() < 2) throw ConfigError("ranking needs at least two benign programs");
  const std::size_t width = attack.width();
  if (width == 0) throw ConfigError("attack matrix '" + attack.label + "' has no epochs");
  attack.validate();
  for (const auto& b : benign) {
    b.validate();
    if (b.width() != width)
      throw ConfigError("benign matrix '" + b.label + "' has width " + std::to_string(b.width()) +
                        ", attack has " + std::to_string(width));
  }

  std::vector<DetectabilityScore> out;
  for (std::size_t e = 0; e < width; ++e) {
    std::vector<double> b, a;
    for (const auto& m : benign)
      for (const auto& r : m.rows) b.push_back(r[e]);
    for (const auto& r : attack.rows) a.push_back(r[e]);
    out.push_back({e, attack.label, separation_score(b, a)});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.event < y.event;
  });
  return out;
}

/// Event x attack score table (the heatmap).
struct ScoreMatrix {
  std::vector<std::string> events;
  std::vector<std::string> attacks;
  std::vector<std::vector<double>> scores;  // [event][attack]

  void validate() const {
    if (scores.size() != events.size()) throw ConfigError("score matrix row count differs from event count");
    for (const auto& r : scores)
      if (r.size() != attacks.size()) throw ConfigError("score matrix column count differs from attack count");
  }
};

inline ScoreMatrix score_matrix(std::span<const EventTraceMatrix> benign, std::span<const EventTraceMatrix> attacks,
                                std::vector<std::string> event_names) {
  ScoreMatrix m;
  m.events = std::move(event_names);
  m.scores.assign(m.events.size(), std::vector<double>(attacks.size(), 0.0));
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    m.attacks.push_back(attacks[a].label);
    if (attacks[a].width() != m.events.size())
      throw ConfigError("attack '" + attacks[a].label + "' width differs from event list");
    for (const auto& s : rank_events(benign, attacks[a])) m.scores[s.event][a] = s.score;
  }
  return m;
}

struct Selection {
  std::vector<std::size_t> events;                    // pick order
  std::vector<std::vector<std::size_t>> newly_covered;  // per pick
  std::vector<std::size_t> uncovered;                 // attack indices
};

/// Greedy cover of attacks by events under a register budget. Each step
/// takes the event covering the most still-uncovered attacks (score >=
/// min_score), preferring a higher summed score on those attacks, then the
/// lower event index.
inline Selection select_events(const ScoreMatrix& m, int num_registers, double min_score = 0.5) {
  if (num_registers < 1) throw ConfigError("num_registers must be >= 1");
  m.validate();
  std::vector<bool> covered(m.attacks.size(), false);
  std::vector<bool> used(m.events.size(), false);
  Selection sel;
  while (static_cast<int>(sel.events.size()) < num_registers) {
    std::size_t best = m.events.size();
    std::size_t best_count = 0;
    double best_total = -1.0;
    for (std::size_t e = 0; e < m.events.size(); ++e) {
      if (used[e]) continue;
      std::size_t count = 0;
      double total = 0.0;
      for (std::size_t a = 0; a < m.attacks.size(); ++a)
        if (!covered[a] && m.scores[e][a] >= min_score) {
          ++count;
          total += m.scores[e][a];
        }
      if (count == 0) continue;
      if (count > best_count || (count == best_count && total > best_total)) {
        best = e;
        best_count = count;
        best_total = total;
      }
    }
    if (best == m.events.size()) break;
    used[best] = true;
    std::vector<std::size_t> fresh;
    for (std::size_t a = 0; a < m.attacks.size(); ++a)
      if (!covered[a] && m.scores[best][a] >= min_score) {
        covered[a] = true;
        fresh.push_back(a);
      }
    sel.events.push_back(best);
    sel.newly_covered.push_back(std::move(fresh));
  }
  for (std::size_t a = 0; a < m.attacks.size(); ++a)
    if (!covered[a]) sel.uncovered.push_back(a);
  return sel;
}

/// Per-event threshold: mean + k * stddev of the pooled benign epoch means.
inline std::vector<double> calibrate_thresholds(std::span<const EventTraceMatrix> benign, double k = 3.0) {
  std::size_t width = 0;
  std::size_t epochs = 0;
  for (const auto& m : benign) {
    m.validate();
    if (m.rows.empty()) continue;
    if (width == 0) width = m.width();
    if (m.width() != width)
      throw ConfigError("trace '" + m.label + "' has " + std::to_string(m.width()) + " events, expected " +
                        std::to_string(width));
    epochs += m.rows.size();
  }
  if (epochs == 0) throw ConfigError("calibration corpus has no complete epochs");
  std::vector<double> tau;
  for (std::size_t e = 0; e < width; ++e) {
    std::vector<double> col;
    for (const auto& m : benign)
      for (const auto& r : m.rows) col.push_back(r[e]);
    tau.push_back(stats::mean(col) + k * stats::stddev(col));
  }
  return tau;
}

inline void write_heatmap_csv(std::ostream& os, const ScoreMatrix& m) {
  std::vector<std::string> header{"event"};
  header.insert(header.end(), m.attacks.begin(), m.attacks.end());
  csv::write_row(os, header);
  for (std::size_t e = 0; e < m.events.size(); ++e) {
    std::vector<std::string> row{m.events[e]};
    for (double s : m.scores[e]) row.push_back(csv::format_fixed(s, 9));
    csv::write_row(os, row);
  }
}

inline ScoreMatrix parse_heatmap_csv(std::istream& in, const std::string& source) {
  ScoreMatrix m;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "empty heatmap file");
  ++lineno;
  auto header = csv::split(line);
  if (header.size() < 2 || header[0] != "event") throw ParseError(source, lineno, "expected header 'event,<attacks>'");
  m.attacks.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (f.size() != header.size()) throw ParseError(source, lineno, "wrong number of fields");
    m.events.push_back(f[0]);
    std::vector<double> row;
    for (std::size_t i = 1; i < f.size(); ++i) {
      auto v = csv::parse_double(f[i]);
      if (!v || *v < 0.0 || *v > 1.0) throw ParseError(source, lineno, "score '" + f[i] + "' not in [0,1]");
      row.push_back(*v);
    }
    m.scores.push_back(std::move(row));
  }
  return m;
}

}  // namespace leashsim
