#pragma once

// Brute-force reference implementations used as test oracles. Deliberately
// naive: full scans, full sorts, exhaustive pair and threshold enumeration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "meses/schema.hpp"

namespace oracle {

/// Full scan of the partition rows, full sort by (distance, row).
inline std::vector<std::int64_t> peers(const std::vector<meses::EventRecord>& events,
                                       const std::vector<std::size_t>& rows, const meses::EventRecord& focal,
                                       std::size_t C, double min_overlap) {
  std::vector<std::pair<double, std::size_t>> cand;
  for (auto r : rows) {
    const auto& c = events[r];
    if (c.context_id != focal.context_id || c.entity_id == focal.entity_id) continue;
    if (min_overlap > 0.0) {
      const double fs = focal.t_start, fe = focal.t_start + focal.duration;
      const double cs = c.t_start, ce = c.t_start + c.duration;
      bool keep;
      if (focal.duration == 0.0) {
        keep = cs <= fs && fs <= ce;
      } else {
        const double inter = std::min(fe, ce) - std::max(fs, cs);
        keep = inter > 0.0 && inter / focal.duration >= min_overlap;
      }
      if (!keep) continue;
    }
    const double d = std::fabs(c.t_start - focal.t_start) +
                     std::fabs((c.t_start + c.duration) - (focal.t_start + focal.duration));
    cand.emplace_back(d, r);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<std::int64_t> out(C - 1, -1);
  for (std::size_t i = 0; i < cand.size() && i + 1 < C; ++i) out[i] = static_cast<std::int64_t>(cand[i].second);
  return out;
}

// ---- metrics ---------------------------------------------------------------

/// 1-based position under (score desc, index asc), by counting.
inline std::size_t position(const std::vector<double>& s, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
  return r;
}

inline double ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<std::size_t> pos(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) pos[i] = position(s, i);
  double sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++npos;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[j] && pos[j] <= pos[i]) ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(pos[i]);
  }
  return sum / static_cast<double>(npos);
}

inline double auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

struct Confusion {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion at_threshold(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double thr) {
  Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= thr;
    if (pred && y[i]) c.tp += 1;
    if (pred && !y[i]) c.fp += 1;
    if (!pred && y[i]) c.fn += 1;
    if (!pred && !y[i]) c.tn += 1;
  }
  return c;
}

inline double max_f1(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double best = 0.0;
  for (double thr : s) {
    const Confusion c = at_threshold(s, y, thr);
    if (c.tp == 0) continue;
    best = std::max(best, 2 * c.tp / (2 * c.tp + c.fp + c.fn));
  }
  return best;
}

inline double sens_at_spec(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double spec) {
  double best = 0.0;  // rejecting everything: specificity 1, sensitivity 0
  for (double thr : s) {
    const Confusion c = at_threshold(s, y, thr);
    if (c.tn / (c.tn + c.fp) >= spec) best = std::max(best, c.tp / (c.tp + c.fn));
  }
  return best;
}

/// Target rank from a full sort by (score desc, index asc).
inline std::size_t rank_by_sort(const std::vector<double>& s, std::size_t target) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s[a] != s[b] ? s[a] > s[b] : a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

/// Average 0-based ascending rank by counting, divided by n-1.
inline std::vector<double> norm_ranks(const std::vector<double>& s) {
  std::vector<double> out(s.size(), 0.0);
  if (s.size() < 2) return out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : s) {
      less += v < s[i];
      equal += v == s[i];
    }
    out[i] = (less + (equal - 1) / 2) / static_cast<double>(s.size() - 1);
  }
  return out;
}

}  // namespace oracle
