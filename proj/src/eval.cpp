#include "meses/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace meses {

namespace {

void check(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  if (s.size() != l.size()) throw MetricError("scores and labels differ in length");
}

std::size_t count_pos(const std::vector<std::uint8_t>& l) {
  return static_cast<std::size_t>(std::count_if(l.begin(), l.end(), [](auto v) { return v != 0; }));
}

std::vector<std::size_t> by_descending_score(const std::vector<double>& s) {
  std::vector<std::size_t> o(s.size());
  std::iota(o.begin(), o.end(), 0);
  std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return o;
}

/// (tp, fp) after each group of tied scores, in descending score order.
std::vector<std::pair<std::size_t, std::size_t>> threshold_counts(const std::vector<double>& s,
                                                                  const std::vector<std::uint8_t>& l) {
  const auto o = by_descending_score(s);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    (l[o[i]] ? tp : fp)++;
    if (i + 1 == o.size() || s[o[i + 1]] != s[o[i]]) out.emplace_back(tp, fp);
  }
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& scores);

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  check(scores, labels);
  const std::size_t P = count_pos(labels);
  if (P == 0) throw MetricError("average_precision: no positives");
  const auto o = by_descending_score(scores);
  double ap = 0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < o.size(); ++i)
    if (labels[o[i]]) ap += static_cast<double>(++tp) / static_cast<double>(i + 1);
  return ap / static_cast<double>(P);
}

double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  check(scores, labels);
  const std::size_t P = count_pos(labels), N = labels.size() - P;
  if (P == 0 || N == 0) throw MetricError("auroc: needs both classes");
  const auto r = average_ranks(scores);
  double sum = 0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (labels[i]) sum += r[i] + 1.0;
  const double p = static_cast<double>(P);
  return (sum - p * (p + 1) / 2) / (p * static_cast<double>(N));
}

double max_f1(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  check(scores, labels);
  const std::size_t P = count_pos(labels);
  if (P == 0) throw MetricError("max_f1: no positives");
  double best = 0;
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    const double f = 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + P);
    best = std::max(best, f);
  }
  return best;
}

double sens_at_spec(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels, double spec) {
  check(scores, labels);
  const std::size_t P = count_pos(labels), N = labels.size() - P;
  if (P == 0 || N == 0) throw MetricError("sens_at_spec: needs both classes");
  double best = 0;
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    const double sp = 1.0 - static_cast<double>(fp) / static_cast<double>(N);
    if (sp >= spec) best = std::max(best, static_cast<double>(tp) / static_cast<double>(P));
  }
  return best;
}

std::size_t target_rank(const std::vector<double>& scores, std::size_t target) {
  if (target >= scores.size()) throw MetricError("target_rank: target out of range");
  const double t = scores[target];
  std::size_t r = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > t || (scores[j] == t && j < target)) ++r;
  return r;
}

double hit_at_k(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& targets,
                std::size_t k) {
  if (scores.size() != targets.size() || scores.empty()) throw MetricError("hit_at_k: bad query set");
  double h = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) h += target_rank(scores[i], targets[i]) <= k;
  return h / static_cast<double>(scores.size());
}

double mrr(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& targets) {
  if (scores.size() != targets.size() || scores.empty()) throw MetricError("mrr: bad query set");
  double s = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += 1.0 / static_cast<double>(target_rank(scores[i], targets[i]));
  return s / static_cast<double>(scores.size());
}

double t_pm60(const std::vector<Mixture>& mixtures, const std::vector<double>& deltas, double window) {
  if (mixtures.size() != deltas.size() || mixtures.empty()) throw MetricError("t_pm60: bad query set");
  double s = 0;
  for (std::size_t i = 0; i < mixtures.size(); ++i) s += mixtures[i].mass_within(deltas[i], window);
  return s / static_cast<double>(mixtures.size());
}

PooledSet pool_agent_max(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                         const std::vector<std::uint32_t>& groups) {
  check(scores, labels);
  if (groups.size() != scores.size()) throw MetricError("pool_agent_max: group keys differ in length");
  std::map<std::uint32_t, std::pair<double, std::uint8_t>> acc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto [it, fresh] = acc.try_emplace(groups[i], scores[i], labels[i] != 0);
    if (!fresh) {
      it->second.first = std::max(it->second.first, scores[i]);
      it->second.second |= labels[i] != 0;
    }
  }
  PooledSet out;
  for (const auto& [g, v] : acc) {
    out.groups.push_back(g);
    out.scores.push_back(v.first);
    out.labels.push_back(v.second);
  }
  return out;
}

namespace {

/// 0-based ascending ranks, ties share their average rank.
std::vector<double> average_ranks(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> o(n);
  std::iota(o.begin(), o.end(), 0);
  std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> r(n, 0.0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[o[j]] == scores[o[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;  // 0-based
    for (std::size_t k = i; k < j; ++k) r[o[k]] = avg;
    i = j;
  }
  return r;
}

}  // namespace

std::vector<double> normalized_ranks(const std::vector<double>& scores) {
  auto r = average_ranks(scores);
  if (r.size() <= 1) return std::vector<double>(r.size(), 0.0);
  const double denom = static_cast<double>(r.size() - 1);
  for (auto& v : r) v /= denom;
  return r;
}

std::vector<double> rank_fuse(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("rank_fuse: score vectors differ in length");
  auto ra = normalized_ranks(a);
  const auto rb = normalized_ranks(b);
  for (std::size_t i = 0; i < ra.size(); ++i) ra[i] += rb[i];
  return ra;
}

}  // namespace meses
