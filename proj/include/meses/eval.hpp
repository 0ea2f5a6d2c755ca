#pragma once

// Ranking metrics for imbalanced labels, next-visit metrics, agent pooling
// and rank fusion. Ties follow fixed, documented rules (docs/formats.md).

#include <cstdint>
#include <vector>

#include "meses/objectives.hpp"

namespace meses {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mean over positives of the precision at their rank; ranking is a stable
/// sort by descending score, ties kept in input order. Needs a positive.
double average_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// P(score+ > score-) + P(tie)/2. Needs both classes.
double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Best F1 over thresholds "score >= s" at every distinct score.
double max_f1(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Highest sensitivity among thresholds whose specificity reaches `spec`,
/// rejecting everything included (sensitivity 0).
double sens_at_spec(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels, double spec = 0.9);

/// 1-based rank of item `target`: items scoring strictly higher, plus equal
/// scores at a lower index, plus one.
std::size_t target_rank(const std::vector<double>& scores, std::size_t target);
double hit_at_k(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& targets, std::size_t k);
double mrr(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& targets);

/// Mean probability mass within +-window hours of the true delta.
double t_pm60(const std::vector<Mixture>& mixtures, const std::vector<double>& deltas, double window = 1.0);

struct PooledSet {
  std::vector<std::uint32_t> groups;  // ascending
  std::vector<double> scores;         // max over the group's events
  std::vector<std::uint8_t> labels;   // any event labelled
};
PooledSet pool_agent_max(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                         const std::vector<std::uint32_t>& groups);

/// Normalized ranks in [0,1] (ascending by score, average rank on ties).
std::vector<double> normalized_ranks(const std::vector<double>& scores);
std::vector<double> rank_fuse(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace meses
