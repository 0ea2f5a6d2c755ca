#include <gtest/gtest.h>

#include <cmath>

#include "meses/eval.hpp"
#include "meses/rng.hpp"
#include "support/oracles.hpp"

using namespace meses;
using Labels = std::vector<std::uint8_t>;

namespace {

// Scores drawn from a few levels so ties are common.
struct Instance {
  std::vector<double> s;
  Labels y;
};

Instance random_instance(Rng& rng, bool need_both = true) {
  Instance in;
  const std::size_t n = 2 + uniform_index(rng, 60);
  const std::size_t levels = 2 + uniform_index(rng, 12);
  for (std::size_t i = 0; i < n; ++i) {
    in.s.push_back(static_cast<double>(uniform_index(rng, levels)) / 3.0 - 1.0);
    in.y.push_back(bernoulli(rng, 0.3));
  }
  if (need_both) {
    in.y[0] = 1;
    in.y[1] = 0;
  }
  return in;
}

}  // namespace

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision({0.9, 0.8, 0.7}, {1, 1, 0}), 1.0);
  EXPECT_NEAR(average_precision({0.9, 0.8, 0.7}, {0, 1, 1}), (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(average_precision({0.1, 0.7, 0.3}, {1, 1, 1}), 1.0);
  EXPECT_THROW(average_precision({0.1, 0.2}, {0, 0}), MetricError);
  EXPECT_THROW(average_precision({0.1}, {0, 1}), MetricError);
}

TEST(AveragePrecision, TiesKeepInputOrder) {
  // Positive after a tied negative ranks second.
  EXPECT_DOUBLE_EQ(average_precision({0.5, 0.5}, {0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({0.5, 0.5}, {1, 0}), 1.0);
}

TEST(Auroc, Examples) {
  EXPECT_DOUBLE_EQ(auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auroc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}), 0.5);
  // pairs (p,n): (0.9,0.5) win, (0.9,0.2) win, (0.4,0.5) loss, (0.4,0.2) win
  EXPECT_DOUBLE_EQ(auroc({0.9, 0.5, 0.4, 0.2}, {1, 0, 1, 0}), 0.75);
  EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), MetricError);
}

TEST(MaxF1, Examples) {
  EXPECT_DOUBLE_EQ(max_f1({0.9, 0.8, 0.2}, {1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(max_f1({0.9, 0.8, 0.2}, {1, 1, 1}), 1.0);
  std::vector<double> s;
  Labels y(10, 0);
  for (int i = 0; i < 10; ++i) s.push_back(1.0 - 0.1 * i);
  y[9] = 1;
  // only threshold including the positive selects all 10: F1 = 2/(2+9)
  EXPECT_DOUBLE_EQ(max_f1(s, y), 2.0 / 11.0);
  EXPECT_DOUBLE_EQ(max_f1(s, y), oracle::max_f1(s, y));
}

TEST(SensAtSpec, Examples) {
  EXPECT_DOUBLE_EQ(sens_at_spec({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  // with 3 negatives, specificity 0.9 means no false positive at all
  EXPECT_DOUBLE_EQ(sens_at_spec({0.9, 0.5, 0.4, 0.3}, {0, 1, 1, 0}), 0.0);
  const std::vector<double> s{0.95, 0.9, 0.8, 0.7, 0.65, 0.6, 0.5, 0.4, 0.3, 0.1};
  const Labels y{1, 0, 1, 1, 0, 0, 1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(sens_at_spec(s, y), oracle::sens_at_spec(s, y, 0.9));
}

TEST(Ranking, Examples) {
  EXPECT_EQ(target_rank({0.1, 0.9, 0.5, 0.7, 0.8}, 2), 4u);
  EXPECT_DOUBLE_EQ(mrr({{0.1, 0.9, 0.5, 0.7, 0.8}}, {2}), 0.25);
  EXPECT_DOUBLE_EQ(hit_at_k({{0.1, 0.9}, {0.9, 0.1}}, {1, 0}, 10), 1.0);
  EXPECT_DOUBLE_EQ(mrr({{0.1, 0.9}, {0.9, 0.1}}, {1, 0}), 1.0);
  // equal scores break by item index
  EXPECT_EQ(target_rank({0.5, 0.5, 0.5}, 0), 1u);
  EXPECT_EQ(target_rank({0.5, 0.5, 0.5}, 2), 3u);
  EXPECT_DOUBLE_EQ(hit_at_k({{0.5, 0.5, 0.5}}, {2}, 2), 0.0);
}

TEST(Tpm60, Examples) {
  const Mixture unit{{1.0}, {3.0}, {1.0}};
  EXPECT_NEAR(t_pm60({unit}, {3.0}), std::erf(1.0 / std::sqrt(2.0)), 1e-12);
  const Mixture sharp{{1.0}, {3.0}, {1e-3}};
  EXPECT_NEAR(t_pm60({sharp}, {3.0}), 1.0, 1e-12);
  const Mixture far{{1.0}, {100.0}, {1.0}};
  EXPECT_LT(t_pm60({far}, {3.0}), 1e-12);
}

TEST(Pooling, Examples) {
  auto p = pool_agent_max({0.3, 0.7}, {0, 1}, {4, 2});
  EXPECT_EQ(p.groups, (std::vector<std::uint32_t>{2, 4}));
  EXPECT_EQ(p.scores, (std::vector<double>{0.7, 0.3}));
  EXPECT_EQ(p.labels, (Labels{1, 0}));
  p = pool_agent_max({0.1, 0.9, 0.4}, {1, 0, 0}, {5, 5, 6});
  EXPECT_EQ(p.scores, (std::vector<double>{0.9, 0.4}));
  EXPECT_EQ(p.labels, (Labels{1, 0}));
}

TEST(Pooling, HandCorpusAp) {
  // entities 0..3; entity 2 carries the only two positives
  const std::vector<double> s{0.2, 0.8, 0.1, 0.3, 0.9, 0.4, 0.95};
  const Labels y{0, 0, 0, 1, 1, 0, 0};
  const std::vector<std::uint32_t> g{0, 0, 1, 2, 2, 3, 3};
  const auto p = pool_agent_max(s, y, g);
  // pooled scores (0.8, 0.1, 0.9, 0.95), labels (0,0,1,0): positive ranks second
  EXPECT_DOUBLE_EQ(average_precision(p.scores, p.labels), 0.5);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_GE(p.scores[g[i]], s[i]);
}

TEST(RankFuse, Examples) {
  const std::vector<double> a{0.3, 0.1, 0.9, 0.5};
  auto f = rank_fuse(a, a);
  EXPECT_EQ(f, (std::vector<double>{2.0 / 3.0, 0.0, 2.0, 4.0 / 3.0}));
  const std::vector<double> up{1, 2, 3, 4}, down{4, 3, 2, 1};
  f = rank_fuse(up, down);
  for (double v : f) EXPECT_DOUBLE_EQ(v, 1.0);
  // a = (1, 1, 2, 0) -> ranks (1.5, 1.5, 3, 0)/3; b = (4, 3, 2, 1) -> (3, 2, 1, 0)/3
  f = rank_fuse({1, 1, 2, 0}, {4, 3, 2, 1});
  EXPECT_DOUBLE_EQ(f[0], 1.5);
  EXPECT_DOUBLE_EQ(f[1], 3.5 / 3.0);
  EXPECT_DOUBLE_EQ(f[2], 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(f[3], 0.0);
}

TEST(MetricOracles, RandomInstances) {
  Rng rng(11);
  for (int it = 0; it < 100; ++it) {
    const auto in = random_instance(rng);
    EXPECT_NEAR(average_precision(in.s, in.y), oracle::ap(in.s, in.y), 1e-12);
    EXPECT_NEAR(auroc(in.s, in.y), oracle::auroc(in.s, in.y), 1e-12);
    EXPECT_NEAR(max_f1(in.s, in.y), oracle::max_f1(in.s, in.y), 1e-12);
    EXPECT_NEAR(sens_at_spec(in.s, in.y, 0.9), oracle::sens_at_spec(in.s, in.y, 0.9), 1e-12);
    const auto nr = normalized_ranks(in.s);
    const auto onr = oracle::norm_ranks(in.s);
    for (std::size_t i = 0; i < nr.size(); ++i) EXPECT_NEAR(nr[i], onr[i], 1e-12);
    for (std::size_t t = 0; t < in.s.size(); ++t) EXPECT_EQ(target_rank(in.s, t), oracle::rank_by_sort(in.s, t));
  }
}

TEST(MetricOracles, MonotoneInvariance) {
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    const auto in = random_instance(rng);
    std::vector<double> t;
    for (double v : in.s) t.push_back(1.0 / (1.0 + std::exp(-3.0 * v)));
    EXPECT_DOUBLE_EQ(average_precision(in.s, in.y), average_precision(t, in.y));
    EXPECT_DOUBLE_EQ(auroc(in.s, in.y), auroc(t, in.y));
    EXPECT_DOUBLE_EQ(max_f1(in.s, in.y), max_f1(t, in.y));
    EXPECT_DOUBLE_EQ(sens_at_spec(in.s, in.y), sens_at_spec(t, in.y));
  }
}
