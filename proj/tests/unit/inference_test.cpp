#include <gtest/gtest.h>

#include "meses/inference.hpp"
#include "support/fixtures.hpp"

using namespace meses;

namespace {

struct Scored {
  fixture::DeskBatch db = fixture::desk_batch(4);
  Model model{fixture::desk_model(), LossConfig{}, 20, 16, 8, 2};
  std::vector<EventWindow> windows;

  Scored() {
    windows = chunk_windows(db.gen.corpus.events, 16);
    windows.resize(10);
  }
};

}  // namespace

TEST(Inference, OneRowPerRealEvent) {
  Scored s;
  const PeerSource peers{&s.db.index, &s.db.gen.corpus.events, 0.0};
  const auto out = run_windows(s.model, s.windows, peers, s.db.gen.corpus.substrate);
  std::size_t n = 0;
  for (const auto& w : s.windows) n += w.n_real();
  ASSERT_EQ(out.size(), n);
  EXPECT_EQ(out.noise_logit.size(), n);
  EXPECT_TRUE(out.anomaly_logit.empty());
  EXPECT_EQ(out.rows[0], s.windows[0].rows[0]);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(out.entity[i], s.db.gen.corpus.events[static_cast<std::size_t>(out.rows[i])].entity_id);
    EXPECT_EQ(out.label[i], 0);
    EXPECT_GE(out.proto_cos[i], -1.0 - 1e-12);
    EXPECT_LE(out.proto_cos[i], 1.0 + 1e-12);
  }
}

TEST(Inference, BatchSizeDoesNotChangeScores) {
  Scored s;
  s.model.add_task_head(Task::anomaly, 3, 1);
  const PeerSource peers{&s.db.index, &s.db.gen.corpus.events, 0.0};
  const auto a = run_windows(s.model, s.windows, peers, s.db.gen.corpus.substrate, 256);
  const auto b = run_windows(s.model, s.windows, peers, s.db.gen.corpus.substrate, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.noise_logit[i], b.noise_logit[i], 1e-12);
    EXPECT_NEAR(a.anomaly_logit[i], b.anomaly_logit[i], 1e-12);
    EXPECT_NEAR(a.proto_cos[i], b.proto_cos[i], 1e-12);
  }
}

TEST(Inference, IdentificationAccuracyCounts) {
  EventOutputs out;
  out.rows = {0, 1, 2, 3};
  out.entity = {0, 1, 2, 2};
  out.nearest_entity = {0, 2, 2, 1};
  EXPECT_DOUBLE_EQ(entity_identification_accuracy(out), 0.5);
}

TEST(Inference, NextVisitShapes) {
  Scored s;
  s.model.add_task_head(Task::poi, 3, 1);
  std::vector<std::size_t> rows(200);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto q = next_visit_queries(s.db.gen.corpus.events, rows, 16);
  const PeerSource peers{&s.db.index, &s.db.gen.corpus.events, 0.0};
  const auto nv = run_next_visit(s.model, q, peers, s.db.gen.corpus.substrate);
  ASSERT_EQ(nv.poi_scores.size(), q.targets.size());
  EXPECT_EQ(nv.poi_scores[0].size(), 16u);
  for (const auto& m : nv.mixtures) {
    double w = 0.0;
    for (double x : m.weight) w += x;
    EXPECT_NEAR(w, 1.0, 1e-12);
    for (double sc : m.scale) EXPECT_GE(sc, 1e-3);
  }
}
