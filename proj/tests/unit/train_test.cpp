#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "meses/synthgen.hpp"
#include "meses/train.hpp"
#include "support/fixtures.hpp"

using namespace meses;

TEST(CosineLr, Endpoints) {
  EXPECT_EQ(cosine_lr(0, 1000, 2e-4, 1e-6), 2e-4);
  EXPECT_EQ(cosine_lr(1000, 1000, 2e-4, 1e-6), 1e-6);
  EXPECT_NEAR(cosine_lr(500, 1000, 2e-4, 1e-6), (2e-4 + 1e-6) / 2, 1e-18);
  EXPECT_NEAR(cosine_lr(250, 1000, 1.0, 0.0), (1 + std::cos(std::numbers::pi / 4)) / 2, 1e-15);
  EXPECT_THROW(cosine_lr(1001, 1000, 2e-4, 1e-6), std::out_of_range);
}

namespace {

Parameter scalar_param(double value, double grad) {
  Parameter p("w", Tensor({1}, value));
  p.grad[0] = grad;
  return p;
}

}  // namespace

TEST(AdamW, ZeroGradientNoDecayIsIdentity) {
  auto p = scalar_param(0.7, 0.0);
  AdamW opt({&p});
  opt.step(0.1, 0.0, 1.0);
  EXPECT_EQ(p.value[0], 0.7);
}

TEST(AdamW, FirstStepMatchesHandValue) {
  // m1 = 0.1 g, v1 = 0.001 g^2; bias-corrected m = 1, v = 1:
  // update = lr * 1 / (sqrt(1) + eps)
  auto p = scalar_param(0.0, 1.0);
  AdamW opt({&p});
  const auto rep = opt.step(0.1, 0.0, 0.0);
  EXPECT_FALSE(rep.skipped);
  EXPECT_NEAR(p.value[0], -0.1 / (1.0 + 1e-8), 1e-10);
  EXPECT_NEAR(std::abs(p.value[0]), 0.1, 1e-8);
}

TEST(AdamW, DecoupledDecayShrinks) {
  auto p = scalar_param(2.0, 0.0);
  AdamW opt({&p});
  opt.step(0.1, 0.01, 1.0);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1 - 0.1 * 0.01));
}

TEST(AdamW, ClipsGlobalNorm) {
  Parameter a("a", Tensor({2}, 0.0)), b("b", Tensor({1}, 0.0));
  a.grad[0] = 3.0;
  a.grad[1] = 4.0;
  b.grad[0] = 12.0;
  AdamW opt({&a, &b});
  const auto rep = opt.step(0.1, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(rep.grad_norm, 13.0);
  EXPECT_TRUE(rep.clipped);
  EXPECT_LE(global_grad_norm({&a, &b}), 1.0 + 1e-9);
}

TEST(AdamW, NonFiniteGradientSkips) {
  auto p = scalar_param(1.5, std::nan(""));
  AdamW opt({&p});
  const auto rep = opt.step(0.1, 0.01, 1.0);
  EXPECT_TRUE(rep.skipped);
  EXPECT_EQ(p.value[0], 1.5);
  EXPECT_EQ(p.m[0], 0.0);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(EmaEarlyStop, DecreasingNeverStops) {
  EmaEarlyStop es(0.1, 3);
  for (int e = 0; e < 50; ++e) {
    es.update(10.0 - 0.1 * e);
    EXPECT_FALSE(es.should_stop());
  }
  EXPECT_EQ(es.best_epoch(), 50u);
}

TEST(EmaEarlyStop, ConstantStopsAfterEpochFour) {
  EmaEarlyStop es(0.1, 3);
  int stopped_at = 0;
  for (int e = 1; e <= 10 && !stopped_at; ++e) {
    es.update(1.0);
    if (es.should_stop()) stopped_at = e;
  }
  EXPECT_EQ(stopped_at, 4);
  EXPECT_EQ(es.best_epoch(), 1u);
}

TEST(EmaEarlyStop, Recurrence) {
  EmaEarlyStop es(0.1, 3);
  es.update(1.0);
  EXPECT_EQ(es.ema(), 1.0);
  es.update(0.5);
  EXPECT_DOUBLE_EQ(es.ema(), 0.1 * 0.5 + 0.9 * 1.0);
}

TEST(NextVisit, QueriesPerEntity) {
  std::vector<EventRecord> ev;
  for (std::uint32_t u = 0; u < 2; ++u)
    for (int k = 0; k < 3; ++k) ev.push_back({u, static_cast<std::uint32_t>(k + u), 10.0 * k, 0.0, false, 0});
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  const auto q = next_visit_queries(ev, rows, 2);
  ASSERT_EQ(q.targets.size(), 4u);
  EXPECT_EQ(q.targets[0], 1u);
  EXPECT_EQ(q.targets[1], 2u);
  EXPECT_EQ(q.targets[2], 2u);
  EXPECT_DOUBLE_EQ(q.deltas[0], 10.0);
  // window ends at the query event, padded at the suffix
  EXPECT_EQ(q.windows[0].n_real(), 1u);
  EXPECT_EQ(q.windows[1].n_real(), 2u);
  EXPECT_EQ(q.windows[1].rows[1], 1);
}

namespace {

struct Run {
  Generated gen;
  RunConfig cfg;
};

Run small_run(std::size_t epochs) {
  Run r;
  r.cfg = profile_config("desk");
  r.cfg.model = fixture::desk_model();
  r.cfg.train.max_epochs = epochs;
  r.cfg.finetune.max_epochs = epochs;
  r.cfg.gen.n_entities = 12;
  r.cfg.gen.n_contexts = 16;
  r.cfg.gen.hotspot_count = 2;
  r.cfg.gen.events_per_entity = 60;
  r.gen = generate(r.cfg.gen);
  return r;
}

std::vector<std::vector<double>> snapshot(const ParamRegistry& p, const std::string& prefix = "") {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].name.starts_with(prefix)) out.push_back(p[i].value.storage());
  return out;
}

Model make_model(const Run& r) {
  return Model(r.cfg.model, r.cfg.loss, r.gen.corpus.n_entities(), r.gen.corpus.substrate.size(),
               r.gen.corpus.substrate.n_activities, r.cfg.seed);
}

}  // namespace

TEST(Pretrain, ZeroEpochsKeepsInitialization) {
  auto r = small_run(0);
  Model m = make_model(r);
  const auto before = snapshot(m.params());
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  const auto res = pretrain(m, data, r.cfg, 1);
  EXPECT_TRUE(res.epochs.empty());
  EXPECT_EQ(snapshot(m.params()), before);
}

TEST(Pretrain, SameSeedSameParameters) {
  auto r = small_run(2);
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  Model a = make_model(r), b = make_model(r);
  const auto ra = pretrain(a, data, r.cfg, 5);
  const auto rb = pretrain(b, data, r.cfg, 5);
  EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
  ASSERT_EQ(ra.epochs.size(), 2u);
  EXPECT_EQ(ra.epochs[1].val_loss, rb.epochs[1].val_loss);
  EXPECT_NE(snapshot(a.params()), snapshot(make_model(r).params()));
}

TEST(Pretrain, PrefetchMatchesStrict) {
  auto r = small_run(2);
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  Model a = make_model(r), b = make_model(r);
  pretrain(a, data, r.cfg, 5);
  RunConfig loose = r.cfg;
  loose.train.strict = false;
  pretrain(b, data, loose, 5);
  EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
}

TEST(Finetune, ZeroEpochsKeepsBackbone) {
  auto r = small_run(0);
  Model m = make_model(r);
  const auto before = snapshot(m.params(), "bb.");
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  finetune(m, data, r.cfg, Task::anomaly, PerturbKind::swap, 1);
  EXPECT_NE(m.anomaly_head(), nullptr);
  EXPECT_EQ(snapshot(m.params(), "bb."), before);
}

TEST(Finetune, NeverReadsAnomalyLabels) {
  auto r = small_run(1);
  const CorpusSplit split = temporal_split(r.gen.corpus.events);
  Rng rng(3);
  Planted planted = plant_inserted_visits(r.gen.corpus.events, split.test, r.gen.corpus.substrate, r.gen.truth,
                                          0.05, 0.2, r.cfg.gen.hour_profile_spread, rng);
  Corpus corpus{r.gen.corpus.substrate, planted.events, AnomalyLabels(planted.labels)};
  const auto data = make_train_data(corpus.events, corpus.substrate, r.cfg.split);
  Model m = make_model(r);
  pretrain(m, data, r.cfg, 1);
  for (auto kind : {PerturbKind::structural, PerturbKind::swap}) finetune(m, data, r.cfg, Task::anomaly, kind, 2);
  finetune(m, data, r.cfg, Task::poi, PerturbKind::structural, 3);
  EXPECT_EQ(corpus.labels.access_count(), 0u);
}

TEST(Finetune, AnomalyLossDecreases) {
  auto r = small_run(3);
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  Model m = make_model(r);
  const auto res = finetune(m, data, r.cfg, Task::anomaly, PerturbKind::structural, 4);
  ASSERT_EQ(res.epochs.size(), 3u);
  EXPECT_LT(res.epochs.back().train_loss, res.epochs.front().train_loss);
}

TEST(Checkpoint, ModelRoundTripIsByteIdentical) {
  auto r = small_run(1);
  const auto data = make_train_data(r.gen.corpus.events, r.gen.corpus.substrate, r.cfg.split);
  Model m = make_model(r);
  finetune(m, data, r.cfg, Task::poi, PerturbKind::structural, 1);
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = (dir / "meses_rt1.ckpt").string(), p2 = (dir / "meses_rt2.ckpt").string();
  save_model(p1, m, model_manifest(m, r.cfg, "finetune", 1));
  RunConfig cfg;
  nlohmann::json manifest;
  auto back = load_model(p1, cfg, &manifest);
  EXPECT_EQ(cfg.hash(), r.cfg.hash());
  EXPECT_NE(back->poi_head(), nullptr);
  EXPECT_NE(back->time_head(), nullptr);
  save_model(p2, *back, manifest);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(p1), slurp(p2));
  EXPECT_EQ(snapshot(back->params()), snapshot(m.params()));

  auto bypass = load_model(p1, cfg, nullptr, {{"model.bypass_cooc", "true"}});
  EXPECT_TRUE(bypass->config().bypass_cooc);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
