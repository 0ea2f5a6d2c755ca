#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "meses/schema.hpp"
#include "meses/synthgen.hpp"

using namespace meses;

namespace {

std::string tmp(const std::string& name) { return ::testing::TempDir() + name; }

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const std::string& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

const char* kSubstrate =
    "{\"origin_iso\":\"2024-01-01T00:00:00Z\",\"n_activities\":2}\n"
    "{\"context_id\":1,\"coords\":[1.0,1.0],\"activity_label\":1}\n"
    "{\"context_id\":0,\"coords\":[0.0,0.5],\"activity_label\":0}\n";

std::vector<EventRecord> stream(std::uint32_t u, std::size_t n) {
  std::vector<EventRecord> out;
  for (std::size_t k = 0; k < n; ++k) {
    EventRecord e;
    e.entity_id = u;
    e.t_start = static_cast<double>(k);
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Schema, EmptyEventFileGivesEmptyCorpus) {
  write(tmp("s.jsonl"), kSubstrate);
  write(tmp("e0.jsonl"), "");
  auto c = load_corpus(tmp("e0.jsonl"), tmp("s.jsonl"));
  EXPECT_TRUE(c.events.empty());
  EXPECT_EQ(c.substrate.size(), 2u);
  EXPECT_EQ(c.substrate.aoi.lo[1], 0.5);
  EXPECT_EQ(c.substrate.aoi.hi[0], 1.0);
}

TEST(Schema, OutOfOrderEventsAreSorted) {
  write(tmp("s.jsonl"), kSubstrate);
  write(tmp("e1.jsonl"),
        "{\"entity_id\":0,\"context_id\":1,\"t_start\":5.0,\"duration\":null,\"activity\":1}\n"
        "{\"entity_id\":0,\"context_id\":0,\"t_start\":1.0,\"duration\":2.0,\"activity\":0}\n"
        "{\"entity_id\":0,\"context_id\":1,\"t_start\":3.0,\"activity\":1}\n");
  auto c = load_corpus(tmp("e1.jsonl"), tmp("s.jsonl"));
  ASSERT_EQ(c.events.size(), 3u);
  EXPECT_EQ(c.events[0].t_start, 1.0);
  EXPECT_EQ(c.events[1].t_start, 3.0);
  EXPECT_EQ(c.events[2].t_start, 5.0);
  EXPECT_TRUE(c.events[0].has_duration);
  EXPECT_FALSE(c.events[2].has_duration);
}

TEST(Schema, DanglingContextIsRejectedWithLineNumber) {
  write(tmp("s.jsonl"), kSubstrate);
  write(tmp("e2.jsonl"),
        "{\"entity_id\":0,\"context_id\":0,\"t_start\":1.0,\"activity\":0}\n"
        "{\"entity_id\":0,\"context_id\":9,\"t_start\":2.0,\"activity\":0}\n");
  try {
    load_corpus(tmp("e2.jsonl"), tmp("s.jsonl"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("dangling"), std::string::npos);
  }
}

TEST(Schema, MalformedLineAndNegativeDurationAreRejected) {
  write(tmp("s.jsonl"), kSubstrate);
  write(tmp("e3.jsonl"), "{\"entity_id\":0,\"context_id\":0,\n");
  EXPECT_THROW(load_corpus(tmp("e3.jsonl"), tmp("s.jsonl")), DataError);
  write(tmp("e4.jsonl"), "{\"entity_id\":0,\"context_id\":0,\"t_start\":1.0,\"duration\":-1,\"activity\":0}\n");
  EXPECT_THROW(load_corpus(tmp("e4.jsonl"), tmp("s.jsonl")), DataError);
}

TEST(Schema, SerializationRoundTripIsCanonical) {
  GenConfig cfg;
  cfg.n_entities = 5;
  cfg.events_per_entity = 30;
  auto g = generate(cfg);
  save_substrate(tmp("rs.jsonl"), g.corpus.substrate);
  save_events(tmp("re.jsonl"), g.corpus);
  auto c = load_corpus(tmp("re.jsonl"), tmp("rs.jsonl"));
  EXPECT_EQ(c.events, g.corpus.events);
  save_substrate(tmp("rs2.jsonl"), c.substrate);
  save_events(tmp("re2.jsonl"), c);
  EXPECT_EQ(slurp(tmp("rs.jsonl")), slurp(tmp("rs2.jsonl")));
  EXPECT_EQ(slurp(tmp("re.jsonl")), slurp(tmp("re2.jsonl")));
}

TEST(Windows, PartitionArithmetic) {
  auto ev = stream(0, 70);
  auto w = chunk_windows(ev, 32);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].n_real(), 32u);
  EXPECT_EQ(w[1].n_real(), 32u);
  EXPECT_EQ(w[2].n_real(), 6u);
  for (std::size_t k = 6; k < 32; ++k) EXPECT_EQ(w[2].pad[k], 1);
  EXPECT_EQ(w[2].rows[5], 69);

  EXPECT_EQ(chunk_windows(stream(0, 32), 32).size(), 1u);
  EXPECT_EQ(chunk_windows(stream(0, 32), 32)[0].n_real(), 32u);
  auto small = chunk_windows(stream(0, 5), 32);
  ASSERT_EQ(small.size(), 1u);
  EXPECT_EQ(32 - small[0].n_real(), 27u);
  EXPECT_THROW(chunk_windows(ev, 0), std::invalid_argument);
}

TEST(Windows, NonPadSlotsCoverEveryEvent) {
  GenConfig cfg;
  cfg.n_entities = 7;
  cfg.events_per_entity = 45;
  auto g = generate(cfg);
  auto w = chunk_windows(g.corpus.events, 16);
  std::vector<int> seen(g.corpus.events.size(), 0);
  for (const auto& win : w)
    for (std::size_t k = 0; k < win.length(); ++k)
      if (!win.pad[k]) {
        ++seen[static_cast<std::size_t>(win.rows[k])];
        EXPECT_EQ(win.entity_id, win.events[k].entity_id);
        if (k > 0) EXPECT_LE(win.events[k - 1].t_start, win.events[k].t_start);
      }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Split, TenEventStream) {
  auto s = temporal_split(stream(0, 10));
  EXPECT_EQ(s.train.size(), 9u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.train_proper.size(), 7u);
  EXPECT_EQ(s.test, std::vector<std::size_t>{9});
  EXPECT_EQ(s.val, (std::vector<std::size_t>{0, 1}));
}

TEST(Split, EqualTimestampsSplitByInputOrder) {
  auto ev = stream(0, 10);
  for (auto& e : ev) e.t_start = 3.0;
  auto s = temporal_split(ev);
  EXPECT_EQ(s.test, std::vector<std::size_t>{9});
  EXPECT_EQ(s.train.back(), 8u);
}

TEST(Split, FractionBoundsAreChecked) {
  EXPECT_THROW(temporal_split(stream(0, 10), 1.0), std::invalid_argument);
  EXPECT_THROW(temporal_split(stream(0, 10), 0.9, 0.0), std::invalid_argument);
}

TEST(Split, TrainNeverAfterTestPerEntity) {
  GenConfig cfg;
  cfg.n_entities = 6;
  cfg.events_per_entity = 37;
  auto g = generate(cfg);
  auto s = temporal_split(g.corpus.events);
  EXPECT_EQ(s.train_proper.size() + s.val.size() + s.test.size(), g.corpus.events.size());
  std::vector<double> max_train(6, -1e300), min_test(6, 1e300);
  for (auto r : s.train) max_train[g.corpus.events[r].entity_id] = std::max(max_train[g.corpus.events[r].entity_id], g.corpus.events[r].t_start);
  for (auto r : s.test) min_test[g.corpus.events[r].entity_id] = std::min(min_test[g.corpus.events[r].entity_id], g.corpus.events[r].t_start);
  for (int u = 0; u < 6; ++u) EXPECT_LE(max_train[u], min_test[u]);
}

TEST(Labels, ReadsAreCounted) {
  AnomalyLabels l({0, 1});
  EXPECT_EQ(l.access_count(), 0u);
  EXPECT_EQ(l.reveal()[1], 1);
  EXPECT_EQ(l.access_count(), 1u);
}
