#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "meses/config.hpp"

using namespace meses;

TEST(Config, ParsesSectionsAndComments) {
  const auto m = parse_config_text("# top\n[model]\nd = 80  # wider\nF=5\n\n[train]\n peak_lr = 1e-3\n");
  EXPECT_EQ(m.at("model.d"), "80");
  EXPECT_EQ(m.at("model.F"), "5");
  EXPECT_EQ(m.at("train.peak_lr"), "1e-3");
  EXPECT_THROW(parse_config_text("[model]\nno equals sign\n"), ConfigError);
}

TEST(Config, ApplyOverlay) {
  RunConfig c;
  apply_config(c, {{"model.d", "80"}, {"train.peak_lr", "1e-3"}, {"model.period", "weekly"}, {"run.seed", "9"}});
  EXPECT_EQ(c.model.d, 80u);
  EXPECT_EQ(c.train.optim.peak_lr, 1e-3);
  EXPECT_EQ(c.model.period, Period::weekly);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_THROW(apply_config(c, {{"model.nope", "1"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"model.d", "wide"}}), ConfigError);
}

TEST(Config, DumpRoundTrip) {
  for (const char* p : {"desk", "paper"}) {
    const RunConfig c = profile_config(p);
    RunConfig back;
    apply_config(back, parse_config_text(dump_config(c)));
    EXPECT_EQ(dump_config(back), dump_config(c));
    EXPECT_EQ(back.hash(), c.hash());
  }
}

TEST(Config, Profiles) {
  const RunConfig desk = profile_config("desk"), paper = profile_config("paper");
  EXPECT_EQ(desk.model.d, 40u);
  EXPECT_EQ(desk.model.F, 5u);
  EXPECT_EQ(desk.model.d_f(), 8u);
  EXPECT_EQ(paper.model.d, 1040u);
  EXPECT_EQ(paper.model.d_f(), 208u);
  EXPECT_EQ(paper.train.optim.peak_lr, 2e-4);
  EXPECT_EQ(paper.train.optim.eta_min, 1e-6);
  EXPECT_NE(desk.hash(), paper.hash());
  EXPECT_THROW(profile_config("nonexistent"), ConfigError);
}

TEST(Config, ProfileDirectoryOverlay) {
  const auto dir = std::filesystem::temp_directory_path() / "meses_profiles";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "tiny.cfg") << "[model]\nd = 20\nH = 1\n";
  const RunConfig c = profile_config("tiny", dir.string());
  EXPECT_EQ(c.model.d, 20u);
  EXPECT_EQ(c.profile, "tiny");
  std::filesystem::remove_all(dir);
}

TEST(Config, ModelValidation) {
  ModelConfig m;
  m.F = 4;
  EXPECT_THROW(m.validate(), ConfigError);  // F = 4 requires the entity token dropped
  m.drop_entity_token = true;
  EXPECT_NO_THROW(m.validate());
  m = ModelConfig{};
  m.d = 42;
  EXPECT_THROW(m.validate(), ConfigError);
}
