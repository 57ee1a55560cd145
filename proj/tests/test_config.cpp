#include <gtest/gtest.h>

#include "expose/config.hpp"
#include "expose/errors.hpp"
#include "scratch_dir.hpp"
#include "test_util.hpp"

using namespace expose;
using expose::testing::ScratchDir;

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string()), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex(std::string("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  ScratchDir dir;
  {
    std::ofstream f(dir / "abc.txt", std::ios::binary);
    f << "abc";
  }
  EXPECT_EQ(file_sha256(dir / "abc.txt"), sha256_hex(std::string("abc")));
  EXPECT_THROW(file_sha256(dir / "missing"), IoError);
}

TEST(Presets, KnownValues) {
  const ExperimentConfig full = full_preset();
  EXPECT_EQ(full.model.model_dim, 512);
  EXPECT_EQ(full.model.adapter_tokens, 8);
  EXPECT_EQ(full.pretrain.batch_size, 256);
  EXPECT_EQ(full.pretrain.epochs, 100);
  EXPECT_EQ(full.pretrain.optimizer.kind, OptimizerKind::Adan);
  EXPECT_DOUBLE_EQ(full.pretrain.optimizer.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(full_alt_preset().pretrain.optimizer.learning_rate, 4e-4);
  EXPECT_DOUBLE_EQ(full_alt_preset().personalize.optimizer.learning_rate, 4e-4);
  EXPECT_EQ(full.schedule.steps, 1000);
  EXPECT_DOUBLE_EQ(full.schedule.beta_start, 1e-4);
  EXPECT_DOUBLE_EQ(full.schedule.beta_end, 0.02);

  const ExperimentConfig desk = desk_preset();
  EXPECT_EQ(desk.model.length, 50);
  EXPECT_EQ(desk.model.model_dim, 64);
  EXPECT_EQ(desk.model.num_layers, 2);
  EXPECT_EQ(desk.model.dropout, 0.0);
  EXPECT_EQ(desk.data.validation_clips, 4);
  for (const auto& c : {full, full_alt_preset(), desk}) EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(preset_by_name("desk"), desk);
  EXPECT_THROW(preset_by_name("huge"), ConfigError);
}

TEST(ExperimentConfig, ResolveDerivesDistinctSectionSeeds) {
  ExperimentConfig a = desk_preset(), b = desk_preset();
  b.seed = 99;
  b.resolve();
  EXPECT_NE(a.data.seed, b.data.seed);
  EXPECT_NE(a.pretrain.seed, b.pretrain.seed);
  EXPECT_NE(a.personalize.seed, b.personalize.seed);
  EXPECT_NE(a.scoring.seed, b.scoring.seed);
  EXPECT_NE(a.bench_config().seed, b.bench_config().seed);
  EXPECT_NE(a.data.seed, a.pretrain.seed);
  b.seed = a.seed;
  b.resolve();
  EXPECT_EQ(a, b);
}

TEST(ExperimentConfig, CrossSectionChecks) {
  ExperimentConfig c = desk_preset();
  c.data.length = 49;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk_preset();
  c.schedule.steps = 500;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk_preset();
  c.benchmark.perturbations = {"blur-ish"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk_preset();
  c.benchmark.severities = {6};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ConfigJson, RoundTripsEveryPreset) {
  for (const char* name : {"full", "full_alt", "desk"}) {
    ExperimentConfig c = preset_by_name(name);
    c.benchmark.perturbations = {"expression_noise"};
    c.scoring.noise_count = 3;
    const std::string text = to_json_string(c);
    EXPECT_EQ(parse_config(text), c) << name;
    EXPECT_EQ(to_json_string(parse_config(text)), text);
  }
}

TEST(ConfigJson, PartialFileDefaultsToItsPreset) {
  const ExperimentConfig c = parse_config(R"({"preset": "desk", "training": {"pretrain": {"epochs": 3}}})");
  ExperimentConfig expect = desk_preset();
  expect.pretrain.epochs = 3;
  EXPECT_EQ(c, expect);
}

TEST(ConfigJson, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"preset": "desk", "modle": {}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"preset": "desk", "model": {"layers": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"preset": "desk", "model": {"num_layers": "two"}})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"preset": "none"})"), ConfigError);
}

TEST(ConfigJson, FileRoundTrip) {
  ScratchDir dir;
  ExperimentConfig c = desk_preset();
  c.seed = 12;
  c.resolve();
  save_config(c, dir / "c.json");
  EXPECT_EQ(load_config(dir / "c.json"), c);
  EXPECT_THROW(load_config(dir / "nope.json"), IoError);
}

TEST(ModelDigest, StableAndSensitive) {
  const ModelConfig m = desk_preset().model;
  EXPECT_EQ(model_config_digest(m), model_config_digest(parse_model_config(model_config_json(m))));
  EXPECT_EQ(model_config_digest(m).size(), 64u);
  ModelConfig other = m;
  other.num_heads = 2;
  EXPECT_NE(model_config_digest(m), model_config_digest(other));
  EXPECT_THROW(parse_model_config("{"), CorruptionError);
}
