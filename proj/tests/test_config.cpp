#include <gtest/gtest.h>

#include <fstream>

#include "kamim/config.hpp"
#include "support.hpp"

using namespace kamim;

TEST(Config, Defaults) {
  const Config c;
  EXPECT_EQ(c.get("objective"), "kamim");
  EXPECT_EQ(c.get_int("model.img_size"), 32);
  EXPECT_DOUBLE_EQ(c.get_real("mask.ratio"), 0.6);
  EXPECT_TRUE(c.get_bool("train.flips"));
  const auto p = c.pretrain();
  EXPECT_EQ(p.model, ViTConfig{});
  ASSERT_TRUE(p.weight.has_value());
  EXPECT_EQ(p.weight->patch_size, 4);
  EXPECT_DOUBLE_EQ(p.weight->temperature, 0.25);
  EXPECT_EQ(p.fast_threshold, 20);
  EXPECT_EQ(p.optim.batch_size, 64);
}

TEST(Config, KeyValueText) {
  Config c;
  c.parse("# comment\nseed = 7\nobjective = \"simmim\"  # trailing\n\nmodel.depth=2\ntrain.flips = 0\n");
  EXPECT_EQ(c.get_int("seed"), 7);
  EXPECT_EQ(c.get("objective"), "simmim");
  EXPECT_EQ(c.get_int("model.depth"), 2);
  EXPECT_FALSE(c.get_bool("train.flips"));
  const auto p = c.pretrain();
  EXPECT_FALSE(p.weight.has_value());
  EXPECT_EQ(p.optim.seed, 7u);
  EXPECT_EQ(p.mask.seed, 7u);
}

TEST(Config, JsonFlattens) {
  Config a, b;
  a.parse(R"({"seed": 3, "model": {"depth": 2, "embed_dim": 32}, "weight": {"T": 0.5}, "train": {"flips": false}})");
  b.parse("seed=3\nmodel.depth=2\nmodel.embed_dim=32\nweight.T=0.5\ntrain.flips=false\n");
  EXPECT_EQ(a.canonical_text(), b.canonical_text());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_THROW(a.parse("{\"model\": [1, 2]}"), ConfigError);
  EXPECT_THROW(a.parse("{\"seed\": "), ConfigError);
  EXPECT_THROW(a.parse("[1]"), ConfigError);
}

TEST(Config, UnknownKeysAndBadValues) {
  Config c;
  EXPECT_THROW(c.parse("modle.depth = 2\n"), ConfigError);
  EXPECT_THROW(c.set("model.depth", "two"), ConfigError);
  EXPECT_THROW(c.set("model.depth", "2.5"), ConfigError);
  EXPECT_THROW(c.set("mask.ratio", "nan"), ConfigError);
  EXPECT_THROW(c.set("train.flips", "yes"), ConfigError);
  EXPECT_THROW(c.parse("seed 3\n"), ConfigError);
  EXPECT_THROW(c.apply_override("seed"), ConfigError);
  EXPECT_THROW(c.apply_override("=3"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
}

TEST(Config, SemanticErrorsBecomeConfigErrors) {
  Config c;
  c.set("model.heads", "3");
  EXPECT_THROW(c.pretrain(), ConfigError);
  c = Config{};
  c.set("objective", "mae");
  EXPECT_THROW(c.pretrain(), ConfigError);
  c = Config{};
  c.set("mask.ratio", "1.5");
  EXPECT_THROW(c.pretrain(), ConfigError);
  c = Config{};
  c.set("optim.warmup_epochs", "40");
  EXPECT_THROW(c.pretrain(), ConfigError);
  c = Config{};
  c.set("data.std", "0");
  EXPECT_THROW(c.pretrain(), ConfigError);
  c = Config{};
  c.set("weight.T", "0");
  EXPECT_THROW(c.pretrain(), ConfigError);
}

TEST(Config, CanonicalForm) {
  Config a, b;
  a.set("optim.lr", "8e-4");
  b.set("optim.lr", "0.0008");
  a.set("seed", " 05 ");
  b.set("seed", "5");
  a.set("train.flips", "1");
  b.set("train.flips", "true");
  EXPECT_EQ(a.canonical_text(), b.canonical_text());
  EXPECT_EQ(a.hash(), b.hash());
  b.set("seed", "6");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, OverrideEqualsFile) {
  test::TempDir dir;
  {
    std::ofstream out(dir.file("run.cfg"));
    out << "model.depth = 3\noptim.epochs = 12\n";
  }
  Config from_file;
  from_file.load(dir.file("run.cfg"));
  Config from_override;
  from_override.apply_override("model.depth=3");
  from_override.apply_override(" optim.epochs = 12 ");
  EXPECT_EQ(from_file.hash(), from_override.hash());
  EXPECT_THROW(from_file.load(dir.file("missing.cfg")), ConfigError);
}

TEST(Config, SectionsMapToTrainingConfigs) {
  Config c;
  c.parse("seed=9\nprobe.layer=2\nprobe.layernorm=true\nprobe.epochs=7\nprobe.warmup_epochs=0\n"
          "finetune.layer=1\nfinetune.flips=true\ndata.mean=0.4\ndata.std=0.2\n");
  const auto p = c.probe();
  EXPECT_EQ(p.layer, 2);
  EXPECT_TRUE(p.use_layernorm);
  EXPECT_EQ(p.optim.epochs, 7);
  EXPECT_EQ(p.optim.seed, 9u);
  EXPECT_FLOAT_EQ(p.norm.mean[0], 0.4f);
  EXPECT_FLOAT_EQ(p.norm.std[0], 0.2f);
  const auto f = c.finetune();
  EXPECT_EQ(f.layer, 1);
  EXPECT_TRUE(f.flips);
  EXPECT_TRUE(f.use_layernorm);
}

TEST(Config, JsonDump) {
  Config c;
  c.set("seed", "4");
  const auto j = c.to_json();
  EXPECT_EQ(j.at("seed"), "4");
  EXPECT_EQ(j.at("objective"), "kamim");
}
