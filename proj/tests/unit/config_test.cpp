#include <gtest/gtest.h>

#include "sammix/config.hpp"
#include "sammix/error.hpp"
#include "test_support.hpp"

using namespace sammix;
using nlohmann::json;
using sammix::support::TempDir;

TEST(Config, DefaultsRoundTripThroughJson) {
    const ExperimentConfig def;
    const auto j = to_json(def);
    EXPECT_EQ(j.size(), config_keys().size());
    EXPECT_EQ(to_json(config_from_json(j)), j);
    EXPECT_EQ(j["trainer.lr"], 0.001);
    EXPECT_EQ(j["trainer.batch_size"], 30);
    EXPECT_EQ(j["trainer.epochs"], 10);
    EXPECT_EQ(j["segnet.lora_rank"], 8);
    EXPECT_EQ(j["promptgen.omega"], 0.5);
}

TEST(Config, UnknownKeyRejected) {
    EXPECT_THROW(config_from_json(json{{"trainer.learning_rate", 0.1}}), ConfigError);
    ExperimentConfig c;
    EXPECT_THROW(apply_override(c, "segnet.rank=4"), ConfigError);
    EXPECT_THROW(config_from_json(json::array()), ConfigError);
}

TEST(Config, BadTypesAndVersionRejected) {
    EXPECT_THROW(config_from_json(json{{"trainer.epochs", "ten"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"trainer.epochs", -1}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 99}}), ConfigError);
    EXPECT_NO_THROW(config_from_json(json{{"version", kConfigVersion}}));
    EXPECT_THROW(config_from_json(json{{"trainer.mode", "nonsense"}}), ConfigError);
}

TEST(Config, OverridesParseJsonOrBareString) {
    ExperimentConfig c;
    apply_override(c, "trainer.lr=0.05");
    apply_override(c, "trainer.mode=sam_pp_two_stage");
    apply_override(c, "trainer.seeds=[3,4]");
    apply_override(c, "promptgen.merge_boxes=true");
    EXPECT_EQ(c.trainer.lr, 0.05);
    EXPECT_EQ(c.trainer.mode, train::Mode::sam_pp_two_stage);
    EXPECT_EQ(c.trainer.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_TRUE(c.trainer.threshold.merge_boxes);
    EXPECT_THROW(apply_override(c, "trainer.lr"), ConfigError);
    EXPECT_THROW(apply_override(c, "=3"), ConfigError);
}

TEST(Config, ImageSizeKeepsModulesInStep) {
    ExperimentConfig c;
    apply_override(c, "model.image_size=32");
    EXPECT_EQ(c.model.classifier.image_size, 32u);
    EXPECT_EQ(c.model.segnet.image_size, 32u);
}

TEST(Config, SnapshotReloadsToSameConfig) {
    TempDir tmp;
    ExperimentConfig c;
    apply_override(c, "trainer.n_labeled=5");
    apply_override(c, "metrics.hd_percentile=95");
    write_snapshot(c, tmp.path());
    const auto back = load_config(tmp / "config.resolved.json");
    EXPECT_EQ(to_json(back), to_json(c));
    ASSERT_TRUE(back.hd_percentile.has_value());
    EXPECT_EQ(*back.hd_percentile, 95.0);
}

TEST(Config, LoadErrors) {
    TempDir tmp;
    EXPECT_THROW(load_config(tmp / "missing.json"), IoError);
    support::write_bytes(tmp / "bad.json", "{not json");
    EXPECT_THROW(load_config(tmp / "bad.json"), ConfigError);
}

TEST(Config, ValidateRejectsInconsistentValues) {
    ExperimentConfig c;
    c.data.middle_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ExperimentConfig{};
    c.hd_percentile = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ExperimentConfig{};
    EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfigJson, RoundTripAndForeignKeys) {
    const auto m = support::tiny_model_config(8);
    const auto j = model_config_to_json(m);
    for (const auto& [k, v] : j.items()) {
        EXPECT_TRUE(k.starts_with("model.") || k.starts_with("classifier.") || k.starts_with("segnet.")) << k;
    }
    EXPECT_EQ(model_config_to_json(model_config_from_json(j)), j);
    auto extra = j;
    extra["trainer.lr"] = 0.1;
    EXPECT_THROW(model_config_from_json(extra), FormatError);
}
