#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace swamp;

namespace {

const char* kMinimal = R"(# minimal
seed = 5
model.input = 2
model.layers = dense:8, relu, dense:3
model.classes = 3
data.source = blobs
)";

}  // namespace

TEST_CASE("minimal config gets defaults for everything else") {
  const ExperimentConfig c = config_from_map(parse_config_text(kMinimal));
  CHECK(c.seed == 5);
  CHECK(c.keep_ratio == 0.8);
  CHECK(c.particles == 4);
  CHECK(c.sgd.momentum == 0.9f);
  CHECK(c.swa.start_fraction == 0.75);
  CHECK(c.swa.enabled);
  CHECK(c.model.layers[0] == LayerSpec::dense(2, 8));
  CHECK(c.model.layers[2] == LayerSpec::dense(8, 3));
}

TEST_CASE("model, data and seed are required") {
  for (const char* key : {"seed", "model.input", "model.layers", "model.classes", "data.source"}) {
    ConfigMap m = parse_config_text(kMinimal);
    m.erase(key);
    CHECK_THROWS_WITH_AS(config_from_map(m), doctest::Contains(key), ConfigError);
  }
}

TEST_CASE("unknown keys and malformed values are rejected") {
  ConfigMap m = parse_config_text(kMinimal);
  m["sgd.learning_rate"] = "0.1";
  CHECK_THROWS_WITH_AS(config_from_map(m), doctest::Contains("sgd.learning_rate"), ConfigError);
  m = parse_config_text(kMinimal);
  m["epochs"] = "ten";
  CHECK_THROWS_AS(config_from_map(m), ConfigError);
  m = parse_config_text(kMinimal);
  m["keep_ratio"] = "1.0";
  CHECK_THROWS_AS(config_from_map(m), ConfigError);
  m = parse_config_text(kMinimal);
  m["model.layers"] = "dense:8,relu,dense:4";
  CHECK_THROWS_AS(config_from_map(m), ShapeError);
  CHECK_THROWS_AS(parse_config_text("no equals sign here"), ConfigError);
}

TEST_CASE("serialization round-trips losslessly") {
  ConfigMap m = parse_config_text(kMinimal);
  m["keep_ratio"] = "0.7999999999999999";
  m["sgd.lr"] = "0.1234567";
  m["sgd.schedule"] = "piecewise";
  m["sgd.piecewise"] = "100:0.05,200:0.005";
  m["particle_schedule"] = "1,2,4";
  m["prune.kinds"] = "dense+conv";
  m["swa.enabled"] = "false";
  m["data.noise"] = "0.1";
  const ExperimentConfig c = config_from_map(m);
  const std::string text = to_text(c);
  const ExperimentConfig back = config_from_map(parse_config_text(text));
  CHECK(back == c);
  CHECK(to_text(back) == text);
  CHECK(back.keep_ratio == c.keep_ratio);
  CHECK(back.sgd.schedule.points == c.sgd.schedule.points);
}

TEST_CASE("conv layers infer their input channels") {
  ConfigMap m = parse_config_text(kMinimal);
  m["model.input"] = "1x8x8";
  m["model.layers"] = "conv:4:3,relu,conv:2:3:valid,flatten,dense:10";
  m["model.classes"] = "10";
  const ExperimentConfig c = config_from_map(m);
  CHECK(c.model.layers[0] == LayerSpec::conv2d(1, 4, 3));
  CHECK(c.model.layers[2] == LayerSpec::conv2d(4, 2, 3, Padding::Valid));
  CHECK(c.model.layers[4] == LayerSpec::dense(72, 10));
  CHECK(config_from_map(parse_config_text(to_text(c))) == c);
}

TEST_CASE("overrides and the digest") {
  const ExperimentConfig c = config_from_map(parse_config_text(kMinimal));
  const ExperimentConfig d = apply_overrides(c, {"particles=8", "out = elsewhere", "threads=4"});
  CHECK(d.particles == 8);
  CHECK(d.out == "elsewhere");
  CHECK(config_digest(apply_overrides(c, {"out=x", "threads=3"})) == config_digest(c));
  CHECK(config_digest(d) != config_digest(c));
  CHECK_THROWS_AS(apply_overrides(c, {"particles"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"bogus=1"}), ConfigError);
}

TEST_CASE("loading from a file applies overrides in order") {
  const auto dir = testing::scratch_dir("config_file");
  std::ofstream(dir / "run.cfg") << kMinimal;
  const ExperimentConfig c = load_config(dir / "run.cfg", {"epochs=3", "epochs=7"});
  CHECK(c.epochs == 7);
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), ConfigError);
}

TEST_CASE("value lists") {
  CHECK(parse_index_list("1..4") == std::vector<Index>{1, 2, 3, 4});
  CHECK(parse_index_list("1,2,4,8") == std::vector<Index>{1, 2, 4, 8});
  CHECK(parse_index_list("0,3..5") == std::vector<Index>{0, 3, 4, 5});
  CHECK_THROWS(parse_index_list("4..1"));
  CHECK_THROWS(parse_index_list("x"));
}
