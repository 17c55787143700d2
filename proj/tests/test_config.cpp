#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "defdiff/config.h"

using namespace defdiff;
namespace fs = std::filesystem;

namespace {

const char* kSample = R"(# run settings
[scene]
cameras 5
image_size 32
z_id 0.1, -0.2, 0.3, 0.0

[train]
steps 120
mode scratch
lr_net = 2e-3
mults 1,2
no_features true

[sample]
steps 10
)";

}  // namespace

TEST_CASE("config parses sections, comments, lists, and both separators") {
  const Config cfg = Config::fromText(kSample, "sample");
  CHECK(cfg.getInt("scene.cameras", 0) == 5);
  CHECK(cfg.getInt("scene.image_size", 0) == 32);
  CHECK(cfg.getInt("train.steps", 0) == 120);
  CHECK(cfg.getDouble("train.lr_net", 0.0) == 2e-3);  // '=' separator
  CHECK(cfg.getString("train.mode") == "scratch");
  CHECK(cfg.getBool("train.no_features", false));
  const std::vector<double> z = cfg.getDoubleList("scene.z_id", {});
  REQUIRE(z.size() == 4);
  CHECK(z[1] == -0.2);
  const std::vector<int> mults = cfg.getIntList("train.mults", {});
  REQUIRE(mults.size() == 2);
  CHECK(mults[1] == 2);
  // Absent keys fall back.
  CHECK(cfg.getInt("train.batch", 8) == 8);
  CHECK_FALSE(cfg.has("train.batch"));
}

TEST_CASE("overrides replace file values and bad input is rejected") {
  Config cfg = Config::fromText(kSample, "sample");
  cfg.setOverride("train.steps=999");
  cfg.setOverride("eval.out_dir = /tmp/x");
  CHECK(cfg.getInt("train.steps", 0) == 999);
  CHECK(cfg.getString("eval.out_dir") == "/tmp/x");

  CHECK_THROWS(cfg.setOverride("no_equals_sign"));
  CHECK_THROWS(cfg.setOverride("key="));
  CHECK_THROWS(Config::fromText("[unclosed\nkey 1\n", "bad"));
  CHECK_THROWS(Config::fromText("lonelykey\n", "bad"));
  CHECK_THROWS(std::ignore = Config::fromText("[a]\nx 1\n", "bad").getString("a.missing"));
  CHECK_THROWS(std::ignore = Config::fromText("[a]\nx 1.5z\n", "bad").getDouble("a.x", 0.0));
  CHECK_THROWS(std::ignore = Config::fromText("[a]\nx maybe\n", "bad").getBool("a.x", false));
}

TEST_CASE("echo emits a canonical dump that parses back equal") {
  Config cfg = Config::fromText(kSample, "sample");
  cfg.setOverride("train.steps=42");
  const std::string dump = cfg.echo();
  const Config again = Config::fromText(dump, "echo");
  CHECK(again.raw() == cfg.raw());
  CHECK(Config::fromText(again.echo(), "echo2").raw() == cfg.raw());
}

TEST_CASE("config file round trips through disk") {
  const fs::path path = fs::temp_directory_path() / "defdiff_cfg_test.cfg";
  {
    std::ofstream out(path);
    out << kSample;
  }
  const Config cfg = Config::fromFile(path.string());
  CHECK(cfg.getInt("scene.cameras", 0) == 5);
  fs::remove(path);
  CHECK_THROWS(Config::fromFile(path.string()));
}

TEST_CASE("bridges map sections onto typed structs and validate them") {
  Config cfg = Config::fromText(kSample, "sample");
  const SceneConfig sc = sceneFromConfig(cfg);
  CHECK(sc.cameras == 5);
  CHECK(sc.image_size == 32);
  CHECK(sc.z_id == std::vector<double>{0.1, -0.2, 0.3, 0.0});
  CHECK(sc.sequences == SceneConfig{}.sequences);  // untouched default

  const TrainConfig tc = trainFromConfig(cfg);
  CHECK(tc.steps == 120);
  CHECK(tc.mode == nn::CondMode::kScratch);
  CHECK(tc.lr_net == 2e-3);
  CHECK(tc.no_features);
  CHECK(tc.mults == std::vector<int>{1, 2});
  CHECK(tc.base == TrainConfig{}.base);

  const SampleOptions so = sampleFromConfig(cfg);
  CHECK(so.steps == 10);

  Config bad = Config::fromText("[train]\nmode sideways\n", "bad");
  CHECK_THROWS(trainFromConfig(bad));
  Config invalid = Config::fromText("[scene]\ncameras 0\n", "bad");
  CHECK_THROWS(sceneFromConfig(invalid));
}

TEST_CASE("unused keys are reported for typo detection") {
  Config cfg = Config::fromText("[trian]\nsteps 5\n[scene]\ncameras 4\n", "typo");
  sceneFromConfig(cfg);
  const std::vector<std::string> unused = cfg.unusedKeys();
  REQUIRE(unused.size() == 1);
  CHECK(unused[0] == "trian.steps");
}
