#include <catch_amalgamated.hpp>

#include "spice/config.hpp"
#include "spice/png.hpp"
#include "testkit.hpp"

using namespace spice;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("defaults are the reference configuration") {
  const EditConfig c;
  CHECK(c.denoising_strength == 0.9);
  CHECK(c.canny_steps == 5);
  CHECK(c.base_steps == 25);
  CHECK(c.seed == 0);
  CHECK(c.patch_opacity == 0.8);
  CHECK(c.target_resolution == Resolution{1216, 832});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config JSON round-trips and accepts partial input") {
  EditConfig c;
  c.prompt = "a hat";
  c.denoising_strength = 0.6;
  c.canny_steps = 8;
  c.base_steps = 22;
  c.seed = 0xFFFFFFFFFFFFFFFFULL;
  c.target_resolution = {512, 768};
  c.ablation.disable_blur = true;
  const json j = c;
  CHECK(j.get<EditConfig>() == c);

  const auto partial = json::parse(R"({"denoising_strength": 0.4, "target_resolution": "640x480"})").get<EditConfig>();
  CHECK(partial.denoising_strength == 0.4);
  CHECK(partial.target_resolution == Resolution{640, 480});
  CHECK(partial.canny_steps == 5);
}

TEST_CASE("config validation messages") {
  EditConfig c;
  c.denoising_strength = 1.5;
  CHECK_THROWS_WITH(c.validate(), ContainsSubstring("denoising_strength"));
  c = {};
  c.canny_steps = 0;
  c.base_steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.ablation.disable_canny_stage = true;
  CHECK_THROWS_WITH(c.validate(), ContainsSubstring("inconsistent ablation"));
  c.canny_steps = 0;
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(json::parse(R"({"ablation": {"disable_everything": true}})").get<EditConfig>(), Error);
  CHECK_THROWS_AS(json::parse(R"({"seed": "zero"})").get<EditConfig>(), Error);
}

TEST_CASE("presets map qualitative levels to values") {
  EditConfig c;
  apply_preset(c, find_preset("Fish"));
  CHECK(c.denoising_strength == 0.6);
  CHECK(c.canny_steps == 3);
  CHECK(c.total_steps() == 30);
  apply_preset(c, find_preset("Ears"));
  CHECK(c.denoising_strength == 0.4);
  CHECK(c.canny_steps == 15);
  CHECK_THROWS_AS(find_preset("Hat"), Error);
}

TEST_CASE("shipped preset file agrees with the built-in table") {
  const auto shipped = json::parse(read_text(std::filesystem::path(SPICE_SOURCE_DIR) / "tools" / "presets.json"));
  CHECK(shipped == presets_document());
}
