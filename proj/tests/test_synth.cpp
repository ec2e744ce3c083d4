#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/matcher/matcher.hpp"
#include "nsl/synth/dataset.hpp"
#include "nsl/synth/image_io.hpp"
#include "nsl/synth/scene.hpp"

using namespace nsl;
using namespace nsl::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nsl_test_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SceneSpec single_layer(double d, std::size_t h = 16, std::size_t w = 32) {
  SceneSpec s;
  s.height = h;
  s.width = w;
  s.layers = {{d, Texture::kRandomDot, 0, 0, w, h}};
  s.seed = 3;
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("single layer scene is a pure shift") {
  const DatasetItem it = gen_scene(single_layer(4));
  const SceneTruth& t = *it.truth;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      CHECK(t.disparity.at(y, x) == 4.0);
      CHECK(t.valid.at(y, x) == (x + 4 <= 31 ? 1.0 : 0.0));
      if (x + 4 < 32)
        for (std::size_t c = 0; c < 3; ++c) CHECK(it.right.at(c, y, x + 4) == it.left.at(c, y, x));
    }
  CHECK(it.gt->depth.at(0, 0) == doctest::Approx(0.5 * 96 / 4.0).epsilon(1e-15));
}

TEST_CASE("warping right by gt reconstructs left") {
  RandomSceneOptions o;
  o.height = 24;
  o.width = 48;
  o.max_disparity = 10;
  o.rectangles = 4;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DatasetItem it = gen_scene(random_scene_spec(o, seed));
    ad::Tape tape;
    const ad::WarpResult w =
        ad::bilinear_warp_1d(tape.constant(it.right), tape.constant(it.truth->disparity), +1);
    const Tensor rec = w.image.value();
    double worst = 0;
    std::size_t valid = 0;
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 48; ++x) {
        if (it.truth->valid.at(y, x) == 0.0) continue;
        ++valid;
        for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(rec.at(c, y, x) - it.left.at(c, y, x)));
      }
    CHECK(valid > 24 * 48 / 2);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("occluded pixels are flagged by visibility") {
  SceneSpec s;
  s.height = 8;
  s.width = 40;
  s.layers = {{2, Texture::kRandomDot, 0, 0, 40, 8}, {8, Texture::kRandomDot, 16, 2, 28, 6}};
  const DatasetItem it = gen_scene(s);
  // Oracle: a background pixel is hidden when its right-view column lands on
  // the front layer's shifted footprint [24, 36).
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 40; ++x) {
      const bool front = y >= 2 && y < 6 && x >= 16 && x < 28;
      const double d = front ? 8 : 2;
      const double xr = static_cast<double>(x) + d;
      const bool covered = !front && y >= 2 && y < 6 && xr >= 24 && xr < 36;
      const bool expect = xr <= 39 && !covered;
      CHECK(it.truth->disparity.at(y, x) == d);
      CHECK((it.truth->valid.at(y, x) == 1.0) == expect);
    }
}

TEST_CASE("flat-noise band has lower feature distance than texture") {
  RandomSceneOptions o;
  o.height = 64;
  o.width = 96;
  o.sky_fraction = 1.0 / 3.0;
  const DatasetItem it = gen_scene(random_scene_spec(o, 11));
  ad::ParameterStore store;
  features::ToyEncoder::init_params(store, 5);
  ad::Tape tape;
  const features::RawFeatureMap raw =
      features::toy_encoder(store, ad::permute(tape.constant(it.left), {1, 2, 0}).value());
  const matcher::NnDistance nn = matcher::nn_feature_distance(ad::permute(tape.constant(raw.coarse), {2, 0, 1}));
  const Tensor p = nn.p.value();
  std::vector<double> sky, tex;
  // Coarse rows 0-1 lie inside the band (image rows 0-20), rows 3+ below it.
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 12; ++x) {
      if (y < 2) sky.push_back(p.at(y, x));
      else if (y >= 3) tex.push_back(p.at(y, x));
    }
  CHECK(median(sky) < median(tex));
}

TEST_CASE("scenes are deterministic per seed") {
  RandomSceneOptions o;
  o.sky_fraction = 0.25;
  o.noise = 0.01;
  o.gain = 0.8;
  const DatasetItem a = gen_scene(random_scene_spec(o, 21));
  const DatasetItem b = gen_scene(random_scene_spec(o, 21));
  const DatasetItem c = gen_scene(random_scene_spec(o, 22));
  CHECK(a.left == b.left);
  CHECK(a.right == b.right);
  CHECK(a.truth->disparity == b.truth->disparity);
  CHECK_FALSE(a.left == c.left);
}

TEST_CASE("scene spec validation and parsing") {
  CHECK_THROWS_AS(gen_scene(single_layer(9)), ConfigError);  // > W/4 = 8
  CHECK_THROWS_AS(gen_scene(single_layer(-1)), ConfigError);
  SceneSpec bad = single_layer(2);
  bad.layers[0].x1 = 33;
  CHECK_THROWS_AS(gen_scene(bad), ConfigError);
  bad = single_layer(2);
  bad.layers.clear();
  CHECK_THROWS_AS(gen_scene(bad), ConfigError);

  const SceneSetSpec set = parse_scene_set(
      "height = 16\nwidth = 32\ncount = 3\nseed = 4\n"
      "layer = 2 random-dot 0 0 32 16\nlayer = 5 gradient 8 4 20 12  # front\n");
  CHECK(set.count == 3);
  CHECK(set.layers.size() == 2);
  CHECK(set.layers[1].texture == Texture::kGradient);
  CHECK(scene_spec_at(set, 2).seed == 6);
  CHECK_THROWS_AS(parse_scene_set("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_set("layer = 2 plaid 0 0 4 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_set("height = tall\n"), ConfigError);
  CHECK_THROWS_AS(parse_scene_set("width = 32\nlayer = 20 random-dot 0 0 32 16\n"), ConfigError);
  CHECK(item_name(0) == "0001");
  CHECK(item_name(41) == "0042");
}

TEST_CASE("png and pfm round trips") {
  const fs::path dir = scratch("io");
  Tensor rgb({3, 5, 7});
  for (std::size_t i = 0; i < rgb.numel(); ++i) rgb[i] = static_cast<double>((i * 37) % 256) / 255.0;
  write_rgb_png(dir / "a.png", rgb);
  CHECK(read_rgb_png(dir / "a.png") == rgb);

  Tensor depth({4, 6});
  for (std::size_t i = 0; i < depth.numel(); ++i) depth[i] = 0.37 * static_cast<double>(i) + 0.001;
  write_u16_png(dir / "d.png", depth, 256.0);
  const Tensor back = read_u16_png(dir / "d.png", 256.0);
  for (std::size_t i = 0; i < depth.numel(); ++i) {
    CHECK(back[i] == std::round(depth[i] * 256.0) / 256.0);
    CHECK(std::abs(back[i] - depth[i]) <= 1.0 / 512.0);
  }

  Tensor mask({3, 3}, {0, 1, 0, 0.5, 0, 2, 0, 0, 1});
  write_mask_png(dir / "m.png", mask);
  const Tensor mb = read_mask_png(dir / "m.png");
  for (std::size_t i = 0; i < 9; ++i) CHECK(mb[i] == (mask[i] != 0 ? 1.0 : 0.0));

  Tensor disp({3, 4});
  for (std::size_t i = 0; i < 12; ++i) disp[i] = 0.25 * static_cast<double>(i);
  write_pfm(dir / "p.pfm", disp);
  CHECK(read_pfm(dir / "p.pfm") == disp);
  std::ifstream in(dir / "p.pfm", std::ios::binary);
  std::string header((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(header.rfind("Pf\n4 3\n-1.0\n", 0) == 0);
  float first = 0;
  std::memcpy(&first, header.data() + std::string("Pf\n4 3\n-1.0\n").size(), sizeof first);
  CHECK(first == 2.0f);  // bottom row first

  std::ofstream(dir / "x.png") << "not a png";
  CHECK_THROWS_AS(read_rgb_png(dir / "x.png"), FormatError);
  CHECK_THROWS_AS(read_u16_png(dir / "a.png", 256.0), FormatError);
}

TEST_CASE("dataset directory round trip") {
  const fs::path root = scratch("ds");
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < 2; ++i) {
    DatasetItem it = gen_scene(single_layer(2.0 + static_cast<double>(i)));
    it.name = item_name(i);
    items.push_back(it);
  }
  write_dataset(root, items);
  write_rgb_png(root / "right" / "0009.png", items[0].right);

  const Dataset ds(root);
  REQUIRE(ds.size() == 2);
  CHECK(ds.names() == std::vector<std::string>{"0001", "0002"});
  REQUIRE(ds.skipped().size() == 1);
  CHECK(ds.skipped()[0].rfind("right/0009.png", 0) == 0);
  CHECK(ds.rig().baseline == 0.5);
  CHECK(ds.rig().focal == 96.0);

  const DatasetItem got = ds.load(1);
  CHECK(got.name == "0002");
  REQUIRE(got.gt);
  for (std::size_t i = 0; i < got.gt->depth.numel(); ++i) {
    const double expect = items[1].gt->valid[i] != 0.0 ? items[1].gt->depth[i] : 0.0;
    CHECK(std::abs(got.gt->depth[i] - expect) <= 1.0 / 512.0);
    CHECK(got.gt->valid[i] == (expect > 0 ? 1.0 : 0.0));
  }
  for (std::size_t i = 0; i < got.left.numel(); ++i) CHECK(std::abs(got.left[i] - items[1].left[i]) <= 0.5 / 255.0 + 1e-12);

  std::ofstream(root / "calib.txt") << "baseline_m = 0.5\nfocal_px = wide\ncx = 1\ncy = 1\n";
  CHECK_THROWS_AS(Dataset{root}, FormatError);
  std::ofstream(root / "calib.txt") << "baseline_m = 0.5\ncx = 1\ncy = 1\n";
  CHECK_THROWS_AS(Dataset{root}, FormatError);
  CHECK_THROWS_AS(Dataset{root / "missing"}, FormatError);

  const losses::StereoRig rig = parse_calib(format_calib(losses::StereoRig::rectified(0.12, 721.5, 609.5, 172.8)));
  CHECK(rig.focal == 721.5);
  CHECK(rig.cy == 172.8);
}
