#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "nsl/diffmath/errors.hpp"
#include "nsl/synth/image_io.hpp"
#include "nsl/synth/train.hpp"

using namespace nsl;
using namespace nsl::synth;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.model.height = 32;
  c.model.width = 48;
  c.model.matcher.dim = 16;
  c.model.matcher.upsample_hidden = 8;
  c.model.matcher.radius = 4;
  c.lr = 1e-3;
  c.batch = 2;
  c.steps = 3;
  c.seed = 5;
  return c;
}

std::vector<DatasetItem> small_set(std::size_t n) {
  RandomSceneOptions o;
  o.height = 32;
  o.width = 48;
  o.rectangles = 1;
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back(gen_scene(random_scene_spec(o, 40 + i)));
    items.back().name = item_name(i);
  }
  return items;
}

bool same_params(const ad::ParameterStore& a, const ad::ParameterStore& b) {
  if (a.names() != b.names()) return false;
  for (const auto& [name, t] : a.all())
    if (!(t == b.at(name))) return false;
  return true;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nsl_test_train_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("batches are per-epoch permutations") {
  TrainConfig c = small_config();
  c.batch = 3;
  std::multiset<std::size_t> seen;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i : batch_indices(c, 9, s)) seen.insert(i);
  for (std::size_t i = 0; i < 9; ++i) CHECK(seen.count(i) == 1);
  CHECK(batch_indices(c, 9, 4) == batch_indices(c, 9, 4));
  CHECK(batch_indices(c, 9, 0) != batch_indices(c, 9, 3));
  CHECK(c.total_steps(9) == 3);
  c.epochs = 2;
  CHECK(c.total_steps(10) == 8);
}

TEST_CASE("training is deterministic and resumes bitwise") {
  const TrainConfig c = small_config();
  const std::vector<DatasetItem> items = small_set(4);
  const TrainResult a = train(c, items, init_training(c), 3);
  const TrainResult b = train(c, items, init_training(c), 3);
  REQUIRE_FALSE(a.aborted);
  REQUIRE(a.trace.size() == 3);
  CHECK(same_params(a.state.params, b.state.params));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.trace[i].total == b.trace[i].total);
    CHECK(std::isfinite(a.trace[i].total));
  }

  const fs::path dir = scratch("resume");
  const TrainResult first = train(c, items, init_training(c), 2);
  save_checkpoint(dir, c, first.state);
  Checkpoint ck = load_checkpoint(dir, c.model);
  CHECK(ck.state.step == 2);
  CHECK(same_params(ck.state.params, first.state.params));
  const TrainResult resumed = train(c, items, std::move(ck.state), 3);
  REQUIRE(resumed.trace.size() == 1);
  CHECK(resumed.trace[0].total == a.trace[2].total);
  CHECK(same_params(resumed.state.params, a.state.params));
}

TEST_CASE("non-finite loss aborts with the last good state") {
  const TrainConfig c = small_config();
  std::vector<DatasetItem> items = small_set(2);
  const TrainResult ok = train(c, items, init_training(c), 1);
  items[0].left[5] = std::nan("");
  items[1].left[5] = std::nan("");
  const TrainResult r = train(c, items, ok.state, 3);
  CHECK(r.aborted);
  CHECK(r.trace.empty());
  CHECK(r.abort_reason.find("step 2") == 0);
  CHECK(r.state.step == 1);
  CHECK(same_params(r.state.params, ok.state.params));
}

TEST_CASE("checkpoint manifest and version checks") {
  const TrainConfig c = small_config();
  const fs::path dir = scratch("ck");
  save_checkpoint(dir, c, init_training(c));
  std::ifstream in(dir / "manifest.txt");
  const std::string man((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(man.find("config_hash = " + config_hash(c.model)) != std::string::npos);
  CHECK(man.find("param = proj.conv0.weight [16x64x1x1]") != std::string::npos);
  CHECK(man.find("model.D = 16") != std::string::npos);

  ModelConfig other = c.model;
  other.matcher.dim = 32;
  CHECK_THROWS_AS(load_checkpoint(dir, other), VersionError);
  CHECK_NOTHROW(load_checkpoint(dir, c.model));

  std::string tampered = man;
  tampered.replace(tampered.find("model.D = 16"), 12, "model.D = 17");
  std::ofstream(dir / "manifest.txt") << tampered;
  CHECK_THROWS_AS(load_checkpoint(dir), VersionError);
  CHECK_THROWS_AS(load_checkpoint(scratch("none")), FormatError);
}

TEST_CASE("inference writes full-resolution artifacts") {
  const TrainConfig c = small_config();
  const TrainState s = init_training(c);
  const DatasetItem item = small_set(1)[0];
  const Inference r = infer(s.params, c.model, item);
  CHECK(r.disparity.shape() == Shape{32, 48});
  CHECK(r.mask.shape() == Shape{32, 48});
  const fs::path dir = scratch("infer");
  write_inference(dir, item.name, r);
  const Tensor pfm = read_pfm(dir / "0001_disp.pfm");
  CHECK(pfm.shape() == Shape{32, 48});
  for (std::size_t i = 0; i < pfm.numel(); ++i) CHECK(pfm[i] == static_cast<double>(static_cast<float>(r.disparity[i])));
  const Tensor png = read_u16_png(dir / "0001_disp.png", 256.0);
  for (std::size_t i = 0; i < png.numel(); ++i) CHECK(std::abs(png[i] - r.disparity[i]) <= 1.0 / 512.0);
  CHECK(read_mask_png(dir / "0001_mask.png") == r.mask);

  DatasetItem wrong = item;
  wrong.left = Tensor({3, 16, 48});
  CHECK_THROWS_AS(infer(s.params, c.model, wrong), DimensionError);
}

TEST_CASE("evaluation of oracle and biased predictors") {
  RandomSceneOptions o;
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < 4; ++i) {
    items.push_back(gen_scene(random_scene_spec(o, 70 + i)));
    items.back().name = item_name(i);
  }
  items.push_back(items[0]);
  items.back().gt.reset();

  const Predictor oracle = [](const DatasetItem& it) { return it.truth->disparity; };
  const metrics::MetricReport r = evaluate(oracle, items);
  CHECK(r.images == 4);
  CHECK(r.max_depth == 50.0);
  CHECK(r.unweighted[0] < 0.02);
  CHECK(r.weighted[0] < 0.02);

  // Disparity 10% high => depth / 1.1 => AbsRel = 1 - 1/1.1 at every pixel.
  const Predictor biased = [](const DatasetItem& it) {
    Tensor d = it.truth->disparity;
    for (double& v : d.data()) v *= 1.1;
    return d;
  };
  const metrics::MetricReport b = evaluate(biased, items);
  CHECK(b.unweighted[0] == doctest::Approx(1 - 1 / 1.1).epsilon(1e-12));
  CHECK(b.weighted[0] == doctest::Approx(1 - 1 / 1.1).epsilon(1e-12));
}

TEST_CASE("end-point error statistics") {
  const Tensor truth({2, 2}, {2, 4, 6, 8});
  const Tensor pred({2, 2}, {2.5, 5, 6, 0});
  const EndPointError e = end_point_error(pred, truth, Tensor({2, 2}, {1, 1, 1, 0}), 0.75);
  CHECK(e.count == 3);
  CHECK(e.mean == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(e.below == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("full pipeline gradient check") {
  const ad::GradCheckReport r = pipeline_gradcheck(3);
  INFO("max rel err " << r.max_rel_error << ", checked " << r.checked << ", skipped " << r.skipped);
  CHECK(r.passed);
  CHECK(r.checked >= 60);
}
