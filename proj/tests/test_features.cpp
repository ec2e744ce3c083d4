#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/gradcheck.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/features/features.hpp"

using namespace nsl;
using namespace nsl::features;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nsl_test_features";
  fs::create_directories(dir);
  return dir / name;
}

RawFeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  RawFeatureMap raw;
  raw.fine = ad::random_tensor({2 * h, 2 * w, c}, seed);
  raw.coarse = ad::random_tensor({h, w, c}, seed + 1);
  raw.channels = c;
  return raw;
}

}  // namespace

TEST_CASE("tensor container round trip is bitwise") {
  const Tensor a = ad::random_tensor({3, 4, 5}, 11);
  const Tensor b = ad::random_tensor({7}, 12);
  const fs::path p = temp_path("roundtrip.nslt");
  write_tensor_file(p, {{"a", a, DType::kF64}, {"b", b, DType::kF64}});
  const auto slots = read_tensor_file(p);
  REQUIRE(slots.size() == 2);
  CHECK(find_slot(slots, "a").tensor == a);
  CHECK(find_slot(slots, "b").tensor == b);
  CHECK_THROWS_AS(find_slot(slots, "c"), FormatError);

  write_tensor_file(p, {{"a", a, DType::kF32}});
  const Tensor back = read_tensor_file(p).front().tensor;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(back[i] == static_cast<double>(static_cast<float>(a[i])));
  }
}

TEST_CASE("tensor container rejects bad magic, version and truncation") {
  const fs::path p = temp_path("bad.nslt");
  write_tensor_file(p, {{"x", Tensor({2, 2}, 1.0)}});
  std::string bytes;
  {
    std::ifstream f(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  CHECK_THROWS_AS(read_tensor_file(p), FormatError);
  bad = bytes;
  bad[4] = 2;
  write(bad);
  CHECK_THROWS_AS(read_tensor_file(p), FormatError);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor_file(p), FormatError);
  CHECK_THROWS_AS(read_tensor_file(temp_path("missing.nslt")), FormatError);
}

TEST_CASE("feature file at 192x320 with 384 channels is accepted") {
  RawFeatureMap raw;
  raw.coarse = Tensor({24, 40, 384}, 0.5);
  raw.fine = Tensor({48, 80, 384}, 0.25);
  const fs::path p = temp_path("dino.nslt");
  save_feature_tensor(p, raw);
  const RawFeatureMap back = load_feature_tensor(p, 192, 320);
  CHECK(back.channels == 384);
  CHECK(back.source == FeatureSource::kFile);
  CHECK(back.coarse.shape() == Shape{24, 40, 384});

  CHECK_THROWS_AS(load_feature_tensor(p, 96, 320), ContractError);
  raw.fine = Tensor({47, 80, 384});
  save_feature_tensor(p, raw);
  CHECK_THROWS_AS(load_feature_tensor(p, 192, 320), ContractError);
}

TEST_CASE("toy encoder scale contract") {
  ad::ParameterStore store;
  ToyEncoder::init_params(store, 3);
  const RawFeatureMap big = toy_encoder(store, ad::random_tensor({192, 320, 3}, 4, 0, 1));
  CHECK(big.fine.shape() == Shape{48, 80, 64});
  CHECK(big.coarse.shape() == Shape{24, 40, 64});
  CHECK(big.source == FeatureSource::kToyEncoder);

  const RawFeatureMap small = toy_encoder(store, ad::random_tensor({16, 16, 3}, 5, 0, 1));
  CHECK(small.fine.shape() == Shape{4, 4, 64});
  CHECK(small.coarse.shape() == Shape{2, 2, 64});
  check_scale_contract(small.fine.shape(), small.coarse.shape(), 16, 16);

  CHECK_THROWS_AS(toy_encoder(store, Tensor({12, 16, 3})), ConfigError);
}

TEST_CASE("toy encoder output depends on every input pixel") {
  ad::ParameterStore store;
  ToyEncoder::init_params(store, 9);
  const Tensor image = ad::random_tensor({16, 16, 3}, 10, 0, 1);
  const RawFeatureMap base = toy_encoder(store, image);
  const double h = 1e-3;
  std::size_t dead = 0;
  for (std::size_t i = 0; i < image.numel(); ++i) {
    Tensor probe = image;
    probe[i] += h;
    const RawFeatureMap moved = toy_encoder(store, probe);
    double change = 0;
    for (std::size_t j = 0; j < base.fine.numel(); ++j)
      change = std::max(change, std::abs(moved.fine[j] - base.fine[j]));
    for (std::size_t j = 0; j < base.coarse.numel(); ++j)
      change = std::max(change, std::abs(moved.coarse[j] - base.coarse[j]));
    if (change == 0) ++dead;
  }
  CHECK(dead == 0);
}

TEST_CASE("identity projection head reproduces the ReLU of its input") {
  const std::size_t c = 4;
  ad::ParameterStore store;
  ProjectionHead::init_params(store, {c, c}, 1);
  Tensor eye({c, c, 1, 1});
  for (std::size_t i = 0; i < c; ++i) eye[i * c + i] = 1;
  store.at("proj.conv0.weight") = eye;
  store.at("proj.conv1.weight") = eye;

  const RawFeatureMap raw = random_map(2, 3, c, 21);
  ad::Tape t;
  ad::Binding bind(t, store);
  const FeaturePyramid out = project(bind, to_tape(t, raw));
  const Tensor fine = ad::permute(out.fine, {1, 2, 0}).value();
  for (std::size_t i = 0; i < fine.numel(); ++i) CHECK(fine[i] == std::max(raw.fine[i], 0.0));
  CHECK(out.dim == c);
}

TEST_CASE("projection 384 -> 128 shapes and channel mismatch") {
  ad::ParameterStore store;
  const ProjectionConfig cfg{384, 128};
  ProjectionHead::init_params(store, cfg, 2);
  CHECK_FALSE(projection_warning(cfg));
  CHECK(projection_warning(ProjectionConfig{64, 128}));

  const RawFeatureMap raw = random_map(3, 5, 384, 30);
  ad::Tape t;
  ad::Binding bind(t, store);
  const FeaturePyramid out = project(bind, to_tape(t, raw));
  CHECK(out.fine.shape() == Shape{128, 6, 10});
  CHECK(out.coarse.shape() == Shape{128, 3, 5});

  const RawFeatureMap wrong = random_map(3, 5, 64, 31);
  CHECK_THROWS_AS(project(bind, to_tape(t, wrong)), DimensionError);
}

TEST_CASE("projection is equivariant to spatial permutations") {
  ad::ParameterStore store;
  ProjectionHead::init_params(store, {6, 5}, 4);
  const RawFeatureMap raw = random_map(3, 4, 6, 40);
  const std::size_t n = 12;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 5 + 3) % n;

  RawFeatureMap shuffled = raw;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 6; ++k) shuffled.coarse[perm[i] * 6 + k] = raw.coarse[i * 6 + k];

  ad::Tape t;
  ad::Binding bind(t, store);
  const Tensor a = ad::permute(project(bind, to_tape(t, raw)).coarse, {1, 2, 0}).value();
  const Tensor b = ad::permute(project(bind, to_tape(t, shuffled)).coarse, {1, 2, 0}).value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 5; ++k) CHECK(b[perm[i] * 5 + k] == a[i * 5 + k]);
}

TEST_CASE("gradient reaches projection head parameters") {
  ad::ParameterStore store;
  ProjectionHead::init_params(store, {2, 3}, 8);
  // Nonzero biases so no unit sits exactly on the ReLU kink.
  store.at("proj.conv0.bias") = Tensor({3}, {0.05, -0.03, 0.02});
  const RawFeatureMap raw = random_map(4, 4, 2, 50);
  const Tensor wf = ad::random_tensor({3, 8, 8}, 51);
  const Tensor wc = ad::random_tensor({3, 4, 4}, 52);

  auto loss_of = [&](const ad::ParameterStore& s, std::map<std::string, Tensor>* grads) {
    ad::Tape t;
    ad::Binding bind(t, s);
    const FeaturePyramid out = project(bind, to_tape(t, raw));
    ad::Var l = ad::sum(out.fine * t.constant(wf)) + ad::sum(out.coarse * t.constant(wc));
    if (grads) {
      t.backward(l);
      *grads = bind.gradients();
    }
    return l.value().item();
  };
  std::map<std::string, Tensor> grads;
  loss_of(store, &grads);
  REQUIRE(grads.size() == 4);
  double worst = 0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ad::ParameterStore plus = store, minus = store;
      plus.at(name)[i] += 1e-5;
      minus.at(name)[i] -= 1e-5;
      const double fd = (loss_of(plus, nullptr) - loss_of(minus, nullptr)) / 2e-5;
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("pca variance report") {
  Tensor collinear({50, 3});
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t j = 0; j < 3; ++j) collinear.at(i, j) = (static_cast<double>(i) - 20.0) * (j + 1.0);
  CHECK(pca_variance_report(collinear, 1) == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  Tensor iso({10000, 2});
  for (double& v : iso.data()) v = g(rng);
  CHECK(std::abs(pca_variance_report(iso, 1) - 0.5) < 0.05);
  CHECK(pca_variance_report(iso, 2) == doctest::Approx(1.0));

  const Tensor r = ad::random_tensor({40, 6}, 3);
  double prev = 0;
  for (std::size_t k = 1; k <= 6; ++k) {
    const double v = pca_variance_report(r, k);
    CHECK(v >= prev - 1e-15);
    prev = v;
  }
  CHECK(prev == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(pca_variance_report(ad::random_tensor({3, 6}, 4), 4), ContractError);
  CHECK_THROWS_AS(pca_variance_report(r, 7), ContractError);
  CHECK(feature_rows(Tensor({2, 3, 4})).shape() == Shape{6, 4});
}
