// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <set>

#include "gscnn/image_io.hpp"
#include "gscnn/synth_data.hpp"

using namespace gscnn;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.seed = 11;
  s.count = 6;
  s.height = 32;
  s.width = 32;
  s.num_classes = 4;
  return s;
}

fs::path temp_dir(const char* name) {
  auto p = fs::temp_directory_path() / "gscnn_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("dataset generation is deterministic") {
  auto spec = small_spec();
  auto a = generate_dataset(spec);
  auto b = generate_dataset(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data() == b[i].image.data());
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].gt_boundary == b[i].gt_boundary);
    CHECK(a[i].image_grad.data() == b[i].image_grad.data());
  }

  auto spec2 = spec;
  spec2.seed = 12;
  auto c = generate_dataset(spec2);
  CHECK(a[0].labels.v != c[0].labels.v);
}

TEST_CASE("every sample contains every foreground class and valid values") {
  auto spec = small_spec();
  for (const auto& s : generate_dataset(spec)) {
    CHECK(s.image.shape() == Shape{3, 32, 32});
    CHECK(s.image_grad.shape() == Shape{1, 32, 32});
    std::set<int> present;
    for (int v : s.labels.v) {
      CHECK((v == kIgnoreLabel || (v >= 0 && v < spec.num_classes)));
      present.insert(v);
    }
    for (int k = 1; k < spec.num_classes; ++k) CHECK(present.count(k) == 1);
    for (float v : s.image.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    for (float v : s.image_grad.data()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("ignore border forms a void ring") {
  auto spec = small_spec();
  spec.ignore_border = 2;
  auto samples = generate_dataset(spec);
  const auto& l = samples[0].labels;
  for (int y = 0; y < l.h; ++y)
    for (int x = 0; x < l.w; ++x) {
      bool ring = y < 2 || y >= l.h - 2 || x < 2 || x >= l.w - 2;
      if (ring) CHECK(l.at(y, x) == kIgnoreLabel);
    }
  // boundary targets are never set inside the void ring
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < l.w; ++x) CHECK(samples[0].gt_boundary.at(y, x) == 0);
}

TEST_CASE("generation parameter validation") {
  auto spec = small_spec();
  spec.num_classes = 2;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.height = 30;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.height = 8;
  spec.width = 8;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
}

TEST_CASE("image gradient responds to edges and is binary") {
  auto img = Tensor::zeros({3, 32, 32});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x) img.data()[(c * 32 + y) * 32 + x] = 1.0f;
  auto g = image_gradient(img);
  CHECK(g.shape() == Shape{1, 32, 32});
  bool any = false;
  for (float v : g.data()) {
    CHECK((v == 0.0f || v == 1.0f));
    any = any || v == 1.0f;
  }
  CHECK(any);
  // activation concentrated near the step
  for (int y = 4; y < 28; ++y) {
    CHECK(g.data()[y * 32 + 4] == 0.0f);
    CHECK(g.data()[y * 32 + 28] == 0.0f);
  }

  auto flat = Tensor::filled({3, 32, 32}, 0.5f);
  auto gflat = image_gradient(flat);
  for (float v : gflat.data()) CHECK(v == 0.0f);
}

TEST_CASE("pgm and ppm round trips") {
  auto dir = temp_dir("imgio");
  LabelMap m(5, 7);
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = int(i % 4);
  m.v[3] = kIgnoreLabel;
  auto pgm = (dir / "m.pgm").string();
  write_pgm(pgm, m);
  CHECK(read_pgm(pgm) == m);

  Rng rng(5);
  auto img = Tensor::zeros({3, 6, 4});
  for (auto& v : img.data()) v = float(rng.uniform());
  auto ppm = (dir / "i.ppm").string();
  write_ppm(ppm, img);
  auto back = read_ppm(ppm);
  REQUIRE(back.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5f / 255.0f + 1e-6f);

  CHECK_THROWS(read_pgm(ppm));  // wrong magic
  CHECK_THROWS(read_ppm(pgm));
  CHECK_THROWS(read_pgm((dir / "missing.pgm").string()));
}

TEST_CASE("dataset write/load round trip") {
  auto dir = temp_dir("dataset");
  auto spec = small_spec();
  auto samples = generate_dataset(spec);
  write_dataset(dir.string(), spec, samples);

  auto loaded = load_dataset(dir.string(), spec.supervision_radius);
  CHECK(loaded.num_classes == spec.num_classes);
  CHECK(loaded.height == spec.height);
  CHECK(loaded.width == spec.width);
  REQUIRE(loaded.samples.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded.samples[i].labels == samples[i].labels);
    CHECK(loaded.samples[i].gt_boundary == samples[i].gt_boundary);
    // images go through 8-bit quantization
    for (int64_t j = 0; j < samples[i].image.numel(); ++j)
      CHECK(std::abs(loaded.samples[i].image.data()[j] - samples[i].image.data()[j]) <=
            0.5f / 255.0f + 1e-6f);
  }
  CHECK_THROWS(load_dataset((dir / "nope").string(), 2));
}

TEST_CASE("spec hash tracks every generation parameter") {
  auto spec = small_spec();
  uint64_t base = spec_hash(spec);
  auto mutate = [&](auto f) {
    auto s = small_spec();
    f(s);
    return spec_hash(s);
  };
  CHECK(base == spec_hash(small_spec()));
  CHECK(base != mutate([](DatasetSpec& s) { s.seed = 99; }));
  CHECK(base != mutate([](DatasetSpec& s) { s.count = 7; }));
  CHECK(base != mutate([](DatasetSpec& s) { s.num_classes = 5; }));
  CHECK(base != mutate([](DatasetSpec& s) { s.noise_amplitude = 0.1; }));
  CHECK(base != mutate([](DatasetSpec& s) { s.supervision_radius = 3; }));
}
