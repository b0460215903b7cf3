#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"
#include "secmlops/synthdata.hpp"

using namespace secmlops;
using namespace secmlops::synthdata;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.train_scenes = 20;
  c.val_scenes = 5;
  c.test_scenes = 5;
  return c;
}

// Fraction of sample points of the box not covered by any occluder.
double raster_visibility(const PedestrianGT& g, const std::vector<Box>& occ, int steps = 400) {
  const Box b = g.box();
  int visible = 0;
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      const double r = b.top + (i + 0.5) * b.height() / steps;
      const double c = b.left + (j + 0.5) * b.width() / steps;
      bool covered = false;
      for (const Box& o : occ) covered |= r > o.top && r < o.bottom && c > o.left && c < o.right;
      visible += !covered;
    }
  }
  return static_cast<double>(visible) / (steps * steps);
}

Scene blank_scene(int h, int w) {
  Scene s;
  s.height = h;
  s.width = w;
  s.pixels.assign(static_cast<std::size_t>(h) * w, 0.0);
  return s;
}

void fill(Scene& s, int top, int left, int bottom, int right, double v) {
  for (int r = top; r < bottom; ++r)
    for (int c = left; c < right; ++c) s.at(r, c) = v;
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("generation is deterministic") {
    const auto a = generate_dataset(small_config(), 7);
    const auto b = generate_dataset(small_config(), 7);
    CHECK(a == b);
    CHECK(dataset_digest(a) == dataset_digest(b));
    CHECK(dataset_digest(a) != dataset_digest(generate_dataset(small_config(), 8)));
  }

  TEST_CASE("split sizes and golden fraction") {
    const auto ds = generate_dataset(small_config(), 1);
    CHECK(ds.split.train.size() == 20);
    CHECK(ds.split.golden.size() == 2);
    CHECK(ds.split.val.size() == 5);
    CHECK(ds.split.test.size() == 5);
  }

  TEST_CASE("zero pedestrians leaves only distractors") {
    auto c = small_config();
    c.pedestrians_min = c.pedestrians_max = 0;
    const auto ds = generate_dataset(c, 3);
    for (const auto& l : ds.labels) {
      CHECK(l.pedestrians.empty());
      CHECK(!l.distractors.empty());
    }
  }

  TEST_CASE("mean pedestrian count tracks the configured mean") {
    const DatasetConfig c;
    double total = 0;
    for (int id = 0; id < 200; ++id) total += generate_scene(c, id, scene_seed(11, id)).second.pedestrians.size();
    CHECK(std::abs(total / 200 - c.mean_pedestrians()) <= 0.5);
  }

  TEST_CASE("visibility") {
    PedestrianGT g{20, 20, 20, 8};
    CHECK(compute_visibility(g, {}) == 1.0);
    CHECK(compute_visibility(g, {g.box()}) == 0.0);
    const Box b = g.box();
    CHECK(compute_visibility(g, {{b.top - 1, b.left - 1, b.bottom + 1, b.left + b.width() / 2}}) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(compute_visibility(PedestrianGT{20, 20, 0, 0}, {}), Error);
  }

  TEST_CASE("visibility agrees with a raster count") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
      PedestrianGT g{rng.uniform(10, 50), rng.uniform(10, 100), rng.uniform(8, 28), 0};
      g.width = kPedestrianAspect * g.height;
      std::vector<Box> occ;
      for (int k = 0, n = static_cast<int>(rng.integer(0, 3)); k < n; ++k) {
        const double t = g.center_row + rng.uniform(-15, 10), l = g.center_col + rng.uniform(-8, 5);
        occ.push_back({t, l, t + rng.uniform(2, 12), l + rng.uniform(2, 8)});
      }
      CHECK(compute_visibility(g, occ) == doctest::Approx(raster_visibility(g, occ)).epsilon(0.01));
    }
  }

  TEST_CASE("uniform scene has no candidates") {
    Scene s = blank_scene(32, 32);
    std::fill(s.pixels.begin(), s.pixels.end(), 0.4);
    CHECK(extract_adversarial_centers(s, {}).centers.empty());
  }

  TEST_CASE("a pole beside a pedestrian yields one candidate at the pole centroid") {
    Scene s = blank_scene(64, 128);
    fill(s, 20, 20, 40, 28, 0.7);
    fill(s, 10, 90, 50, 92, 0.8);
    const PedestrianGT ped{30, 24, 20, 8};
    const auto set = extract_adversarial_centers(s, {ped});
    REQUIRE(set.centers.size() == 1);
    CHECK(std::abs(set.centers[0].first - 30.0) <= 1.0);
    CHECK(std::abs(set.centers[0].second - 91.0) <= 1.0);
  }

  TEST_CASE("candidates keep clear of GT centers") {
    const DatasetConfig c;
    const EdgeParams p;
    for (int id = 0; id < 100; ++id) {
      const auto [scene, labels] = generate_scene(c, id, scene_seed(21, id));
      for (const auto& [r, col] : extract_adversarial_centers(scene, labels.pedestrians, p).centers) {
        for (const auto& g : labels.pedestrians)
          CHECK(std::hypot(r - g.center_row, col - g.center_col) >= p.exclusion_radius);
      }
    }
  }

  TEST_CASE("nearest edge distance") {
    std::vector<std::uint8_t> edges(256, 0);
    edges[8 * 16 + 8] = 1;
    edges[2 * 16 + 3] = 1;
    CHECK(distance_to_nearest_edge(edges, 16, 16, 8.5, 8.5) == 0.0);
    CHECK(distance_to_nearest_edge(edges, 16, 16, 8.5, 11.5) == 3.0);
    CHECK(distance_to_nearest_edge(edges, 16, 16, 6.5, 7.5) == doctest::Approx(std::sqrt(5.0)));
    CHECK(std::isinf(distance_to_nearest_edge(std::vector<std::uint8_t>(256, 0), 16, 16, 1, 1)));
  }

  TEST_CASE("dataset and scene files round trip") {
    const auto ds = generate_dataset(small_config(), 5);
    const auto dir = std::filesystem::temp_directory_path() / "secmlops_ds_test";
    std::filesystem::remove_all(dir);
    write_dataset(ds, dir);
    const auto back = read_dataset(dir);
    CHECK(back == ds);
    std::string magic;
    const Scene s = read_scene_array(dir / "scene_000000.smlb", &magic);
    CHECK(magic == "SMLB");
    CHECK(s.pixels == ds.scene(0).pixels);
  }

  TEST_CASE("config validation") {
    auto c = small_config();
    c.height = 8;
    CHECK_THROWS_AS(c.validate(), Error);
  }
}
