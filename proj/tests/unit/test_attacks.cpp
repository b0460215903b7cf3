#include <cmath>

#include "affine.hpp"
#include "doctest.h"
#include "secmlops/attacks.hpp"
#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"

using namespace secmlops;
using namespace secmlops::attacks;

namespace {

double linf(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l1(const Tensor& w) {
  double s = 0;
  for (double v : w.values()) s += std::abs(v);
  return s;
}

synthdata::Dataset poison_dataset(std::uint64_t seed) {
  synthdata::DatasetConfig c;
  c.train_scenes = 120;
  c.val_scenes = 2;
  c.test_scenes = 2;
  return synthdata::generate_dataset(c, seed);
}

std::size_t flippable(const synthdata::Dataset& ds, const CandidateMap& cands) {
  std::size_t n = 0;
  for (int id : ds.split.train)
    if (cands.count(id) && !cands.at(id).centers.empty()) n += ds.gts(id).size();
  return n;
}

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("zero budget leaves the input unchanged") {
    Rng rng(1);
    const Tensor w = affine::random(rng, 30, -1, 1), x = affine::random(rng, 30, 0.2, 0.8);
    CHECK(fgsm(affine::objective(w), x, {0.0}) == x);
  }

  TEST_CASE("fgsm on a linear loss") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor w = affine::random(rng, 50, -1, 1), x = affine::random(rng, 50, 0.2, 0.8);
      const double eps = 0.03;
      const Tensor adv = fgsm(affine::objective(w), x, {eps});
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(adv[i] - x[i] == doctest::Approx(eps * (w[i] > 0 ? 1 : -1)));
      CHECK(std::abs(affine::value(w, 0, adv) - affine::value(w, 0, x) - eps * l1(w)) <= 1e-9);
      CHECK(linf(adv, x) <= eps + 1e-15);
    }
  }

  TEST_CASE("fgsm respects the box near the pixel range edge") {
    Rng rng(3);
    const Tensor w = affine::random(rng, 40, -1, 1), x = affine::random(rng, 40, 0.0, 1.0);
    const Tensor adv = fgsm(affine::objective(w), x, {0.03});
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(adv[i] >= 0.0);
      CHECK(adv[i] <= 1.0);
    }
    CHECK(linf(adv, x) <= 0.03 + 1e-15);
  }

  TEST_CASE("single pgd step equals fgsm") {
    Rng rng(4);
    const Tensor w = affine::random(rng, 40, -1, 1), x = affine::random(rng, 40, 0.0, 1.0);
    CHECK(pgd(affine::objective(w), x, {0.02, 0.02, 1}) == fgsm(affine::objective(w), x, {0.02}));
  }

  TEST_CASE("pgd iterates stay in the ball and reach the linear optimum") {
    Rng rng(5);
    const Tensor w = affine::random(rng, 40, -1, 1), x = affine::random(rng, 40, 0.2, 0.8);
    const double eps = 0.02;
    int seen = 0;
    const Tensor adv = pgd(affine::objective(w), x, {eps, 0.005, 5}, [&](int, const Tensor& xk) {
      ++seen;
      CHECK(linf(xk, x) <= eps + 1e-15);
    });
    CHECK(seen == 5);
    const double gain_pgd = affine::value(w, 0, adv) - affine::value(w, 0, x);
    const double gain_fgsm = affine::value(w, 0, fgsm(affine::objective(w), x, {0.005})) - affine::value(w, 0, x);
    CHECK(gain_pgd >= gain_fgsm);
    CHECK(std::abs(gain_pgd - eps * l1(w)) <= 1e-9);
  }

  TEST_CASE("deepfool on an affine classifier") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor w = affine::random(rng, 30, -1, 1), x = affine::random(rng, 30, 0.3, 0.7);
      const double b = 0.05 - affine::value(w, 0, x) + rng.uniform(0, 0.1);
      const double f0 = affine::value(w, b, x);
      REQUIRE(f0 > 0);
      const auto r = deepfool(affine::objective(w, b), x, {0.0, 50});
      CHECK(r.iterations == 1);
      CHECK(std::abs(affine::value(w, b, r.adversarial)) <= 1e-9);
      double wn2 = 0;
      for (double v : w.values()) wn2 += v * v;
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(r.adversarial[i] - x[i] + f0 * w[i] / wn2) <= 1e-9);
      CHECK(affine::value(w, b, deepfool(affine::objective(w, b), x, {0.1, 50}).adversarial) < 0);
    }
  }

  TEST_CASE("deepfool below the boundary takes no steps") {
    Rng rng(7);
    const Tensor w = affine::random(rng, 10, -1, 1), x = affine::random(rng, 10, 0.3, 0.7);
    const auto r = deepfool(affine::objective(w, -100.0), x, {0.03, 50});
    CHECK(r.iterations == 0);
    CHECK(r.adversarial == x);
  }

  TEST_CASE("deepfool with a flat objective fails") {
    const Tensor x({4}, 0.5);
    CHECK_THROWS_AS(deepfool(affine::objective(Tensor({4}, 0.0), 1.0), x, {0.0, 5}), Error);
  }

  TEST_CASE("detector fgsm stays within budget") {
    const auto ds = poison_dataset(1);
    const auto model = detector::make_model({}, 1);
    const Tensor x = detector::scene_tensor(ds.scene(0));
    const Tensor adv = fgsm(model, x, ds.gts(0), {0.03});
    CHECK(linf(adv, x) <= 0.03 + 1e-15);
    for (double v : adv.values()) CHECK((v >= 0.0 && v <= 1.0));
  }

  TEST_CASE("gamma=0 poisons nothing") {
    const auto ds = poison_dataset(2);
    const auto cands = candidate_map(ds, ds.split.train);
    const auto r = poison_labels(ds, {0.0, 1}, cands);
    CHECK(r.manifest.empty());
    CHECK(r.dataset == ds);
  }

  TEST_CASE("gamma=1 moves every flippable label onto a candidate") {
    const auto ds = poison_dataset(3);
    const auto cands = candidate_map(ds, ds.split.train);
    const auto r = poison_labels(ds, {1.0, 1}, cands);
    CHECK(r.manifest.size() == flippable(ds, cands));
    for (const auto& f : r.manifest) {
      const auto& centers = cands.at(f.scene_id).centers;
      CHECK(std::find(centers.begin(), centers.end(), f.new_center) != centers.end());
      const auto& gt = r.dataset.gts(f.scene_id)[static_cast<std::size_t>(f.label_index)];
      CHECK(gt.center_row == f.new_center.first);
      CHECK(gt.center_col == f.new_center.second);
    }
    for (int id : ds.split.golden) CHECK(r.dataset.gts(id) == ds.gts(id));
  }

  TEST_CASE("flip count concentrates around gamma * labels") {
    const auto ds = poison_dataset(4);
    const auto cands = candidate_map(ds, ds.split.train);
    const std::size_t n = flippable(ds, cands);
    REQUIRE(n > 100);
    double total = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) total += poison_labels(ds, {0.1, seed}, cands).manifest.size();
    const double per_thousand = 1000.0 * total / 30.0 / static_cast<double>(n);
    CHECK(per_thousand >= 80);
    CHECK(per_thousand <= 120);
  }

  TEST_CASE("labels and budgets") {
    CHECK(AttackSpec::make_fgsm(0.03).label() == "fgsm(eps=0.03)");
    CHECK(AttackSpec::make_deepfool(0.03).label() == "deepfool(xi=0.03)");
    CHECK(AttackSpec::make_pgd(0.02, 0.005, 5).label() == "pgd(eps=0.02,alpha=0.005,k=5)");
    CHECK(AttackSpec::make_deepfool(0.1).budget() == 0.1);
    CHECK_THROWS_AS(parse_attack_kind("cw"), Error);
    const nlohmann::json j = AttackSpec::make_pgd(0.02, 0.01, 3);
    CHECK(j.get<AttackSpec>() == AttackSpec::make_pgd(0.02, 0.01, 3));
  }
}
