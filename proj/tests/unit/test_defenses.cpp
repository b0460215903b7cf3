#include <cmath>

#include "doctest.h"
#include "secmlops/defenses.hpp"
#include "secmlops/error.hpp"

using namespace secmlops;
using namespace secmlops::defenses;

namespace {

synthdata::Dataset tiny_dataset(std::uint64_t seed) {
  synthdata::DatasetConfig c;
  c.train_scenes = 8;
  c.val_scenes = 4;
  c.test_scenes = 2;
  return synthdata::generate_dataset(c, seed);
}

std::vector<Sample> batch_of(const synthdata::Dataset& ds, std::initializer_list<int> ids) {
  std::vector<Sample> out;
  for (int id : ids) out.push_back({ds.scene(id), ds.gts(id)});
  return out;
}

detector::TrainConfig quick_train() {
  detector::TrainConfig c;
  c.epochs = 2;
  c.learning_rate = 0.02;
  c.momentum = 0.9;
  return c;
}

}  // namespace

TEST_SUITE("defenses") {
  TEST_CASE("cutmix with P=0 is a no-op") {
    const auto ds = tiny_dataset(1);
    const auto batch = batch_of(ds, {0, 1, 2});
    CutMixSpec spec;
    spec.probability = 0;
    const auto out = cutmix(batch, spec);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(out[i].scene == batch[i].scene);
      CHECK(out[i].gts == batch[i].gts);
    }
  }

  TEST_CASE("cutmix with lambda=1 cuts nothing") {
    const auto ds = tiny_dataset(1);
    const auto batch = batch_of(ds, {0, 1, 2});
    CutMixSpec spec;
    spec.probability = 1;
    spec.fixed_lambda = 1.0;
    const auto out = cutmix(batch, spec);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(out[i].scene == batch[i].scene);
      CHECK(out[i].gts == batch[i].gts);
    }
  }

  TEST_CASE("cutmix with lambda=0 swaps a pair") {
    const auto ds = tiny_dataset(2);
    const auto batch = batch_of(ds, {0, 1});
    CutMixSpec spec;
    spec.probability = 1;
    spec.fixed_lambda = 0.0;
    const auto out = cutmix(batch, spec);
    CHECK(out[0].scene.pixels == batch[1].scene.pixels);
    CHECK(out[1].scene.pixels == batch[0].scene.pixels);
    CHECK(out[0].gts == batch[1].gts);
    CHECK(out[1].gts == batch[0].gts);
  }

  TEST_CASE("cutmix needs two scenes") {
    const auto ds = tiny_dataset(2);
    CHECK_THROWS_AS(cutmix(batch_of(ds, {0}), CutMixSpec{}), Error);
  }

  TEST_CASE("zero-budget adversarial training equals plain training") {
    const auto ds = tiny_dataset(3);
    const auto init = detector::make_model({}, 3);
    const auto plain = detector::train(init, ds, quick_train());
    const auto adv = adversarial_train(init, ds, quick_train(), {0.0, 0.005, 5});
    CHECK(adv.model == plain.model);
    CHECK(adv.history == plain.history);
  }

  TEST_CASE("pgd training inputs stay within the ball") {
    const auto ds = tiny_dataset(4);
    const auto model = detector::make_model({}, 4);
    for (int id : ds.split.train) {
      const auto x = detector::scene_tensor(ds.scene(id));
      attacks::pgd(model, x, ds.gts(id), {0.02, 0.005, 5}, [&](int, const diffnet::Tensor& xk) {
        double m = 0;
        for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(xk[i] - x[i]));
        CHECK(m <= 0.02 + 1e-15);
      });
    }
  }

  TEST_CASE("empty stack equals plain training") {
    const auto ds = tiny_dataset(5);
    const auto init = detector::make_model({}, 5);
    const auto r = apply_stack(init, ds, DefenseStack{}, quick_train());
    const auto plain = detector::train(init, ds, quick_train());
    CHECK(r.model == plain.model);
    CHECK(r.history == plain.history);
    CHECK(DefenseStack{}.label() == "none");
  }

  TEST_CASE("early stopping alone records patience exhaustion") {
    const auto ds = tiny_dataset(6);
    DefenseStack stack;
    stack.early_stopping = 2;
    auto cfg = quick_train();
    cfg.epochs = 10;
    detector::TrainHooks hooks;
    hooks.validation_metric = [](const detector::DetectorModel&, int epoch) { return 1.0 * epoch; };
    const auto r = apply_stack(detector::make_model({}, 6), ds, stack, cfg, hooks);
    CHECK(r.provenance.stop_reason == "patience-exhausted");
    CHECK(r.provenance.epochs_run == 3);
    CHECK(r.provenance.selected_epoch == 1);
  }

  TEST_CASE("full stack provenance round trips") {
    const auto ds = tiny_dataset(7);
    const auto stack = DefenseStack::secmlops();
    CHECK(stack.cutmix->probability == 0.5);
    CHECK(*stack.early_stopping == 15);
    CHECK(stack.adversarial_training->epsilon == 0.02);
    CHECK(stack.distillation->alpha == 0.5);
    CHECK(stack.label() == "CM+AT+ES+MD");
    auto cfg = quick_train();
    cfg.epochs = 1;
    const auto r = apply_stack(detector::make_model({}, 7), ds, stack, cfg);
    CHECK(r.provenance.order ==
          std::vector<std::string>{"cutmix", "adversarial_training", "early_stopping", "distillation"});
    const nlohmann::json j = r.provenance;
    CHECK(j.get<Provenance>() == r.provenance);
    CHECK(nlohmann::json::parse(j.dump()).get<Provenance>() == r.provenance);
  }
}
