#include <filesystem>

#include "doctest.h"
#include "secmlops/error.hpp"
#include "secmlops/experiment.hpp"

using namespace secmlops;
using namespace secmlops::experiment;

TEST_SUITE("experiment") {
  TEST_CASE("empty object gives the defaults") {
    const auto c = parse_config(nlohmann::json::object());
    CHECK(c.defenses.label() == "CM+AT+ES+MD");
    REQUIRE(c.attacks.size() == 2);
    CHECK(c.attacks[0].label() == attacks::AttackSpec::make_fgsm(0.03).label());
    CHECK(c.seeds == std::vector<std::uint64_t>{0});
    CHECK(config_digest(c) == config_digest(default_config()));
  }

  TEST_CASE("schema violations") {
    CHECK_THROWS_AS(parse_config(nlohmann::json::array()), Error);
    try {
      parse_config({{"trian", {{"epochs", 3}}}});
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kInvalidConfig);
      CHECK(std::string(e.what()).find("trian") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config({{"seeds", nlohmann::json::array()}}), Error);
    CHECK_THROWS_AS(parse_config({{"train", {{"epochs", "many"}}}}), Error);
    CHECK_THROWS_AS(parse_config({{"drift", {{"window", 10}}}}), Error);
  }

  TEST_CASE("presets and overrides") {
    const auto c = parse_config({{"defenses", "none"}, {"seeds", {3, 4}}, {"poison", {{"gamma", 0.1}}}});
    CHECK(c.defenses.label() == "none");
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
    REQUIRE(c.poison);
    CHECK(c.poison->gamma == doctest::Approx(0.1));
    CHECK(attack_label(c, "clean") == "dp(gamma=0.1)");
    CHECK(attack_label(c, "fgsm") == "dp(gamma=0.1)+fgsm");
    CHECK(attack_label(default_config(), "fgsm") == "fgsm");
  }

  TEST_CASE("digest ignores output_dir and sees everything else") {
    auto a = default_config();
    auto b = a;
    b.output_dir = "/elsewhere";
    CHECK(config_digest(a) == config_digest(b));
    b.train.epochs += 1;
    CHECK(config_digest(a) != config_digest(b));
    CHECK(parse_config(nlohmann::json(a)).output_dir == a.output_dir);
    CHECK(config_digest(parse_config(nlohmann::json(a))) == config_digest(a));
  }

  TEST_CASE("relative output_dir resolves against the config directory") {
    const auto c = parse_config({{"output_dir", "runs"}}, "/tmp/cfg");
    CHECK(c.output_dir == std::filesystem::path("/tmp/cfg/runs"));
    CHECK(parse_config({{"output_dir", "/abs"}}, "/tmp/cfg").output_dir == std::filesystem::path("/abs"));
  }

  TEST_CASE("report stems") {
    auto c = default_config();
    c.attacks.push_back(c.attacks[0]);
    CHECK(report_stem(0, 0, c) == "seed0-clean");
    const auto first = report_stem(7, 1, c);
    CHECK(first.rfind("seed7-fgsm", 0) == 0);
    CHECK(report_stem(7, 3, c) == first + "-3");
    CHECK(report_stem(7, 2, c) != first);
  }

  TEST_CASE("replay window") {
    Rng rng(1);
    const std::vector<double> pool{0.2, 0.9};
    const auto w = replay_window(pool, 100, 0.3, rng);
    CHECK(w.size() == 100);
    for (double v : w) CHECK((v == doctest::Approx(0.5) || v == 1.0));
    CHECK_THROWS_AS(replay_window({}, 5, 0, rng), Error);
  }
}
