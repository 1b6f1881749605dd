#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "ncode/config.hpp"

using namespace ncode;

namespace {

bool same_bits(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config round trip for every task default") {
  for (TaskName t : {TaskName::reflection, TaskName::annuli, TaskName::vdp_fit, TaskName::memorize,
                     TaskName::latent_flow_ae}) {
    for (ModelVariant v : {ModelVariant::ncode, ModelVariant::node}) {
      const ExperimentConfig c = default_config(t, v);
      const std::string text = dump_config(c);
      const ExperimentConfig back = parse_config(text);
      CHECK(back == c);
      CHECK(dump_config(back) == text);
    }
  }
}

TEST_CASE("config round trip keeps awkward doubles bit-exact") {
  ExperimentConfig c = default_config(TaskName::annuli);
  c.solver.rtol = 1.0 / 3.0;
  c.solver.atol = std::numeric_limits<double>::denorm_min();
  c.train.lr = 0.1 + 0.2;
  c.horizon = 1e300;
  c.task.r1 = std::nextafter(1.0, 2.0);
  c.seed = std::numeric_limits<std::uint64_t>::max();
  c.out_dir = "runs/\"quoted\" dir";
  const ExperimentConfig back = parse_config(dump_config(c));
  CHECK(back == c);
  CHECK(back.seed == std::numeric_limits<std::uint64_t>::max());
}

TEST_CASE("omitted fields take task defaults") {
  CHECK(parse_config(R"({"task": {"name": "memorize"}})") == default_config(TaskName::memorize));
  CHECK(parse_config(R"({"task": {"name": "annuli"}, "variant": "node"})") ==
        default_config(TaskName::annuli, ModelVariant::node));

  const ExperimentConfig c = parse_config(
      R"({"task": {"name": "reflection", "n_train": 7},
          "solver": {"method": "rk4", "fixed_dt": 0.125},
          "train": {"seed": 42, "epochs": 3}})");
  ExperimentConfig want = default_config(TaskName::reflection);
  want.task.n_train = 7;
  want.solver.method = Method::rk4;
  want.solver.fixed_dt = 0.125;
  want.seed = 42;
  want.train.epochs = 3;
  CHECK(c == want);
}

TEST_CASE("config errors") {
  SUBCASE("malformed JSON reports the line") {
    const std::string msg = error_of("{\n  \"task\": {\"name\": \"reflection\"},\n  \"horizon\": ,\n}");
    CHECK(msg.find("line 3") != std::string::npos);
  }
  SUBCASE("unknown keys are rejected at any depth") {
    CHECK(error_of(R"({"task": {"name": "reflection"}, "seed": 1})").find("unknown key 'seed'") !=
          std::string::npos);
    CHECK(error_of(R"({"task": {"name": "reflection"}, "model": {"f": {"knd": "mlp"}}})")
              .find("config.model.f") != std::string::npos);
  }
  SUBCASE("unknown names list the valid values") {
    CHECK(error_of(R"({"task": {"name": "mnist"}})").find("reflection, annuli") !=
          std::string::npos);
    CHECK(error_of(R"({"task": {"name": "annuli"}, "solver": {"method": "rk45"}})")
              .find("euler, rk4, dopri5") != std::string::npos);
  }
  SUBCASE("type mismatches") {
    CHECK(error_of(R"({"task": {"name": "annuli"}, "horizon": "1"})").find("expected a number") !=
          std::string::npos);
    CHECK(error_of(R"({"task": {"name": "annuli"}, "train": {"epochs": -1}})")
              .find("non-negative integer") != std::string::npos);
    CHECK(!error_of(R"({"task": {"name": "annuli"}, "train": {"shuffle": 1}})").empty());
  }
  SUBCASE("missing task name") {
    CHECK(!error_of(R"({"task": {}})").empty());
    CHECK(!error_of(R"({"horizon": 1.0})").empty());
  }
  SUBCASE("validation runs after parsing") {
    CHECK(error_of(R"({"task": {"name": "annuli"}, "engine": "discrete"})")
              .find("fixed-step") != std::string::npos);
    CHECK(error_of(R"({"task": {"name": "annuli"}, "model": {"x_dim": 3}})").find("x_dim") !=
          std::string::npos);
  }
}

TEST_CASE("checkpoint save/load idempotence") {
  const ExperimentConfig cfg = default_config(TaskName::annuli);
  Rng rng(99);
  Vec params = rand_normal(rng, 40, 0.0, 1.0);
  params[0] = -0.0;
  params[1] = std::numeric_limits<double>::denorm_min();
  params[2] = -std::numeric_limits<double>::max();
  params[3] = 1.0 / 3.0;
  const Rng state(std::numeric_limits<std::uint64_t>::max(), 123456789012345ULL);
  const Checkpoint ck = make_checkpoint(cfg, params, 6, state, 17);
  CHECK(ck.mu.size() == 34);
  CHECK(ck.head.size() == 6);
  CHECK(same_bits(ck.params(), params));

  const std::string text = dump_checkpoint(ck);
  const Checkpoint back = parse_checkpoint(text);
  CHECK(same_bits(back.mu, ck.mu));
  CHECK(same_bits(back.head, ck.head));
  CHECK(back.rng == state);
  CHECK(back.epoch == 17);
  CHECK(back.config == cfg);
  CHECK(dump_checkpoint(back) == text);
  CHECK(text.find("\"format_version\": 1") != std::string::npos);
  CHECK_THROWS_AS(make_checkpoint(cfg, params, 41, state, 0), ShapeError);
}

TEST_CASE("checkpoint version and content errors") {
  const Checkpoint ck = make_checkpoint(default_config(TaskName::reflection), Vec{1.0, 2.0}, 0,
                                        Rng(1), 0);
  std::string text = dump_checkpoint(ck);
  const auto pos = text.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  std::string v2 = text;
  v2.replace(pos, 19, "\"format_version\": 2");
  CHECK_THROWS_AS(parse_checkpoint(v2), MigrationError);
  CHECK_THROWS_AS(parse_checkpoint(R"({"config": {"task": {"name": "annuli"}}})"), MigrationError);

  std::string bad = text;
  bad.replace(bad.find("\"1\""), 3, "\"1x\"");
  CHECK_THROWS_AS(parse_checkpoint(bad), ConfigError);
  CHECK_THROWS_AS(parse_checkpoint("{\"format_version\": 1,"), ConfigError);
}
