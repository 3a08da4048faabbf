#include "doctest.h"

#include "lfsd/config.hpp"

#include <string>

using namespace lfsd;

TEST_CASE("minimal config fills the defaults") {
  const ExperimentConfig c = parse_config("{}");
  CHECK(c.train.steps == 1000);
  CHECK(c.train.T_tau == 25);
  CHECK(c.train.lambda == 1.0);
  CHECK(c.icgen.strength == 0.8);
  CHECK(c.icgen.guidance == 6.0);
  CHECK(c.base_concepts.size() == 5);
  CHECK(c.sessions.size() == 5);
  CHECK(c.methods.size() == 4);
  CHECK(c.seeds.size() == 5);
  CHECK(serialize_config(c) == serialize_config(default_config()));
}

TEST_CASE("serialization round-trips and hashes stably") {
  ExperimentConfig c = default_config();
  c.train.lambda = 2.5;
  c.icgen.guidance = 1.0;
  c.methods = {MethodConfig::preset("plain_ft"), MethodConfig::preset("dfkd_student")};
  const std::string text = serialize_config(c);
  const ExperimentConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  c.train.lambda = 2.0;
  CHECK(config_hash(back) != config_hash(c));
}

TEST_CASE("method presets") {
  CHECK(MethodConfig::preset("plain_ft").distillation == Distillation::none);
  CHECK_FALSE(MethodConfig::preset("plain_ft").icgen);
  CHECK(MethodConfig::preset("lwf").distillation == Distillation::lwf);
  CHECK(MethodConfig::preset("dfkd").distillation == Distillation::data_free);
  CHECK_FALSE(MethodConfig::preset("dfkd").icgen);
  CHECK(MethodConfig::preset("full").icgen);
  CHECK(MethodConfig::preset("dfkd_student").trajectory == Trajectory::student);
  CHECK_THROWS_AS(MethodConfig::preset("dreambooth"), ConfigError);
}

TEST_CASE("more than ten shots is rejected") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"sessions":[{"name":"v","base":"ring","K":11}]})"),
                       doctest::Contains("at most 10"), ConfigError);
  CHECK_NOTHROW(parse_config(R"({"sessions":[{"name":"v","base":"ring","K":10}]})"));
}

TEST_CASE("duplicate tokens are rejected") {
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"sessions":[{"name":"v","base":"ring"},{"name":"v","base":"grid"}]})"),
      doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"sessions":[{"name":"ring","base":"ring"}]})"),
                       doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("syntax errors report line and column") {
  CHECK_THROWS_WITH_AS(parse_config("{\n  \"seeds\": [0,\n  }"), doctest::Contains("line 3"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("{\"a\" 1}"), doctest::Contains("column"), ConfigError);
}

TEST_CASE("semantic errors name their fields and are aggregated") {
  try {
    parse_config(R"({"train":{"lambda":-1},"eval":{"n_samples":0},"icgen":{"s":1.5},"bogus":3})");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("lambda") != std::string::npos);
    CHECK(msg.find("eval.n_samples") != std::string::npos);
    CHECK(msg.find("icgen.s") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(parse_config(R"({"sessions":[{"name":"v","base":"torus"}]})"),
                       doctest::Contains("unknown base"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"schedule":{"beta_start":0.5,"beta_end":0.1}})"),
                       doctest::Contains("beta"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"train":{"steps":"many"}})"), doctest::Contains("train.steps"),
                       ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"icgen":{"m":6}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"methods":["plain_ft",{"name":"x","distillation":"magic"}]})"),
                  ConfigError);
}

TEST_CASE("world assigns tokens after the null token") {
  const ExperimentConfig c = default_config();
  const World w = build_world(c);
  CHECK(w.vocab_size == 11);
  CHECK(w.base_vocab == std::vector<TokenId>{1, 2, 3, 4, 5});
  REQUIRE(w.sessions.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(w.sessions[i].token == TokenId(6 + i));
    CHECK(w.is_base(w.sessions[i].base_token));
    CHECK_FALSE(w.is_base(w.sessions[i].token));
    CHECK(w.concept_of(w.sessions[i].token).token == w.sessions[i].token);
  }
  CHECK(w.name_of(kNullToken) == "null");
  CHECK(w.name_of(1) == "ring");
}
