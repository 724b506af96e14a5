#include <doctest/doctest.h>

#include <string>

#include "jebm/config.hpp"

using namespace jebm;

namespace {

std::string line_of_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("toml subset: sections, scalars, strings, arrays, comments") {
  TomlDocument doc = parse_toml(
      "schema_version = 1  # header\n"
      "\n"
      "[model]\n"
      "latent_dims = [2, 2]\n"
      "observation_sigma = 0.3\n"
      "dtype = \"f64\"\n"
      "decoder_tanh = true\n"
      "\n"
      "[data]\n"
      "centers = [[-2.0, 0.0], [2.0, 0.0]]\n"
      "path = \"a\\\"b\\n\"\n");
  CHECK(doc.root.at("schema_version").as_int() == 1);
  const TomlTable& model = doc.sections.at("model");
  CHECK(model.at("observation_sigma").as_double() == 0.3);
  CHECK(model.at("dtype").as_string() == "f64");
  CHECK(model.at("decoder_tanh").as_bool());
  auto dims = model.at("latent_dims").as_array();
  REQUIRE(dims.size() == 2);
  CHECK(dims[1].as_int() == 2);
  auto centers = doc.sections.at("data").at("centers").as_array();
  CHECK(centers[0].as_array()[0].as_double() == -2.0);
  CHECK(doc.sections.at("data").at("path").as_string() == "a\"b\n");
}

TEST_CASE("parse errors carry 1-based line numbers") {
  CHECK(line_of_error([] { parse_toml("a = 1\nb = = 2\n"); }).find("line 2") !=
        std::string::npos);
  CHECK(line_of_error([] { parse_toml("x 3\n"); }).find("line 1") !=
        std::string::npos);
  CHECK(line_of_error([] { parse_toml("k = 1\nk = 2\n"); }).find("duplicate") !=
        std::string::npos);
  CHECK(line_of_error([] { parse_toml("a = \"oops\n"); }).find("line 1") !=
        std::string::npos);
  CHECK(line_of_error([] { parse_toml("v = [1, 2\n"); }).find("unterminated") !=
        std::string::npos);
  CHECK(line_of_error([] { parse_toml("a = 1 trailing\n"); }).find("trailing") !=
        std::string::npos);
}

TEST_CASE("bind_config requires schema_version 1") {
  CHECK_THROWS_AS(bind_config(parse_toml("")), ConfigError);
  CHECK(line_of_error([] { bind_config(parse_toml("schema_version = 2\n")); })
            .find("schema_version") != std::string::npos);
  AppConfig app = bind_config(parse_toml("schema_version = 1\n"));
  CHECK(app.model.latent_dims == std::vector<std::size_t>({2, 2}));
  CHECK(app.trainer.prior_sampler.steps == 40);
  CHECK(app.trainer.prior_sampler.step_size == 0.1);
  CHECK(app.model.observation_sigma == 0.3);
}

TEST_CASE("unknown sections and keys are rejected with their line") {
  std::string msg = line_of_error([] {
    bind_config(parse_toml("schema_version = 1\n[model]\nlatent_dimz = [2]\n"));
  });
  CHECK(msg.find("latent_dimz") != std::string::npos);
  CHECK(msg.find("line 3") != std::string::npos);

  CHECK(line_of_error([] {
          bind_config(parse_toml("schema_version = 1\n[oops]\nx = 1\n"));
        }).find("[oops]") != std::string::npos);
}

TEST_CASE("full config binds every section") {
  AppConfig app = bind_config(parse_toml(
      "schema_version = 1\n"
      "[model]\n"
      "latent_dims = [1, 1]\n"
      "data_dim = 1\n"
      "energy_hidden = [8]\n"
      "conditional_hidden = [8]\n"
      "decoder_hidden = [8]\n"
      "inference_hidden = [8]\n"
      "observation_sigma = 0.5\n"
      "[prior_sampler]\n"
      "steps = 15\n"
      "step_size = 0.05\n"
      "space = \"epsilon\"\n"
      "clamp_grad = 10.0\n"
      "[posterior_sampler]\n"
      "steps = 5\n"
      "noise_enabled = false\n"
      "[trainer]\n"
      "mode = \"mle\"\n"
      "batch_size = 32\n"
      "iterations = 100\n"
      "lr_alpha = 0.001\n"
      "seed = 7\n"
      "[data]\n"
      "kind = \"rings\"\n"
      "n = 500\n"
      "radii = [1.0, 2.5]\n"));
  CHECK(app.model.latent_dims == std::vector<std::size_t>({1, 1}));
  CHECK(app.model.observation_sigma == 0.5);
  CHECK(app.trainer.prior_sampler.steps == 15);
  CHECK(app.trainer.prior_sampler.space == LangevinConfig::Space::Epsilon);
  REQUIRE(app.trainer.prior_sampler.clamp_grad.has_value());
  CHECK(*app.trainer.prior_sampler.clamp_grad == 10.0);
  CHECK(app.trainer.posterior_sampler.steps == 5);
  CHECK(!app.trainer.posterior_sampler.noise_enabled);
  CHECK(app.trainer.mode == TrainerConfig::Mode::Mle);
  CHECK(app.trainer.batch_size == 32);
  CHECK(app.trainer.seed == 7);
  CHECK(app.data.kind == "rings");
  CHECK(app.data.n == 500);
}

TEST_CASE("invalid enum values are rejected") {
  CHECK_THROWS_AS(bind_config(parse_toml(
                      "schema_version = 1\n[trainer]\nmode = \"sgd\"\n")),
                  ConfigError);
  CHECK_THROWS_AS(bind_config(parse_toml(
                      "schema_version = 1\n[prior_sampler]\nspace = \"w\"\n")),
                  ConfigError);
  CHECK_THROWS_AS(bind_config(parse_toml(
                      "schema_version = 1\n[data]\nkind = \"stripes\"\n")),
                  ConfigError);
  CHECK_THROWS_AS(bind_config(parse_toml(
                      "schema_version = 1\n[trainer]\nbatch_size = -4\n")),
                  ConfigError);
}

TEST_CASE("make_dataset is deterministic in the seed") {
  DataConfig cfg;
  cfg.kind = "pinwheel";
  cfg.n = 100;
  Dataset a = make_dataset(cfg, 5);
  Dataset b = make_dataset(cfg, 5);
  Dataset c = make_dataset(cfg, 6);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
}
