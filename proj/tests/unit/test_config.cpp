#include <doctest.h>

#include <stdexcept>

#include "mrdd/config.hpp"

using namespace mrdd::config;

TEST_SUITE("config") {

TEST_CASE("defaults match the documented implementation settings") {
  ExperimentConfig cfg = parse_config_text("");
  CHECK(cfg.d_c == 10);
  CHECK(cfg.d_s == 10);
  CHECK(cfg.mask_ratio == doctest::Approx(0.7));
  CHECK(cfg.stage1_epochs == 200);
  CHECK(cfg.stage2_epochs == 200);
  CHECK(cfg.batch_size == 512);
  CHECK(cfg.lr == doctest::Approx(5e-4));
  CHECK(cfg.cosine);
  CHECK(cfg.base_channels == 16);
  CHECK(cfg.audit_epochs == 500);
  CHECK(cfg.audit_batch == 128);
  CHECK(cfg.audit_lr == doctest::Approx(1e-4));
  CHECK(cfg.audit_repeats == 10);
  CHECK(cfg.audit_hidden == std::vector<int>{100, 100, 100});
}

TEST_CASE("unknown keys are errors") {
  CHECK_THROWS_WITH_AS(parse_config_text("model.dc = 5\n"),
                       doctest::Contains("unknown key"), std::invalid_argument);
}

TEST_CASE("duplicate keys are errors") {
  CHECK_THROWS_WITH_AS(parse_config_text("model.d_c = 5\nmodel.d_c = 6\n"),
                       doctest::Contains("duplicate"), std::invalid_argument);
}

TEST_CASE("comments and blank lines are ignored") {
  auto cfg = parse_config_text("# header\n\nmodel.d_c = 12  # trailing\n");
  CHECK(cfg.d_c == 12);
}

TEST_CASE("hash is stable across key ordering") {
  auto a = parse_config_text("model.d_c = 8\nmask.ratio = 0.5\n");
  auto b = parse_config_text("mask.ratio = 0.5\nmodel.d_c = 8\n");
  CHECK(a.hash() == b.hash());
  auto c = parse_config_text("mask.ratio = 0.6\nmodel.d_c = 8\n");
  CHECK(a.hash() != c.hash());
}

TEST_CASE("canonical round trip preserves the hash") {
  auto a = parse_config_text("model.d_c = 9\nloss.lambda_d = 0.25\naudit.hidden = 50,50\n");
  auto b = parse_config_text(a.canonical());
  CHECK(a.hash() == b.hash());
  CHECK(b.audit_hidden == std::vector<int>{50, 50});
}

TEST_CASE("validation rejects out-of-range values") {
  CHECK_THROWS(parse_config_text("mask.ratio = 1.5\n"));
  CHECK_THROWS(parse_config_text("model.d_c = 0\n"));
  CHECK_THROWS(parse_config_text("stage1.epochs = 0\n"));
  CHECK_THROWS(parse_config_text("train.split = half\n"));
  CHECK_THROWS(parse_config_text("mask.strategy = diagonal\n"));
}

}  // TEST_SUITE
