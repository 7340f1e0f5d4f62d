#include "mtgp/config.hpp"

#include <gtest/gtest.h>

using namespace mtgp;

TEST(Config, DefaultsFromEmptyObject) {
  const ModelConfig c = parse_config("{}");
  EXPECT_EQ(c.likelihood, Likelihood::poisson);
  EXPECT_EQ(c.rank, 5);
  EXPECT_DOUBLE_EQ(c.priors.rho_time.shape, 5.0);
  EXPECT_DOUBLE_EQ(c.priors.mu_sd, 10.0);
  EXPECT_EQ(c.heteroskedasticity, Heteroskedasticity::sqrt_population);
}

TEST(Config, ParsesNestedBlocks) {
  const ModelConfig c = parse_config(R"({
    "likelihood": "gaussian", "rank": 2, "seed": 42, "chains": 2,
    "mean_model": {"unit_intercepts": false, "covariates": true},
    "priors": {"rho_time": {"shape": 3, "scale": 4}, "beta_sd": 0.5},
    "fixed": {"rho_time": 2.5, "sigma": [0.3], "loadings": [[1, 0], [0, 1], [1, 1]]},
    "treated_unit": "B", "last_pre_time": 2001
  })");
  EXPECT_EQ(c.likelihood, Likelihood::gaussian);
  EXPECT_EQ(c.rank, 2);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_FALSE(c.mean_model.unit_intercepts);
  EXPECT_TRUE(c.mean_model.covariates);
  EXPECT_TRUE(c.mean_model.global_trend);
  EXPECT_DOUBLE_EQ(c.priors.rho_time.scale, 4.0);
  EXPECT_DOUBLE_EQ(c.priors.beta_sd, 0.5);
  ASSERT_TRUE(c.fixed.rho_time.has_value());
  EXPECT_DOUBLE_EQ(*c.fixed.rho_time, 2.5);
  ASSERT_TRUE(c.fixed.loadings.has_value());
  EXPECT_EQ(c.fixed.loadings->rows(), 3);
  EXPECT_DOUBLE_EQ((*c.fixed.loadings)(2, 1), 1.0);
  EXPECT_EQ(c.treated_unit, "B");
  EXPECT_EQ(c.last_pre_time.value(), 2001);
}

TEST(Config, CanonicalJsonRoundTrips) {
  const ModelConfig c = parse_config(
      R"({"likelihood": "gaussian", "rank": 3, "fixed": {"mu": [1.5, 2]}, "t0": 4})");
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(text)), text);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"rnak": 2})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"priors": {"beta_sdd": 1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"likelihood": "binomial"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"rank": -1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fixed": {"loadings": [[1, 0], [1]]}})"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}
