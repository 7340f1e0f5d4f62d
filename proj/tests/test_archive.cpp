#include "mtgp/archive.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace mtgp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtgp_archive_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PosteriorDraws small_draws() {
  PosteriorDraws d;
  d.names = {"log_rho_time", "beta[0,1]", "z_latent[2,0]"};
  d.seed = 42;
  d.warmup = 150;
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(4, 3);
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 3; ++k) m(i, k) = std::sin(1.0 + c * 13 + i * 3 + k) / 3.0 + 1e-17 * k;
    }
    d.chains.push_back(m);
    d.log_density.push_back(Eigen::VectorXd::LinSpaced(4, -10.0 - c, -9.0 - c / 7.0));
    d.accept_stat.push_back(Eigen::VectorXd::Constant(4, 0.8 + 0.01 * c));
    d.divergent.push_back({0, static_cast<char>(c), 0, 0});
    d.step_size.push_back(0.1 / 3.0 + c);
    d.mass_diag.push_back(Eigen::VectorXd::Constant(3, 1.0 / 7.0));
  }
  return d;
}

}  // namespace

TEST(Archive, DrawsRoundTripIsExact) {
  const fs::path dir = scratch("draws");
  const PosteriorDraws d = small_draws();
  write_draws(d, dir.string());
  const PosteriorDraws back = read_draws(dir.string());
  EXPECT_EQ(back.names, d.names);
  EXPECT_EQ(back.seed, d.seed);
  EXPECT_EQ(back.warmup, d.warmup);
  ASSERT_EQ(back.n_chains(), 2);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(back.chains[c], d.chains[c]);
    EXPECT_EQ(back.log_density[c], d.log_density[c]);
    EXPECT_EQ(back.accept_stat[c], d.accept_stat[c]);
    EXPECT_EQ(back.divergent[c], d.divergent[c]);
    EXPECT_EQ(back.step_size[c], d.step_size[c]);
    EXPECT_EQ(back.mass_diag[c], d.mass_diag[c]);
  }
  EXPECT_EQ(back.n_divergent(), 1);
  fs::remove_all(dir);
}

TEST(Archive, ManifestRoundTrip) {
  RunManifest m;
  m.config_hash = "abc";
  m.seed = 9;
  m.data_path = "/x/panel.csv";
  m.data_fingerprint = "f00d";
  m.chains = 4;
  m.divergences_per_chain = {0, 1, 0, 2};
  m.divergences = 3;
  m.max_rhat = 1.004;
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.command, "fit");
  EXPECT_DOUBLE_EQ(*back.max_rhat, 1.004);

  m.max_rhat.reset();
  const std::string single = manifest_to_json(m);
  EXPECT_NE(single.find("unavailable"), std::string::npos);
  EXPECT_FALSE(manifest_from_json(single).max_rhat.has_value());
}

TEST(Archive, Errors) {
  EXPECT_THROW(manifest_from_json("{}"), ArchiveError);
  EXPECT_THROW(manifest_from_json("not json"), ArchiveError);
  const fs::path dir = scratch("empty");
  EXPECT_THROW(read_draws(dir.string()), ArchiveError);
  EXPECT_THROW(read_text((dir / "missing.txt").string()), std::exception);
  fs::remove_all(dir);
}
