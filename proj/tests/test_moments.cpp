#include <catch2/catch_amalgamated.hpp>

#include "innenv/moments.hpp"
#include "innenv/simulate.hpp"

using namespace innenv;

namespace {

Theta random_theta(std::uint64_t seed, int r, int u, int d) {
  auto gen = rng_stream(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int q = (r - u) * u + (r - u - d) * d;
  Vec v(q);
  for (int j = 0; j < q; ++j) v(j) = gauss(gen);
  return Theta::from_flat(v, r, u, d);
}

Dataset small_dataset(std::uint64_t seed, int n, int r, int p) {
  auto gen = rng_stream(seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat Y(n, r), X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < r; ++j) Y(i, j) = gauss(gen);
    for (int j = 0; j < p; ++j) X(i, j) = gauss(gen);
  }
  return {std::move(Y), std::move(X)};
}

}  // namespace

TEST_CASE("moment rows are centered cross products") {
  Dataset data = small_dataset(3, 12, 4, 2);
  Theta theta = random_theta(4, 4, 1, 1);
  Mat F = moment_vector(theta, data);
  REQUIRE(F.rows() == 12);
  REQUIRE(F.cols() == 2 * 3);  // (r-u-d) x (u+p)

  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat G = data.Y * bs.Gamma0 * bs.B0;
  Mat H(12, 3);
  H << data.Y * bs.Gamma, data.X;
  Eigen::RowVectorXd gbar = G.colwise().mean(), hbar = H.colwise().mean();
  for (int i = 0; i < 12; ++i)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(F(i, a * 3 + b) ==
              Catch::Approx((G(i, a) - gbar(a)) * (H(i, b) - hbar(b))).margin(1e-12));

  // centered columns of an all-products matrix average to the centered cross moment
  CHECK(gmm_objective(theta, data) ==
        Catch::Approx(F.colwise().mean().squaredNorm()).margin(1e-15));
}

TEST_CASE("structured data with no static variation gives zero moments") {
  Theta theta = random_theta(9, 4, 1, 1);
  InnerEnvelopeBases bs = theta_to_bases(theta);
  auto gen = rng_stream(10, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 40;
  Mat Y(n, 4), X(n, 2);
  for (int i = 0; i < n; ++i) {
    const double s = gauss(gen), t = gauss(gen);
    Y.row(i) = (bs.Gamma * s + bs.Gamma0 * bs.B * t).transpose();
    X(i, 0) = gauss(gen);
    X(i, 1) = gauss(gen);
  }
  Dataset data{std::move(Y), std::move(X)};
  Mat F = moment_vector(theta, data);
  CHECK(F.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(gmm_objective(theta, data) < 1e-25);
}

TEST_CASE("moment means vanish at the generating configuration") {
  for (std::uint64_t seed : {21u, 22u}) {
    GeneratedData d = generate({ScenarioKind::linear_normal, 2000, seed});
    Theta truth = bases_to_theta(d.truth);
    Mat F = moment_vector(truth, d.dataset);
    Eigen::RowVectorXd mu = F.colwise().mean();
    Mat D1 = covariance(F);
    for (int j = 0; j < F.cols(); ++j) {
      const double se = std::sqrt(D1(j, j) / F.rows());
      CHECK(std::abs(mu(j)) <= 4.0 * se);
    }
  }
}

TEST_CASE("objective prefers the generating configuration") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GeneratedData d = generate({ScenarioKind::linear_normal, 1000, 100 + seed});
    Theta truth = bases_to_theta(d.truth);
    auto gen = rng_stream(200 + seed, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec dir(truth.q());
    for (int j = 0; j < truth.q(); ++j) dir(j) = gauss(gen);
    dir *= 0.5 / dir.norm();
    Theta pert = Theta::from_flat(truth.flat() + dir, truth.r, truth.u, truth.d);
    if (gmm_objective(truth, d.dataset) < gmm_objective(pert, d.dataset)) ++wins;
  }
  CHECK(wins >= 18);

  // small-step continuity probe
  GeneratedData d = generate({ScenarioKind::linear_normal, 500, 77});
  Theta theta = random_theta(5, 4, 1, 1);
  const double f0 = gmm_objective(theta, d.dataset);
  Vec bumped = theta.flat();
  bumped(2) += 1e-7;
  const double f1 =
      gmm_objective(Theta::from_flat(bumped, 4, 1, 1), d.dataset);
  CHECK(std::abs(f1 - f0) < 1e-3 * (1.0 + std::abs(f0)));
}

TEST_CASE("noise-free structured data is fit exactly") {
  GeneratedData frame = generate({ScenarioKind::linear_normal, 2, 1});
  auto gen = rng_stream(30, 0);
  std::uniform_real_distribution<double> unif(-5.0, 5.0);
  const int n = 300;
  Mat Y(n, 4), X(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x1 = unif(gen), x2 = unif(gen);
    X(i, 0) = x1;
    X(i, 1) = x2;
    Y.row(i) = (frame.truth.Gamma * x1 + frame.truth.Gamma0 * frame.truth.B * (x1 + x2))
                   .transpose();
  }
  Dataset data{std::move(Y), std::move(X)};
  GmmResult res = fit_gmm(data, 1, 1, {}, 4, 5);
  CHECK(res.objective_value < 1e-8);
}

TEST_CASE("fit recovers the material space and scales like root n") {
  MomentConfig cfg;
  std::vector<double> traces400, traces1600;
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    GeneratedData d4 = generate({ScenarioKind::linear_normal, 400, 300 + rep});
    GeneratedData d16 = generate({ScenarioKind::linear_normal, 1600, 400 + rep});
    GmmResult r4 = fit_gmm(d4.dataset, 1, 1, cfg, 6, rep);
    GmmResult r16 = fit_gmm(d16.dataset, 1, 1, cfg, 6, rep);
    traces400.push_back(r4.covariance.trace());
    traces1600.push_back(r16.covariance.trace());
    if (rep == 0) {
      CHECK(r16.converged);
      CHECK(r16.n_starts_used == 7);  // pilot plus the six requested restarts
      CHECK(subspace_distance(r16.bases.Gamma, d16.truth.Gamma) < 0.2);
      // sandwich is symmetric positive semidefinite
      Eigen::SelfAdjointEigenSolver<Mat> es(r16.covariance);
      CHECK(es.eigenvalues().minCoeff() > -1e-12);
      CHECK(r16.C1.rows() == 6);
      CHECK(r16.C1.cols() == 5);
      CHECK(r16.D1.rows() == 6);
    }
  }
  std::vector<double> ratios;
  for (size_t i = 0; i < traces400.size(); ++i)
    ratios.push_back(traces400[i] / traces1600[i]);
  std::sort(ratios.begin(), ratios.end());
  const double median_ratio = ratios[1];
  CHECK(median_ratio > 2.5);
  CHECK(median_ratio < 6.0);
}

TEST_CASE("uniform response rescaling leaves the fitted spaces alone") {
  GeneratedData d = generate({ScenarioKind::linear_normal, 1000, 55});
  GmmResult base = fit_gmm(d.dataset, 1, 1, {}, 6, 9);
  Dataset scaled{Mat(3.0 * d.dataset.Y), d.dataset.X};
  GmmResult refit = fit_gmm_from(scaled, base.theta_hat);
  InnerEnvelopeBases rb = theta_to_bases(refit.theta_hat);
  CHECK(subspace_distance(rb.Gamma, base.bases.Gamma) < 0.05);
  CHECK(subspace_distance(Mat(rb.Gamma0 * rb.B), Mat(base.bases.Gamma0 * base.bases.B)) <
        0.05);
  CHECK(subspace_distance(Mat(rb.Gamma0 * rb.B0),
                          Mat(base.bases.Gamma0 * base.bases.B0)) < 0.05);
}

TEST_CASE("input validation") {
  Dataset tiny = small_dataset(1, 4, 4, 2);  // n = 4 <= q = 5
  CHECK_THROWS_AS(fit_gmm(tiny, 1, 1), DimensionError);
  Dataset ok = small_dataset(1, 50, 4, 1);
  // u=2,d=1,p=1: q = 5 but only 1x3 moment conditions
  CHECK_THROWS_AS(fit_gmm(ok, 2, 1), DimensionError);
  CHECK_THROWS_AS(fit_gmm(ok, 0, 1), DimensionError);
  CHECK_THROWS_AS(fit_gmm(ok, 2, 2), DimensionError);
  Dataset fine = small_dataset(1, 50, 4, 2);
  CHECK_THROWS_AS(fit_gmm(fine, 1, 1, {}, 0), DimensionError);
}
