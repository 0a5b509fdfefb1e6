#pragma once

#include "innenv/core.hpp"
#include "innenv/subspace.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace innenv {

enum class ScenarioKind {
  linear_normal,        // 4-dim response, uniform regressors, normal errors
  nonlinear_t,          // same spaces, nonlinear means, heavy-tailed errors
  sec3_linear,          // 3-dim response, linear normal means
  sec3_nonlinear_mean,  // squared first mean component
  sec3_heteroskedastic, // multiplicative noise in the third response
  iris_synthetic        // iris measurements + two noise responses
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::linear_normal;
  int n = 100;
  std::uint64_t seed = 0;
};

struct GeneratedData {
  Dataset dataset;
  InnerEnvelopeBases truth;  // empty matrices when no ground truth exists (iris)
  Mat beta_true;             // r x p; empty when the mean is not linear in X
};

// one draw of a multivariate t with 5 df, mean zero and covariance cov*I
inline Vec t5_draw(int dim, double cov, std::mt19937_64& gen) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::chi_squared_distribution<double> chi5(5.0);
  Vec z(dim);
  for (int j = 0; j < dim; ++j) z(j) = gauss(gen);
  const double w = chi5(gen);
  const double scale = std::sqrt(cov * 3.0 / 5.0);  // cov * (nu-2)/nu
  return scale * std::sqrt(5.0 / w) * z;
}

inline Vec t5_sample(int dim, double cov, std::uint64_t seed) {
  auto gen = rng_stream(seed, 0);
  return t5_draw(dim, cov, gen);
}

namespace detail {

// shared frame and error second moments of the two benchmark scenarios
struct BenchFrame {
  Mat Gamma, Gamma0, B, B0;
  Mat Omega0;      // 3x3 covariance of the complement-coordinate noise
  Mat NoiseChol;   // lower Cholesky factor of Omega0
  BenchFrame() {
    Gamma = Vec::Constant(4, 0.5);
    Gamma0.resize(4, 3);
    const double a = 1.0 / 2, b_ = -5.0 / 6, c = 1.0 / 6;
    Gamma0 << a, a, a,
        b_, c, c,
        c, b_, c,
        c, c, b_;
    Vec b(3);
    b << 1, 2, 3;
    B = b / std::sqrt(14.0);
    B0 = orth_complement(B);
    Omega0.resize(3, 3);
    Omega0 << 0.25, 0.25, 0.25,
        0.25, 68.25, -31.75,
        0.25, -31.75, 68.25;
    NoiseChol = Mat(Omega0.llt().matrixL());
  }
};

inline GeneratedData generate_bench(const Scenario& sc) {
  const bool heavy = sc.kind == ScenarioKind::nonlinear_t;
  BenchFrame fr;
  auto gen = rng_stream(sc.seed, 0);
  std::uniform_real_distribution<double> unif(-5.0, 5.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::chi_squared_distribution<double> chi5(5.0);

  Mat X(sc.n, 2), Y(sc.n, 4);
  for (int i = 0; i < sc.n; ++i) {
    const double x1 = unif(gen), x2 = unif(gen);
    X(i, 0) = x1;
    X(i, 1) = x2;
    double f1, f2, e1;
    Vec z(3);
    if (!heavy) {
      f1 = x1;
      f2 = x1 + x2;
      e1 = gauss(gen);
      for (int k = 0; k < 3; ++k) z(k) = gauss(gen);
    } else {
      f1 = x1 * x1 * (x2 >= 0 ? 1.0 : -1.0);
      f2 = 20.0 * std::sin(0.5 * (x1 + x2));
      {
        const double u = gauss(gen), w = chi5(gen);
        e1 = std::sqrt(3.0 / 5.0) * std::sqrt(5.0 / w) * u;
      }
      for (int k = 0; k < 3; ++k) z(k) = gauss(gen);
      const double w = chi5(gen);  // one mixing draw for the whole noise vector
      z *= std::sqrt(3.0 / 5.0) * std::sqrt(5.0 / w);
    }
    const Vec noise = fr.NoiseChol * z;  // complement coordinates, covariance Omega0
    Y.row(i) =
        (fr.Gamma * (f1 + e1) + fr.Gamma0 * (fr.B * f2 + noise)).transpose();
  }
  GeneratedData out;
  out.dataset = {std::move(Y), std::move(X)};
  out.truth = {fr.Gamma, fr.Gamma0, fr.B, fr.B0};
  if (!heavy) {
    Mat eta1(1, 2), eta2(1, 2);
    eta1 << 1, 0;
    eta2 << 1, 1;
    out.beta_true = fr.Gamma * eta1 + fr.Gamma0 * fr.B * eta2;
  }
  return out;
}

inline GeneratedData generate_sec3(const Scenario& sc) {
  auto gen = rng_stream(sc.seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat X(sc.n, 2), Y(sc.n, 3);
  for (int i = 0; i < sc.n; ++i) {
    const double x1 = gauss(gen), x2 = gauss(gen);
    const double e1 = gauss(gen), e2 = gauss(gen), e3 = gauss(gen);
    X(i, 0) = x1;
    X(i, 1) = x2;
    const double y1 = (sc.kind == ScenarioKind::sec3_linear ? x1 : x1 * x1) + e1;
    const double y2 = x2 + e2;
    const double y3 = sc.kind == ScenarioKind::sec3_heteroskedastic ? x2 * e3 : 2.0 * x2 + e3;
    Y.row(i) << y1, y2, y3;
  }
  GeneratedData out;
  out.dataset = {std::move(Y), std::move(X)};

  Vec gamma(3);
  gamma << 1, 0, 0;
  Mat Gamma0 = orth_complement(gamma);
  Vec s2(3), s3(3);
  if (sc.kind == ScenarioKind::sec3_heteroskedastic) {
    // only the second response carries X-information among the complement
    // coordinates; the multiplicative-noise response is uncorrelated with X
    s2 << 0, 1, 0;
    s3 << 0, 0, 1;
  } else {
    s2 << 0, 1, 2;
    s3 << 0, 2, -1;
  }
  Mat B = orthonormalize(Gamma0.transpose() * (s2 / s2.norm()));
  Mat B0 = orth_complement(B);
  out.truth = {Mat(gamma), Gamma0, B, B0};
  // sanity: the declared static space matches the complement coordinates
  if (subspace_distance(Mat(Gamma0 * B0), Mat(s3 / s3.norm())) > 1e-9)
    throw std::logic_error("sec3 truth construction mismatch");
  if (sc.kind == ScenarioKind::sec3_linear) {
    Mat beta(3, 2);
    beta << 1, 0, 0, 1, 0, 2;
    out.beta_true = beta;
  }
  return out;
}

inline Mat load_iris_features(const std::string& csv_path, std::vector<std::string>& species) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot open iris fixture: " + csv_path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<std::array<double, 4>> rows;
  species.clear();
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::array<double, 4> vals{};
    for (int j = 0; j < 4; ++j) {
      std::getline(ss, cell, ',');
      vals[j] = std::stod(cell);
    }
    std::getline(ss, cell, ',');
    rows.push_back(vals);
    species.push_back(cell);
  }
  Mat M(static_cast<int>(rows.size()), 4);
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < 4; ++j) M(i, j) = rows[i][j];
  return M;
}

inline GeneratedData generate_iris(const Scenario& sc, const std::string& csv_path) {
  std::vector<std::string> species;
  Mat feats = load_iris_features(csv_path, species);
  const int n = static_cast<int>(feats.rows());
  // standardize the four measurements
  for (int j = 0; j < 4; ++j) {
    const double mu = feats.col(j).mean();
    const double sd = std::sqrt((feats.col(j).array() - mu).square().mean());
    feats.col(j) = (feats.col(j).array() - mu) / sd;
  }
  auto gen = rng_stream(sc.seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat Y(n, 6);
  for (int i = 0; i < n; ++i) {
    Y(i, 0) = gauss(gen);
    Y(i, 1) = gauss(gen);
    Y.row(i).tail(4) = feats.row(i);
  }
  Mat X = Mat::Zero(n, 2);  // dummy-coded species (baseline: first category)
  for (int i = 0; i < n; ++i) {
    if (species[i] == "versicolor") X(i, 0) = 1.0;
    if (species[i] == "virginica") X(i, 1) = 1.0;
  }
  GeneratedData out;
  out.dataset = {std::move(Y), std::move(X)};
  return out;  // no ground-truth subspaces
}

}  // namespace detail

inline GeneratedData generate(const Scenario& sc, const std::string& iris_csv = "data/iris.csv") {
  if (sc.n < 1) throw DimensionError("Scenario: n >= 1 required");
  switch (sc.kind) {
    case ScenarioKind::linear_normal:
    case ScenarioKind::nonlinear_t:
      return detail::generate_bench(sc);
    case ScenarioKind::sec3_linear:
    case ScenarioKind::sec3_nonlinear_mean:
    case ScenarioKind::sec3_heteroskedastic:
      return detail::generate_sec3(sc);
    default:
      return detail::generate_iris(sc, iris_csv);
  }
}

// --- empirical condition diagnostics -------------------------------------------

struct ConditionReport {
  double static_x_corr = 0.0;      // max |corr(B0' Gamma0' Y, X)|
  double static_material_corr = 0; // max |corr(B0' Gamma0' Y, Gamma' Y)|
  double dcor_static_x = 0.0;      // distance correlation of the static part vs X
  double max_excess_kurtosis = 0;  // over static-part coordinates
  bool cov_ok = false;             // both correlation blocks below 0.05
};

namespace detail {

inline double max_abs_corr(MatRef A, MatRef B) {
  Mat Ac = column_center(A), Bc = column_center(B);
  double best = 0.0;
  for (int a = 0; a < Ac.cols(); ++a)
    for (int b = 0; b < Bc.cols(); ++b) {
      const double c = (Ac.col(a).dot(Bc.col(b))) /
                       std::sqrt(Ac.col(a).squaredNorm() * Bc.col(b).squaredNorm());
      best = std::max(best, std::abs(c));
    }
  return best;
}

// distance correlation between row-samples of A and B (O(n^2))
inline double distance_correlation(MatRef A, MatRef B) {
  const int n = static_cast<int>(A.rows());
  auto centered_dist = [&](MatRef M) {
    Mat D(n, n);
    for (int i = 0; i < n; ++i) {
      D(i, i) = 0.0;
      for (int j = i + 1; j < n; ++j) {
        const double v = (M.row(i) - M.row(j)).norm();
        D(i, j) = v;
        D(j, i) = v;
      }
    }
    const Vec rm = D.rowwise().mean();
    const double gm = rm.mean();
    D.colwise() -= rm;
    D.rowwise() -= rm.transpose();
    D.array() += gm;
    return D;
  };
  Mat DA = centered_dist(A), DB = centered_dist(B);
  const double dcov2 = (DA.array() * DB.array()).mean();
  const double da = (DA.array() * DA.array()).mean();
  const double db = (DB.array() * DB.array()).mean();
  if (da <= 0 || db <= 0) return 0.0;
  return std::sqrt(std::max(0.0, dcov2) / std::sqrt(da * db));
}

}  // namespace detail

inline ConditionReport verify_conditions(const GeneratedData& data, int n_large = 2000) {
  if (data.truth.Gamma.size() == 0)
    throw DimensionError("verify_conditions: scenario has no ground-truth bases");
  const Mat& Y = data.dataset.Y;
  Mat W = Y * data.truth.Gamma0 * data.truth.B0;  // static coordinates
  Mat V = Y * data.truth.Gamma;                   // material coordinates
  ConditionReport rep;
  rep.static_x_corr = detail::max_abs_corr(W, data.dataset.X);
  rep.static_material_corr = detail::max_abs_corr(W, V);
  rep.cov_ok = rep.static_x_corr < 0.05 && rep.static_material_corr < 0.05;
  const int cap = std::min<int>(static_cast<int>(Y.rows()), n_large > 0 ? n_large : 2000);
  rep.dcor_static_x =
      detail::distance_correlation(W.topRows(cap), data.dataset.X.topRows(cap));
  for (int j = 0; j < W.cols(); ++j) {
    Vec w = column_center(W.col(j));
    const double s2 = w.array().square().mean();
    const double k = w.array().pow(4).mean() / (s2 * s2) - 3.0;
    rep.max_excess_kurtosis = std::max(rep.max_excess_kurtosis, std::abs(k));
  }
  return rep;
}

}  // namespace innenv
