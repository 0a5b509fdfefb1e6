#include <catch2/catch_amalgamated.hpp>

#include "innenv/optimize.hpp"

using namespace innenv;

TEST_CASE("simplex search on smooth objectives") {
  SECTION("banana valley") {
    auto f = [](VecRef x) {
      const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
      return a * a + 100.0 * b * b;
    };
    Vec x0(2);
    x0 << -1.2, 1.0;
    NelderMeadOptions opt;
    opt.max_iter = 2000;
    opt.tol_f = 1e-14;
    opt.tol_x = 1e-10;
    auto res = nelder_mead(f, x0, opt);
    CHECK(res.converged);
    CHECK(std::abs(res.x(0) - 1.0) < 1e-4);
    CHECK(std::abs(res.x(1) - 1.0) < 1e-4);
  }
  SECTION("shifted quadratic in five dimensions") {
    Vec target = Vec::LinSpaced(5, -2.0, 2.0);
    auto f = [&](VecRef x) { return (x - target).squaredNorm(); };
    auto res = nelder_mead(f, Vec::Zero(5));
    CHECK(res.converged);
    CHECK((res.x - target).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(res.fval < 1e-8);
  }
  SECTION("deterministic across calls") {
    auto f = [](VecRef x) { return std::cos(x(0)) + x.squaredNorm(); };
    Vec x0 = Vec::Constant(3, 0.7);
    auto a = nelder_mead(f, x0);
    auto b = nelder_mead(f, x0);
    CHECK(a.x == b.x);
    CHECK(a.iterations == b.iterations);
  }
}

TEST_CASE("damped least squares") {
  SECTION("banana valley in residual form") {
    auto fn = [](VecRef x) {
      Vec r(2);
      r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
      return r;
    };
    Vec x0(2);
    x0 << -1.2, 1.0;
    auto res = levenberg_marquardt(fn, x0);
    CHECK(res.converged);
    CHECK(std::abs(res.x(0) - 1.0) < 1e-8);
    CHECK(std::abs(res.x(1) - 1.0) < 1e-8);
    CHECK(res.objective < 1e-16);
  }
  SECTION("linear least squares matches normal equations") {
    Mat A(6, 3);
    A << 1, 2, 0, 0, 1, 1, 3, 0, 1, 1, 1, 1, 2, 0, 2, 0, 3, 1;
    Vec b(6);
    b << 1, 2, 0, 1, 3, -1;
    auto fn = [&](VecRef x) { return Vec(A * x - b); };
    auto res = levenberg_marquardt(fn, Vec::Zero(3));
    Vec exact = (A.transpose() * A).ldlt().solve(A.transpose() * b);
    CHECK(res.converged);
    CHECK((res.x - exact).cwiseAbs().maxCoeff() < 1e-7);
  }
  SECTION("square nonlinear system root") {
    auto fn = [](VecRef x) {
      Vec r(2);
      r << x(0) + x(1) - 3.0, x(0) * x(0) + x(1) * x(1) - 9.0;
      return r;
    };
    Vec x0(2);
    x0 << 1.0, 5.0;
    LmOptions opt;
    opt.tol_resid = 1e-24;
    auto res = levenberg_marquardt(fn, x0, opt);
    CHECK(res.converged);
    CHECK(res.residual.cwiseAbs().maxCoeff() < 1e-10);
    // roots are (0,3) and (3,0)
    const double lo = std::min(res.x(0), res.x(1)), hi = std::max(res.x(0), res.x(1));
    CHECK(std::abs(lo) < 1e-8);
    CHECK(std::abs(hi - 3.0) < 1e-8);
  }
  SECTION("exponential decay fit") {
    Vec t = Vec::LinSpaced(20, 0.0, 4.0);
    Vec y = (2.5 * (-1.3 * t.array()).exp()).matrix();
    auto fn = [&](VecRef p) {
      return Vec((p(0) * (-p(1) * t.array()).exp()).matrix() - y);
    };
    Vec p0(2);
    p0 << 1.0, 0.5;
    auto res = levenberg_marquardt(fn, p0);
    CHECK(res.converged);
    CHECK(std::abs(res.x(0) - 2.5) < 1e-6);
    CHECK(std::abs(res.x(1) - 1.3) < 1e-6);
  }
  SECTION("already at a minimum stops immediately") {
    Mat A = Mat::Identity(2, 2);
    auto fn = [&](VecRef x) { return Vec(A * x); };
    LmOptions opt;
    opt.tol_resid = 1e-30;
    auto res = levenberg_marquardt(fn, Vec::Zero(2), opt);
    CHECK(res.converged);
    CHECK(res.iterations == 0);
  }
}
