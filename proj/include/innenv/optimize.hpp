#pragma once

#include "innenv/core.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace innenv {

// --- derivative-free simplex search ---------------------------------------------

struct NelderMeadOptions {
  int max_iter = 500;
  double tol_f = 1e-10;  // relative spread of simplex values
  double tol_x = 1e-8;   // simplex diameter
  double step = 0.5;     // initial simplex edge length
};

struct NelderMeadResult {
  Vec x;
  double fval = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

template <class F>
NelderMeadResult nelder_mead(F&& f, VecRef x0, const NelderMeadOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  std::vector<Vec> pts(n + 1, Vec(x0));
  std::vector<double> val(n + 1);
  for (int i = 1; i <= n; ++i) pts[i](i - 1) += opt.step;
  for (int i = 0; i <= n; ++i) val[i] = f(pts[i]);

  std::vector<int> ord(n + 1);
  NelderMeadResult out;
  for (out.iterations = 0; out.iterations < opt.max_iter; ++out.iterations) {
    for (int i = 0; i <= n; ++i) ord[i] = i;
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return val[a] < val[b]; });
    const int best = ord[0], worst = ord[n], second = ord[n - 1];

    double diam = 0.0;
    for (int i = 1; i <= n; ++i)
      diam = std::max(diam, (pts[ord[i]] - pts[best]).cwiseAbs().maxCoeff());
    if (val[worst] - val[best] <= opt.tol_f * (1.0 + std::abs(val[best])) ||
        diam <= opt.tol_x) {
      out.converged = true;
      break;
    }

    Vec centroid = Vec::Zero(n);
    for (int i = 0; i < n; ++i) centroid += pts[ord[i]];
    centroid /= n;

    Vec xr = centroid + alpha * (centroid - pts[worst]);
    const double fr = f(xr);
    if (fr < val[best]) {
      Vec xe = centroid + gamma * (xr - centroid);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = std::move(xe);
        val[worst] = fe;
      } else {
        pts[worst] = std::move(xr);
        val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = std::move(xr);
      val[worst] = fr;
    } else {
      Vec xc;
      if (fr < val[worst])
        xc = centroid + rho * (xr - centroid);  // outside contraction
      else
        xc = centroid + rho * (pts[worst] - centroid);  // inside contraction
      const double fc = f(xc);
      if (fc < std::min(fr, val[worst])) {
        pts[worst] = std::move(xc);
        val[worst] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          pts[ord[i]] = pts[best] + sigma * (pts[ord[i]] - pts[best]);
          val[ord[i]] = f(pts[ord[i]]);
        }
      }
    }
  }
  int argbest = 0;
  for (int i = 1; i <= n; ++i)
    if (val[i] < val[argbest]) argbest = i;
  out.x = pts[argbest];
  out.fval = val[argbest];
  return out;
}

// --- damped least squares --------------------------------------------------------

struct LmOptions {
  int max_iter = 100;
  double tol_step = 1e-10;   // relative step length
  double tol_grad = 1e-12;   // infinity norm of J' r
  double tol_resid = 0.0;    // stop once ||r||^2 falls below this
  double lambda0 = 1e-3;
  double fd_step = 1.490116e-8;  // sqrt(machine eps), scaled per coordinate
};

struct LmResult {
  Vec x;
  Vec residual;
  double objective = std::numeric_limits<double>::infinity();  // ||r||^2
  int iterations = 0;
  bool converged = false;
};

// minimizes ||fn(x)||^2 where fn maps R^n -> R^m; Jacobian by forward differences
template <class F>
LmResult levenberg_marquardt(F&& fn, VecRef x0, const LmOptions& opt = {}) {
  LmResult out;
  out.x = x0;
  out.residual = fn(out.x);
  out.objective = out.residual.squaredNorm();
  const int n = static_cast<int>(x0.size());
  const int m = static_cast<int>(out.residual.size());
  double lambda = opt.lambda0;

  for (out.iterations = 0; out.iterations < opt.max_iter; ++out.iterations) {
    if (out.objective <= opt.tol_resid) {
      out.converged = true;
      break;
    }
    Mat J(m, n);
    for (int j = 0; j < n; ++j) {
      const double h = opt.fd_step * std::max(1.0, std::abs(out.x(j)));
      Vec xp = out.x;
      xp(j) += h;
      J.col(j) = (fn(xp) - out.residual) / h;
    }
    Vec g = J.transpose() * out.residual;
    if (g.cwiseAbs().maxCoeff() <= opt.tol_grad) {
      out.converged = true;
      break;
    }
    Mat JtJ = J.transpose() * J;
    Vec diag = JtJ.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    for (int attempt = 0; attempt < 25; ++attempt) {
      Mat A = JtJ;
      A.diagonal() += lambda * diag;
      Vec delta = A.ldlt().solve(-g);
      Vec xn = out.x + delta;
      Vec rn = fn(xn);
      const double on = rn.squaredNorm();
      if (on < out.objective && std::isfinite(on)) {
        const double rel_step =
            delta.cwiseAbs().maxCoeff() / (1.0 + out.x.cwiseAbs().maxCoeff());
        out.x = std::move(xn);
        out.residual = std::move(rn);
        out.objective = on;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel_step <= opt.tol_step) out.converged = true;
        break;
      }
      lambda *= 4.0;
      if (lambda > 1e12) break;
    }
    if (!accepted || out.converged) {
      if (!accepted) out.converged = true;  // no descent direction left
      break;
    }
  }
  return out;
}

}  // namespace innenv
