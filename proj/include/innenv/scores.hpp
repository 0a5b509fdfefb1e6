#pragma once

#include "innenv/core.hpp"
#include "innenv/kernel.hpp"
#include "innenv/subspace.hpp"

#include <cmath>

namespace innenv {

// --- nuisance containers ---------------------------------------------------------

// sample-level nuisance fields; gradient rows are evaluated at the sample's own
// transformed coordinates, conditional-expectation rows center them (robust path)
struct NuisanceEstimates {
  Mat delta1;            // n x r : Y - E(Y|X)
  Mat delta2;            // n x r : projected conditional-mean contrast, rows in span(Gamma0 B)
  Mat grad_log_eta1;     // n x u
  Mat grad_log_eta2_B;   // n x d
  Mat grad_log_eta2_B0;  // n x (r-u-d)
  Mat grad_log_eta3;     // n x (r-u-d)
  Mat cond_exp_eta1;     // n x u        (empty until a centering pass fills it)
  Mat cond_exp_eta2_B;   // n x d
  Mat cond_exp_eta2_B0;  // n x (r-u-d)
  Vec mean_grad_eta3;    // r-u-d
};

// finite-dimensional working model: coordinates of the regression in the
// material / mixed frames plus the error second moments derived from them
struct NormalWorkingModel {
  Mat zeta1;   // u x p
  Mat zeta2;   // d x p
  Mat Omega;   // u x u
  Mat Omega0;  // (r-u) x (r-u)
  Mat mu2;     // (r-u-d) x d
  Mat Sigma2;  // d x d
  bool ridged = false;  // a second-moment block needed a diagonal jitter
};

namespace detail {

// in-sample Nadaraya-Watson fits of `resp` on `pts` for every sample point;
// leave-one-out removes the exact self weight K(0)^dim
inline Mat nw_all(MatRef pts, MatRef resp, const KernelSpec& spec, bool leave_one_out) {
  SmootherInput in = SmootherInput::make(pts, resp);
  KernelEvaluator ev(in, spec);
  const int n = static_cast<int>(pts.rows()), m = static_cast<int>(resp.cols());
  const double self_w = std::pow(kernel_max(spec.family), static_cast<int>(pts.cols()));
  Mat out(n, m);
  parallel_for(n, [&](int i) {
    double s0;
    Vec s1;
    ev.accumulate(pts.row(i).transpose(), s0, &s1, nullptr, nullptr);
    double s0_use = s0;
    Vec s1_use = s1;
    if (leave_one_out) {
      s0_use -= self_w;
      s1_use -= self_w * resp.row(i).transpose();
    }
    if (s0_use < ev.weight_floor()) {
      // no usable neighbors: keep the leave-self-in value
      smoother_warnings().fallbacks++;
      s0_use = s0;
      s1_use = s1;
    }
    out.row(i) = (s1_use / s0_use).transpose();
  });
  return out;
}

struct Delta2Parts {
  Mat delta2;           // n x r, rows in span(Gamma0 B)
  Mat cond_mean_joint;  // n x r : E(Y | static coords, X)
};

inline Delta2Parts delta2_parts(const Dataset& data, const InnerEnvelopeBases& bs,
                                const KernelSpec& spec, bool leave_one_out) {
  const int n = data.n(), p = data.p();
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat W = Yc * bs.Gamma0 * bs.B0;  // n x (r-u-d) static coordinates
  Mat WX(n, W.cols() + p);
  WX << W, Xc;
  Delta2Parts out;
  out.cond_mean_joint = nw_all(WX, Yc, spec, leave_one_out);
  Mat cond_mean_marginal = nw_all(W, Yc, spec, leave_one_out);
  Mat S2 = bs.Gamma0 * bs.B;  // r x d mixed-direction frame
  out.delta2 = (out.cond_mean_joint - cond_mean_marginal) * (S2 * S2.transpose());
  return out;
}

// add the spec'd diagonal jitter when a second-moment block is numerically
// semidefinite; flags the owner
inline Mat spd_guard(Mat S, bool& flagged) {
  const int k = static_cast<int>(S.rows());
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  const double tr = std::max(S.trace(), 0.0);
  const double jitter = tr > 0.0 ? 1e-8 * tr / k : 1e-8;
  if (es.eigenvalues().minCoeff() <= jitter) {
    S.diagonal().array() += jitter;
    flagged = true;
  }
  return S;
}

}  // namespace detail

// Y minus its kernel-smoothed conditional mean given X (theta-free)
inline Mat estimate_delta1(const Dataset& data, const KernelSpec& spec,
                           bool leave_one_out = false) {
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  return Yc - detail::nw_all(Xc, Yc, spec, leave_one_out);
}

// mixed-direction contrast between the joint and marginal conditional means of Y
// given the static coordinates (and X)
inline Mat estimate_delta2(const Dataset& data, const Theta& theta, const KernelSpec& spec,
                           bool leave_one_out = false) {
  theta.validate();
  if (data.r() != theta.r) throw DimensionError("estimate_delta2: response dim mismatch");
  InnerEnvelopeBases bs = theta_to_bases(theta);
  return detail::delta2_parts(data, bs, spec, leave_one_out).delta2;
}

// nonparametric (kernel) log-density gradients of the three conditional factors,
// each evaluated at the sample's own transformed coordinates, plus the two
// conditional-mean contrasts; conditional-expectation fields stay empty
inline NuisanceEstimates global_nuisances(const Dataset& data, const Theta& theta,
                                          const KernelSpec& spec, bool leave_one_out = false,
                                          const Mat* delta1_precomputed = nullptr) {
  theta.validate();
  if (data.r() != theta.r) throw DimensionError("global_nuisances: response dim mismatch");
  const int n = data.n(), p = data.p();
  const int u = theta.u, d = theta.d, s = theta.r - theta.u - theta.d;
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat U = Yc * bs.Gamma;             // n x u material coordinates
  Mat WB = Yc * bs.Gamma0 * bs.B;    // n x d mixed coordinates
  Mat W = Yc * bs.Gamma0 * bs.B0;    // n x s static coordinates

  NuisanceEstimates out;
  // the conditional-mean residual is free of theta, so outer loops pass it in once
  out.delta1 = delta1_precomputed ? *delta1_precomputed
                                  : estimate_delta1(data, spec, leave_one_out);
  auto parts = detail::delta2_parts(data, bs, spec, leave_one_out);
  out.delta2 = std::move(parts.delta2);

  // material density given X: gradient of the joint (U, X) estimate in U
  Mat UX(n, u + p);
  UX << U, Xc;
  KernelEvaluator e1(SmootherInput::make(UX), spec);
  out.grad_log_eta1.resize(n, u);
  parallel_for(n, [&](int i) {
    out.grad_log_eta1.row(i) = e1.log_grad(UX.row(i).transpose(), u).transpose();
  });

  // mixed density given (static, X): joint gradient split into the mixed block
  // and the conditioner part; the latter subtracts the (static, X) marginal
  Mat JNT(n, d + s + p);
  JNT << WB, W, Xc;
  Mat WX(n, s + p);
  WX << W, Xc;
  KernelEvaluator e2(SmootherInput::make(JNT), spec);
  KernelEvaluator e2m(SmootherInput::make(WX), spec);
  out.grad_log_eta2_B.resize(n, d);
  out.grad_log_eta2_B0.resize(n, s);
  parallel_for(n, [&](int i) {
    Vec g = e2.log_grad(JNT.row(i).transpose(), d + s);
    Vec gm = e2m.log_grad(WX.row(i).transpose(), s);
    out.grad_log_eta2_B.row(i) = g.head(d).transpose();
    out.grad_log_eta2_B0.row(i) = (g.segment(d, s) - gm).transpose();
  });

  // static marginal density
  KernelEvaluator e3(SmootherInput::make(W), spec);
  out.grad_log_eta3.resize(n, s);
  parallel_for(n, [&](int i) {
    out.grad_log_eta3.row(i) = e3.log_grad(W.row(i).transpose()).transpose();
  });
  out.mean_grad_eta3 = out.grad_log_eta3.colwise().mean().transpose();
  return out;
}

// kernel machines pinned at a reference parameter: the sample clouds (and the
// conditional-mean contrasts) come from the reference coordinates, while
// gradient queries run at whatever coordinates a trial parameter induces.
// Freezing only the values instead kills the score's dependence on the trial
// coordinates and plants spurious roots far from the data.
struct AnchoredDensities {
  Mat Yc, Xc;
  Mat delta1, delta2;
  KernelEvaluator eta1;        // cloud (material coords, X)
  KernelEvaluator eta2_joint;  // cloud (mixed, static, X)
  KernelEvaluator eta2_cond;   // cloud (static, X)
  KernelEvaluator eta3;        // cloud (static)
  int u = 0, d = 0, s = 0;
};

inline AnchoredDensities anchor_densities(const Dataset& data, const Theta& theta,
                                          const KernelSpec& spec,
                                          const Mat* delta1_precomputed = nullptr) {
  theta.validate();
  if (data.r() != theta.r) throw DimensionError("anchor_densities: response dim mismatch");
  const int n = data.n(), p = data.p();
  const int u = theta.u, d = theta.d, s = theta.r - theta.u - theta.d;
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat U = Yc * bs.Gamma;
  Mat WB = Yc * bs.Gamma0 * bs.B;
  Mat W = Yc * bs.Gamma0 * bs.B0;
  Mat UX(n, u + p);
  UX << U, Xc;
  Mat JNT(n, d + s + p);
  JNT << WB, W, Xc;
  Mat WX(n, s + p);
  WX << W, Xc;
  Mat delta1 = delta1_precomputed ? *delta1_precomputed
                                  : estimate_delta1(data, spec, false);
  Mat delta2 = detail::delta2_parts(data, bs, spec, false).delta2;
  return AnchoredDensities{std::move(Yc),
                           std::move(Xc),
                           std::move(delta1),
                           std::move(delta2),
                           KernelEvaluator(SmootherInput::make(UX), spec),
                           KernelEvaluator(SmootherInput::make(JNT), spec),
                           KernelEvaluator(SmootherInput::make(WX), spec),
                           KernelEvaluator(SmootherInput::make(W), spec),
                           u,
                           d,
                           s};
}

// gradient fields of the anchored density estimates at the trial coordinates;
// coincides with global_nuisances when trial equals the anchoring parameter
inline NuisanceEstimates anchored_nuisances(const AnchoredDensities& anchor, const Theta& trial) {
  trial.validate();
  const int u = anchor.u, d = anchor.d, s = anchor.s;
  if (trial.u != u || trial.d != d || trial.r != static_cast<int>(anchor.Yc.cols()))
    throw DimensionError("anchored_nuisances: trial dimensions disagree with the anchor");
  const int n = static_cast<int>(anchor.Yc.rows()), p = static_cast<int>(anchor.Xc.cols());
  InnerEnvelopeBases bs = theta_to_bases(trial);
  Mat U = anchor.Yc * bs.Gamma;
  Mat WB = anchor.Yc * bs.Gamma0 * bs.B;
  Mat W = anchor.Yc * bs.Gamma0 * bs.B0;
  Mat UX(n, u + p);
  UX << U, anchor.Xc;
  Mat JNT(n, d + s + p);
  JNT << WB, W, anchor.Xc;
  Mat WX(n, s + p);
  WX << W, anchor.Xc;

  NuisanceEstimates out;
  out.delta1 = anchor.delta1;
  out.delta2 = anchor.delta2;
  out.grad_log_eta1.resize(n, u);
  out.grad_log_eta2_B.resize(n, d);
  out.grad_log_eta2_B0.resize(n, s);
  out.grad_log_eta3.resize(n, s);
  parallel_for(n, [&](int i) {
    out.grad_log_eta1.row(i) = anchor.eta1.log_grad(UX.row(i).transpose(), u).transpose();
    Vec g = anchor.eta2_joint.log_grad(JNT.row(i).transpose(), d + s);
    Vec gm = anchor.eta2_cond.log_grad(WX.row(i).transpose(), s);
    out.grad_log_eta2_B.row(i) = g.head(d).transpose();
    out.grad_log_eta2_B0.row(i) = (g.segment(d, s) - gm).transpose();
    out.grad_log_eta3.row(i) = anchor.eta3.log_grad(W.row(i).transpose()).transpose();
  });
  out.mean_grad_eta3 = out.grad_log_eta3.colwise().mean().transpose();
  return out;
}

// coordinates and error second moments of the linear working model at theta
inline NormalWorkingModel fit_normal_working(const Theta& theta, const Dataset& data) {
  theta.validate();
  if (data.r() != theta.r) throw DimensionError("fit_normal_working: response dim mismatch");
  if (data.n() <= data.p()) throw DimensionError("fit_normal_working: need n > p");
  const int n = data.n();
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat U = Yc * bs.Gamma;    // n x u
  Mat V = Yc * bs.Gamma0;   // n x (r-u)
  Mat XtX = Xc.transpose() * Xc;
  Eigen::LDLT<Mat> xtx(XtX);

  NormalWorkingModel wm;
  Mat cu = xtx.solve(Xc.transpose() * U);  // p x u
  wm.zeta1 = cu.transpose();
  Mat ru = U - Xc * cu;
  wm.Omega = detail::spd_guard(Mat(ru.transpose() * ru / n), wm.ridged);

  Mat cv = xtx.solve(Xc.transpose() * V);  // p x (r-u)
  Mat rv = V - Xc * cv;
  wm.Omega0 = detail::spd_guard(Mat(rv.transpose() * rv / n), wm.ridged);
  wm.zeta2 = bs.B.transpose() * cv.transpose();  // d x p

  Mat T = bs.B0.transpose() * wm.Omega0 * bs.B0;   // (r-u-d) x (r-u-d)
  Mat C = bs.B0.transpose() * wm.Omega0 * bs.B;    // (r-u-d) x d
  Eigen::LDLT<Mat> tld(T);
  wm.mu2 = tld.solve(C);
  // conditional covariance of the mixed coordinates given the static ones
  Mat schur = bs.B.transpose() * wm.Omega0 * bs.B - C.transpose() * wm.mu2;
  wm.Sigma2 = detail::spd_guard(schur, wm.ridged);
  return wm;
}

// closed-form working-model log-density gradients at every sample
inline NuisanceEstimates working_gradients(const NormalWorkingModel& wm, const Theta& theta,
                                           const Dataset& data) {
  theta.validate();
  const int n = data.n(), d = theta.d, s = theta.r - theta.u - theta.d;
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat U = Yc * bs.Gamma;
  Mat WB = Yc * bs.Gamma0 * bs.B;
  Mat W = Yc * bs.Gamma0 * bs.B0;

  Mat omega_inv = wm.Omega.ldlt().solve(Mat::Identity(theta.u, theta.u));
  Mat sigma2_inv = wm.Sigma2.ldlt().solve(Mat::Identity(d, d));
  Mat T = bs.B0.transpose() * wm.Omega0 * bs.B0;
  Mat t_inv = T.ldlt().solve(Mat::Identity(s, s));

  NuisanceEstimates out;
  Mat resid1 = U - Xc * wm.zeta1.transpose();                       // n x u
  Mat resid2 = WB - Xc * wm.zeta2.transpose() - W * wm.mu2;         // n x d
  out.grad_log_eta1 = -resid1 * omega_inv;
  out.grad_log_eta2_B = -resid2 * sigma2_inv;
  out.grad_log_eta2_B0 = resid2 * sigma2_inv * wm.mu2.transpose();
  out.grad_log_eta3 = -W * t_inv;
  out.mean_grad_eta3 = out.grad_log_eta3.colwise().mean().transpose();
  return out;
}

// kernel regressions of each gradient field on its conditioning variables
// (X for the material factor, (static coords, X) for both mixed partials);
// the static factor uses the plain sample mean
inline NuisanceEstimates conditional_expectations(const NuisanceEstimates& gradients,
                                                  const Theta& theta, const Dataset& data,
                                                  const KernelSpec& spec,
                                                  bool leave_one_out = false) {
  theta.validate();
  const int n = data.n(), p = data.p(), s = theta.r - theta.u - theta.d;
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat W = Yc * bs.Gamma0 * bs.B0;
  Mat WX(n, s + p);
  WX << W, Xc;
  NuisanceEstimates out = gradients;
  out.cond_exp_eta1 = detail::nw_all(Xc, gradients.grad_log_eta1, spec, leave_one_out);
  out.cond_exp_eta2_B = detail::nw_all(WX, gradients.grad_log_eta2_B, spec, leave_one_out);
  out.cond_exp_eta2_B0 = detail::nw_all(WX, gradients.grad_log_eta2_B0, spec, leave_one_out);
  out.mean_grad_eta3 = gradients.grad_log_eta3.colwise().mean().transpose();
  return out;
}

// smoother outputs that stay fixed while trial parameters vary: the residual
// fields and the joint conditional mean of Y, all taken at a reference parameter
struct FrozenSmooths {
  Mat delta1;           // n x r
  Mat delta2;           // n x r
  Mat cond_mean_joint;  // n x r : E(Y | static coords, X)
};

inline FrozenSmooths freeze_smooths(const Dataset& data, const Theta& theta,
                                    const KernelSpec& spec, bool leave_one_out = false,
                                    const Mat* delta1_precomputed = nullptr) {
  theta.validate();
  if (data.r() != theta.r) throw DimensionError("freeze_smooths: response dim mismatch");
  FrozenSmooths out;
  out.delta1 = delta1_precomputed ? *delta1_precomputed
                                  : estimate_delta1(data, spec, leave_one_out);
  auto parts = detail::delta2_parts(data, theta_to_bases(theta), spec, leave_one_out);
  out.delta2 = std::move(parts.delta2);
  out.cond_mean_joint = std::move(parts.cond_mean_joint);
  return out;
}

// working-model centering without smoothing the gradient fields themselves: the
// gradients are linear in Y, so their conditional expectations are the closed
// forms evaluated at the kernel conditional means of Y (the delta smoothers);
// the smooths may come from a different (reference) parameter than theta
inline NuisanceEstimates normal_shortcut_nuisances(const NormalWorkingModel& wm,
                                                   const Theta& theta, const Dataset& data,
                                                   const FrozenSmooths& smooths) {
  theta.validate();
  const int d = theta.d;
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  Mat W = Yc * bs.Gamma0 * bs.B0;

  NuisanceEstimates out = working_gradients(wm, theta, data);
  out.delta1 = smooths.delta1;
  out.delta2 = smooths.delta2;

  Mat omega_inv = wm.Omega.ldlt().solve(Mat::Identity(theta.u, theta.u));
  Mat sigma2_inv = wm.Sigma2.ldlt().solve(Mat::Identity(d, d));
  // E(Y|X) = Y - delta1; E(Y|static coords, X) = the joint-mean smoother
  Mat ey_x = Yc - smooths.delta1;
  Mat mean_resid1 = ey_x * bs.Gamma - Xc * wm.zeta1.transpose();
  out.cond_exp_eta1 = -mean_resid1 * omega_inv;
  Mat mean_resid2 = smooths.cond_mean_joint * bs.Gamma0 * bs.B -
                    Xc * wm.zeta2.transpose() - W * wm.mu2;
  out.cond_exp_eta2_B = -mean_resid2 * sigma2_inv;
  out.cond_exp_eta2_B0 = mean_resid2 * sigma2_inv * wm.mu2.transpose();
  return out;
}

inline NuisanceEstimates normal_shortcut_nuisances(const NormalWorkingModel& wm,
                                                   const Theta& theta, const Dataset& data,
                                                   const KernelSpec& spec,
                                                   bool leave_one_out = false,
                                                   const Mat* delta1_precomputed = nullptr) {
  return normal_shortcut_nuisances(
      wm, theta, data,
      freeze_smooths(data, theta, spec, leave_one_out, delta1_precomputed));
}

namespace detail {

// shared contraction: rows vec(outer products)ᵀ times the basis Jacobians;
// `center` switches between raw gradients and conditionally centered ones
inline Mat assemble_score(const Theta& theta, const Dataset& data,
                          const NuisanceEstimates& nuis, bool center) {
  const int n = data.n(), r = theta.r, u = theta.u, d = theta.d;
  const int s = r - u - d;
  const int qg = (r - u) * u, qb = s * d;
  if (nuis.delta1.rows() != n || nuis.delta1.cols() != r)
    throw DimensionError("score: delta1 shape mismatch");
  if (nuis.delta2.rows() != n || nuis.delta2.cols() != r)
    throw DimensionError("score: delta2 shape mismatch");
  if (nuis.grad_log_eta1.rows() != n || nuis.grad_log_eta1.cols() != u ||
      nuis.grad_log_eta2_B.cols() != d || nuis.grad_log_eta2_B0.cols() != s ||
      nuis.grad_log_eta3.cols() != s)
    throw DimensionError("score: gradient field shape mismatch");
  if (center && (nuis.cond_exp_eta1.rows() != n || nuis.cond_exp_eta2_B.rows() != n ||
                 nuis.cond_exp_eta2_B0.rows() != n || nuis.mean_grad_eta3.size() != s))
    throw DimensionError("score: centering fields missing");

  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y);
  Mat J_G = basis_jacobian(theta, BasisBlock::Gamma);    // (r u) x qg
  Mat J_G0 = basis_jacobian(theta, BasisBlock::Gamma0);  // (r (r-u)) x qg
  Mat J_B0 = basis_jacobian(theta, BasisBlock::B0);      // ((r-u) s) x qb

  Mat g1 = nuis.grad_log_eta1, g2b = nuis.grad_log_eta2_B;
  Mat g2s = nuis.grad_log_eta2_B0, g3 = nuis.grad_log_eta3;
  if (center) {
    g1 -= nuis.cond_exp_eta1;
    g2b -= nuis.cond_exp_eta2_B;
    g2s -= nuis.cond_exp_eta2_B0;
    g3.rowwise() -= nuis.mean_grad_eta3.transpose();
  }

  Mat PGamma = bs.Gamma * bs.Gamma.transpose();
  Mat Q_d1 = nuis.delta1 - nuis.delta1 * PGamma;  // rows Q_Gamma delta1
  Mat P_d1 = nuis.delta1 * PGamma;                // rows P_Gamma delta1
  Mat PY_d2 = Yc * PGamma + nuis.delta2;          // rows P_Gamma Y + delta2
  Mat G0t_d2 = nuis.delta2 * bs.Gamma0;           // rows (Gamma0ᵀ delta2)ᵀ

  Mat score(n, qg + qb);
  parallel_for(n, [&](int i) {
    // material-factor term against the material-frame Jacobian
    Mat M1 = Q_d1.row(i).transpose() * g1.row(i);  // r x u
    // static-factor term and both mixed partials against the complement-frame Jacobian
    Mat M2 = PY_d2.row(i).transpose() * (g3.row(i) * bs.B0.transpose());  // r x (r-u)
    Mat M3 = P_d1.row(i).transpose() *
             (g2b.row(i) * bs.B.transpose() + g2s.row(i) * bs.B0.transpose());
    Mat Mg0 = M2 + M3;
    score.row(i).head(qg) =
        Eigen::Map<const Vec>(M1.data(), M1.size()).transpose() * J_G +
        Eigen::Map<const Vec>(Mg0.data(), Mg0.size()).transpose() * J_G0;
    // mixed-frame block: only the static factor enters
    Mat Mb = G0t_d2.row(i).transpose() * g3.row(i);  // (r-u) x s
    score.row(i).tail(qb) =
        Eigen::Map<const Vec>(Mb.data(), Mb.size()).transpose() * J_B0;
  });
  return score;
}

}  // namespace detail

// per-sample efficient score rows (gamma block then b block), nonparametric path
inline Mat efficient_score_global(const Theta& theta, const Dataset& data,
                                  const NuisanceEstimates& nuis) {
  theta.validate();
  return detail::assemble_score(theta, data, nuis, false);
}

// per-sample robust score rows: every gradient is centered by its conditional
// expectation (or the sample mean for the static factor), which keeps the score
// mean-zero at the truth even under a misspecified working model
inline Mat robust_score(const Theta& theta, const Dataset& data, const NormalWorkingModel& wm,
                        const NuisanceEstimates& nuis) {
  theta.validate();
  if (wm.Omega.rows() != theta.u || wm.Sigma2.rows() != theta.d)
    throw DimensionError("robust_score: working model disagrees with theta");
  return detail::assemble_score(theta, data, nuis, true);
}

}  // namespace innenv
