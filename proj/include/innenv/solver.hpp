#pragma once

#include "innenv/core.hpp"
#include "innenv/kernel.hpp"
#include "innenv/moments.hpp"
#include "innenv/scores.hpp"
#include "innenv/subspace.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace innenv {

struct SolverConfig {
  double delta = 1e-6;      // outer threshold on the theta change
  int max_outer = 100;
  int max_inner = 200;      // damped least-squares iterations per outer step
  double lm_lambda0 = 1e-3;
  int starts = 8;           // forwarded to the moment-based initializer
  std::uint64_t seed = 0;
  void validate() const {
    if (!(delta > 0.0) || delta >= 1.0) throw DimensionError("SolverConfig: 0 < delta < 1");
    if (max_outer < 1 || max_inner < 1 || starts < 1)
      throw DimensionError("SolverConfig: iteration counts must be positive");
    if (!(lm_lambda0 > 0.0)) throw DimensionError("SolverConfig: lm_lambda0 must be positive");
  }
};

enum class FitMethod { global_score, local_score_normal, local_score_custom };
enum class WorkingKind { normal, custom };

struct TrajectoryStep {
  int iteration = 0;      // 0 records the state at initialization
  double theta_change = 0.0;
  double score_norm = 0.0;
};

struct FitResult {
  Theta theta_hat;
  InnerEnvelopeBases bases;
  FitMethod method = FitMethod::global_score;
  int iterations = 0;     // outer iterations run
  double score_norm = 0.0;
  bool converged = false;
  std::vector<TrajectoryStep> trajectory;
  std::vector<int> permutation;  // response reordering; empty when not needed
};

// counters for conditions worth surfacing without interrupting a fit
struct SolverWarnings {
  std::atomic<long> small_sample{0};  // n below the recommended 10 q
  void reset() { small_sample = 0; }
};

inline SolverWarnings& solver_warnings() {
  static SolverWarnings w;
  return w;
}

struct MeanScoreResult {
  Theta theta;
  double score_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> accepted_norms;  // ||m|| after each accepted step (monotone)
};

// damped Gauss-Newton root search on the column-mean score m(theta); converged
// when ||m|| < 1e-6 sqrt(q) or an accepted step is shorter than cfg.delta.
// jac_carry, when given, warm-starts the Jacobian from a previous nearby solve
// and receives the final one back
template <class ScoreFn>
MeanScoreResult solve_mean_score(ScoreFn&& score_fn, const Theta& theta0,
                                 const SolverConfig& cfg = {}, Mat* jac_carry = nullptr) {
  cfg.validate();
  theta0.validate();
  const int q = theta0.q();
  const double tol_inner = 1e-6 * std::sqrt(static_cast<double>(q));
  auto mean_score = [&](const Vec& v) -> Vec {
    Theta th = Theta::from_flat(v, theta0.r, theta0.u, theta0.d);
    return score_fn(th).colwise().mean().transpose();
  };

  MeanScoreResult out;
  Vec x = theta0.flat();
  Vec m = mean_score(x);
  double norm = m.norm();
  out.accepted_norms.push_back(norm);
  double lambda = cfg.lm_lambda0;
  const double fd = std::sqrt(std::numeric_limits<double>::epsilon());
  // far from theta0 the trial coordinates leave the support of the anchored
  // sample clouds and the mean score degenerates (spurious roots); the search
  // is a local solve around theta0, enforced by a trust region that damping
  // cannot cross
  const Vec x_start = x;
  const double radius = 0.5 * (1.0 + x_start.norm());

  Mat J(q, q);
  auto refresh_jacobian = [&]() {
    for (int j = 0; j < q; ++j) {
      const double h = fd * std::max(1.0, std::abs(x(j)));
      Vec xp = x;
      xp(j) += h;
      J.col(j) = (mean_score(xp) - m) / h;
    }
  };
  // each score evaluation is an O(n^2) kernel pass, so the finite-difference
  // Jacobian is recomputed only when needed: rank-one secant updates carry it
  // between accepted steps, and a rejection under a stale Jacobian triggers a
  // refresh instead of a stall
  bool jac_fresh = false;
  bool jac_ready = false;
  if (jac_carry && jac_carry->rows() == q && jac_carry->cols() == q &&
      jac_carry->allFinite()) {
    J = *jac_carry;
    jac_ready = true;
  }
  for (out.iterations = 0; out.iterations < cfg.max_inner; ++out.iterations) {
    if (norm < tol_inner) {
      out.converged = true;
      break;
    }
    if (!jac_ready) {
      refresh_jacobian();
      jac_fresh = true;
      jac_ready = true;
    }
    Mat JtJ = J.transpose() * J;
    Vec g = J.transpose() * m;
    Vec diag = JtJ.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    bool small_step = false;
    const bool step_model_fresh = jac_fresh;
    int stale_rejects = 0;
    while (lambda <= 1e12) {  // damping escalation covers rank-deficient J
      Mat A = JtJ;
      A.diagonal() += lambda * diag;
      Vec step = A.ldlt().solve(-g);
      Vec xn = x + step;
      if ((xn - x_start).norm() > radius) {
        lambda *= 4.0;
        continue;
      }
      Vec mn = mean_score(xn);
      const double nn = mn.norm();
      if (std::isfinite(nn) && nn < norm) {
        Vec dm = mn - m;
        const double dx2 = step.squaredNorm();
        x = std::move(xn);
        m = std::move(mn);
        norm = nn;
        out.accepted_norms.push_back(norm);
        small_step = step.norm() <= cfg.delta;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (dx2 > cfg.delta * cfg.delta) J += (dm - J * step) * (step.transpose() / dx2);
        jac_fresh = false;
        break;
      }
      lambda *= 4.0;
      // a stale model earns only a few rejected trials before a refresh
      if (!step_model_fresh && ++stale_rejects >= 3) break;
    }
    if (!accepted) {
      if (step_model_fresh) break;  // no descent direction left; the norm test below flags it
      refresh_jacobian();
      jac_fresh = true;
      lambda = std::max(lambda / 64.0, cfg.lm_lambda0);
      continue;
    }
    if (small_step) {
      // a vanishing step only certifies a stationary point under an exact model
      if (step_model_fresh) {
        out.converged = true;
        ++out.iterations;
        break;
      }
      refresh_jacobian();
      jac_fresh = true;
    }
  }
  if (norm < tol_inner) out.converged = true;
  if (jac_carry && jac_ready) *jac_carry = J;
  out.theta = Theta::from_flat(x, theta0.r, theta0.u, theta0.d);
  out.score_norm = norm;
  return out;
}

namespace detail {

// one scalar bandwidth shared by every smoothing task in a fit, per the common-
// bandwidth estimation assumption: cross-validated once on the highest-
// dimensional density task (the joint of all transformed coordinates and X) at
// the initial theta, then frozen across outer iterations
inline double common_bandwidth(const Dataset& data, const Theta& theta, KernelFamily fam) {
  InnerEnvelopeBases bs = theta_to_bases(theta);
  Mat Yc = column_center(data.Y), Xc = column_center(data.X);
  const int n = data.n();
  Mat JNT(n, data.r() + data.p());
  JNT << Yc * bs.Gamma, Yc * bs.Gamma0 * bs.B, Yc * bs.Gamma0 * bs.B0, Xc;
  return cv_bandwidth(SmootherInput::make(JNT), CvTask::density, {}, fam);
}

struct OuterInputs {
  Theta theta0;
  KernelSpec spec;
  Mat delta1;  // computed once; the residual does not depend on theta
};

// shared initialization: moment-based start (step 1) and the theta-free
// conditional-mean residual (step 2); a caller-supplied start skips the former
inline OuterInputs outer_init(const Dataset& data, int u, int d, KernelSpec kernel_cfg,
                              const SolverConfig& cfg, const Theta* init) {
  OuterInputs out;
  if (init) {
    init->validate();
    if (init->r != data.r() || init->u != u || init->d != d)
      throw DimensionError("fit: supplied start disagrees with requested dimensions");
    out.theta0 = *init;
  } else {
    GmmResult start = fit_gmm(data, u, d, {}, cfg.starts, cfg.seed);
    out.theta0 = start.theta_hat;
  }
  const int q = out.theta0.q();
  if (data.n() < 10 * q) solver_warnings().small_sample++;
  out.spec = kernel_cfg;
  if (!(out.spec.bandwidth > 0.0))
    out.spec.bandwidth = common_bandwidth(data, out.theta0, out.spec.family);
  out.delta1 = estimate_delta1(data, out.spec);
  return out;
}

// alternating outer loop shared by the global and local fits; `make_score`
// re-estimates the theta-dependent nuisances at the current iterate and returns
// a score evaluator anchored there for the inner root search
template <class MakeScore>
FitResult alternate(const Dataset& data, const OuterInputs& inputs, const SolverConfig& cfg,
                    FitMethod method, MakeScore&& make_score) {
  FitResult out;
  out.method = method;
  Theta th = inputs.theta0;
  // partial inner solves: mid-path anchors move on the next outer iteration
  // anyway, so polishing their equations is wasted work; near the fixed point
  // the inner search converges well inside this budget and the outer stop
  // criterion is unaffected
  SolverConfig inner_cfg = cfg;
  inner_cfg.max_inner = std::min(cfg.max_inner, 15);
  Vec d_prev;  // previous outer increment, for tail extrapolation
  for (int t = 0; t < cfg.max_outer; ++t) {
    auto score = make_score(th);
    MeanScoreResult inner = solve_mean_score(score, th, inner_cfg);
    if (t == 0) out.trajectory.push_back({0, 0.0, inner.accepted_norms.front()});
    Vec d_t = inner.theta.flat() - th.flat();
    const double dth = d_t.norm();
    out.trajectory.push_back({t + 1, dth, inner.score_norm});
    th = inner.theta;
    out.score_norm = inner.score_norm;
    out.iterations = t + 1;
    if (dth <= cfg.delta) {
      out.converged = true;
      break;
    }
    // late re-anchoring contracts along a fixed direction with a stable ratio;
    // jump to the limit of the implied geometric series and let the next
    // iteration confirm (or resume) from there
    bool jumped = false;
    if (d_prev.size() == d_t.size() && dth < 0.05) {
      const double rho = d_t.dot(d_prev) / d_prev.squaredNorm();
      const double align = std::abs(d_t.dot(d_prev)) / (dth * d_prev.norm());
      if (rho > 0.2 && rho < 0.98 && align > 0.97) {
        Vec jump = d_t * (rho / (1.0 - rho));
        if (jump.norm() <= 1.0) {
          th = Theta::from_flat(th.flat() + jump, th.r, th.u, th.d);
          jumped = true;
        }
      }
    }
    if (jumped) {
      d_prev.resize(0);
    } else {
      d_prev = std::move(d_t);
    }
  }
  out.theta_hat = th;
  out.bases = theta_to_bases(th);
  return out;
}

inline void unpermute_bases(InnerEnvelopeBases& bases, const std::vector<int>& perm) {
  // rows of the response-frame bases move back to the original coordinate order
  Mat G = bases.Gamma, G0 = bases.Gamma0;
  for (int i = 0; i < static_cast<int>(perm.size()); ++i) {
    bases.Gamma.row(perm[i]) = G.row(i);
    bases.Gamma0.row(perm[i]) = G0.row(i);
  }
}

inline Dataset permute_responses(const Dataset& data, const std::vector<int>& perm) {
  Dataset out = data;
  for (int j = 0; j < static_cast<int>(perm.size()); ++j) out.Y.col(j) = data.Y.col(perm[j]);
  return out;
}

}  // namespace detail

// alternating fit of the globally efficient estimating equation: initialize from
// the moment fit, estimate the conditional-mean residual once, then alternate
// between re-anchoring the density machines / mixed-direction contrast at the
// current iterate and solving the anchored mean-score equation in theta.
// kernel_cfg.bandwidth <= 0 requests the cross-validated common bandwidth.
inline FitResult fit_global(const Dataset& data, int u, int d,
                            KernelSpec kernel_cfg = {KernelFamily::biweight, 0.0},
                            const SolverConfig& cfg = {}, const Theta* init = nullptr) {
  cfg.validate();
  try {
    detail::OuterInputs inputs = detail::outer_init(data, u, d, kernel_cfg, cfg, init);
    auto make_score = [&](const Theta& th) {
      AnchoredDensities anchor = anchor_densities(data, th, inputs.spec, &inputs.delta1);
      return [&data, anchor = std::move(anchor)](const Theta& trial) {
        return efficient_score_global(trial, data, anchored_nuisances(anchor, trial));
      };
    };
    return detail::alternate(data, inputs, cfg, FitMethod::global_score, make_score);
  } catch (const SingularUpperBlock& e) {
    if (init || e.suggested_permutation.empty()) throw;
    Dataset reordered = detail::permute_responses(data, e.suggested_permutation);
    FitResult out = fit_global(reordered, u, d, kernel_cfg, cfg, nullptr);
    out.permutation = e.suggested_permutation;
    detail::unpermute_bases(out.bases, out.permutation);
    return out;
  }
}

// alternating fit of the locally efficient (robust) estimating equation; the
// working model is refit at each iterate. WorkingKind::normal uses the analytic
// centering shortcut; WorkingKind::custom estimates the centering terms by
// kernel regressions of the working-model gradient fields.
inline FitResult fit_local(const Dataset& data, int u, int d,
                           KernelSpec kernel_cfg = {KernelFamily::biweight, 0.0},
                           const SolverConfig& cfg = {},
                           WorkingKind working = WorkingKind::normal,
                           const Theta* init = nullptr) {
  cfg.validate();
  const FitMethod method = working == WorkingKind::normal ? FitMethod::local_score_normal
                                                          : FitMethod::local_score_custom;
  try {
    detail::OuterInputs inputs = detail::outer_init(data, u, d, kernel_cfg, cfg, init);
    auto make_score = [&, working](const Theta& th) {
      NormalWorkingModel wm = fit_normal_working(th, data);
      FrozenSmooths smooths = freeze_smooths(data, th, inputs.spec, false, &inputs.delta1);
      // centering terms for the custom path are kernel regressions estimated at
      // the anchoring iterate and held fixed while the trial parameter moves;
      // the analytic shortcut re-evaluates its closed forms at the trial instead
      NuisanceEstimates centers;
      if (working == WorkingKind::custom) {
        NuisanceEstimates wg = working_gradients(wm, th, data);
        wg.delta1 = smooths.delta1;
        wg.delta2 = smooths.delta2;
        centers = conditional_expectations(wg, th, data, inputs.spec);
      }
      return [&data, working, wm = std::move(wm), smooths = std::move(smooths),
              centers = std::move(centers)](const Theta& trial) {
        NuisanceEstimates nuis;
        if (working == WorkingKind::normal) {
          nuis = normal_shortcut_nuisances(wm, trial, data, smooths);
        } else {
          nuis = working_gradients(wm, trial, data);
          nuis.delta1 = smooths.delta1;
          nuis.delta2 = smooths.delta2;
          nuis.cond_exp_eta1 = centers.cond_exp_eta1;
          nuis.cond_exp_eta2_B = centers.cond_exp_eta2_B;
          nuis.cond_exp_eta2_B0 = centers.cond_exp_eta2_B0;
        }
        return robust_score(trial, data, wm, nuis);
      };
    };
    return detail::alternate(data, inputs, cfg, method, make_score);
  } catch (const SingularUpperBlock& e) {
    if (init || e.suggested_permutation.empty()) throw;
    Dataset reordered = detail::permute_responses(data, e.suggested_permutation);
    FitResult out = fit_local(reordered, u, d, kernel_cfg, cfg, working, nullptr);
    out.permutation = e.suggested_permutation;
    detail::unpermute_bases(out.bases, out.permutation);
    return out;
  }
}

}  // namespace innenv
