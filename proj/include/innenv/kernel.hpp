#pragma once

#include "innenv/core.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace innenv {

enum class KernelFamily { biweight, epanechnikov };

// one common bandwidth per task, in original units; each column j gets the
// effective bandwidth h_j = h * s_j / mean(s), i.e. a single h after
// per-coordinate standardization
struct KernelSpec {
  KernelFamily family = KernelFamily::biweight;
  double bandwidth = 1.0;
};

inline double kernel_eval(double u, KernelFamily f = KernelFamily::biweight) {
  const double a = 1.0 - u * u;
  if (a <= 0.0) return 0.0;
  return f == KernelFamily::biweight ? (15.0 / 16.0) * a * a : 0.75 * a;
}

inline double kernel_deriv(double u, KernelFamily f = KernelFamily::biweight) {
  const double a = 1.0 - u * u;
  if (a <= 0.0) return 0.0;
  return f == KernelFamily::biweight ? -(15.0 / 4.0) * u * a : -1.5 * u;
}

inline double kernel_max(KernelFamily f) {
  return f == KernelFamily::biweight ? 15.0 / 16.0 : 0.75;
}

// self-convolution C(t) = ∫ K(s) K(s-t) ds, support |t| <= 2; the integrand is a
// polynomial of degree <= 8, so 5-point Gauss-Legendre on the overlap is exact
inline double kernel_selfconv(double t, KernelFamily f = KernelFamily::biweight) {
  const double at = std::abs(t);
  if (at >= 2.0) return 0.0;
  const double lo = std::max(-1.0, t - 1.0), hi = std::min(1.0, t + 1.0);
  static const double gl_x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                 0.5384693101056831, 0.9061798459386640};
  static const double gl_w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                 0.4786286704993665, 0.2369268850561891};
  const double c = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  double acc = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double s = c + half * gl_x[i];
    acc += gl_w[i] * kernel_eval(s, f) * kernel_eval(s - t, f);
  }
  return acc * half;
}

// sample coordinates (plus optional responses) with per-column standardization
struct SmootherInput {
  Mat points;     // n x dim
  Mat responses;  // n x m (0 columns for density tasks)
  Vec center;     // dim
  Vec scale;      // dim, per-column SD (1/n convention), floored away from 0
  double scale_bar = 1.0;

  int n() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }

  static SmootherInput make(MatRef pts, const Mat& resp = Mat()) {
    if (pts.rows() < 2) throw DimensionError("SmootherInput: need n >= 2");
    if (resp.size() > 0 && resp.rows() != pts.rows())
      throw DimensionError("SmootherInput: responses row count mismatch");
    SmootherInput in;
    in.points = pts;
    in.responses = resp;
    in.center = pts.colwise().mean();
    const int d = in.dim();
    in.scale.resize(d);
    for (int j = 0; j < d; ++j) {
      const double v = (pts.col(j).array() - in.center(j)).square().mean();
      in.scale(j) = std::max(std::sqrt(v), 1e-150);
    }
    in.scale_bar = in.scale.mean();
    return in;
  }
};

// counters for degenerate-support events (clamped denominators, fallbacks)
struct SmootherWarnings {
  std::atomic<long> clamped{0};
  std::atomic<long> fallbacks{0};
  void reset() {
    clamped = 0;
    fallbacks = 0;
  }
};

inline SmootherWarnings& smoother_warnings() {
  static SmootherWarnings w;
  return w;
}

// precomputed standardized frame for repeated queries against a frozen sample
class KernelEvaluator {
 public:
  static constexpr int kMaxDim = 16;

  KernelEvaluator(const SmootherInput& in, const KernelSpec& spec)
      : fam_(spec.family), m_(static_cast<int>(in.responses.cols())) {
    if (!(spec.bandwidth > 0.0) || !std::isfinite(spec.bandwidth))
      throw DimensionError("KernelSpec: bandwidth must be positive and finite");
    const int n = in.n(), d = in.dim();
    if (d > kMaxDim) throw DimensionError("KernelEvaluator: dimension too large");
    center_ = in.center;
    inv_heff_.resize(d);
    for (int j = 0; j < d; ++j)
      inv_heff_(j) = in.scale_bar / (spec.bandwidth * in.scale(j));
    norm_ = inv_heff_.prod() / static_cast<double>(n);
    Zt_ = ((in.points.rowwise() - center_.transpose()) * inv_heff_.asDiagonal()).transpose();
    if (m_ > 0) respt_ = in.responses.transpose();
    floor_ = 1e-12 * static_cast<double>(n) * std::pow(kernel_max(fam_), d);
  }

  int n() const { return static_cast<int>(Zt_.cols()); }
  int dim() const { return static_cast<int>(Zt_.rows()); }
  int m() const { return m_; }
  double weight_floor() const { return floor_; }
  double density_norm() const { return norm_; }
  const Vec& inv_heff() const { return inv_heff_; }

  Vec standardize(VecRef q) const {
    return (q - center_).cwiseProduct(inv_heff_);
  }

  // weight sums at a raw query:
  //   s0  = Σ_i w_i,  w_i = ∏_j K(z_ij - zq_j)
  //   s1  = Σ_i w_i y_i                       (if s1 != nullptr, length m)
  //   g0  = Σ_i ∂w_i/∂q  (raw units, len d)   (if g0 != nullptr)
  //   g1  = Σ_i (∂w_i/∂q) y_iᵀ  (d x m)       (if g1 != nullptr)
  // grad_dims restricts the derivative accumulation to the leading coordinates
  void accumulate(VecRef query, double& s0, Vec* s1, Vec* g0, Mat* g1,
                  int grad_dims = -1) const {
    const int d = dim(), nn = n();
    const Vec zq = standardize(query);
    double kv[kMaxDim], kd[kMaxDim], pre[kMaxDim + 1], suf[kMaxDim + 1];
    s0 = 0.0;
    if (s1) s1->setZero(m_);
    if (g0) g0->setZero(d);
    if (g1) g1->setZero(d, m_);
    const bool need_grad = (g0 != nullptr) || (g1 != nullptr);
    const int gd = need_grad ? (grad_dims < 0 ? d : std::min(grad_dims, d)) : 0;
    const double* z = Zt_.data();
    for (int i = 0; i < nn; ++i, z += d) {
      bool inside = true;
      for (int j = 0; j < d; ++j) {
        const double u = z[j] - zq(j);
        const double a = 1.0 - u * u;
        if (a <= 0.0) {
          inside = false;
          break;
        }
        kv[j] = fam_ == KernelFamily::biweight ? (15.0 / 16.0) * a * a : 0.75 * a;
        if (j < gd)
          kd[j] = fam_ == KernelFamily::biweight ? -(15.0 / 4.0) * u * a : -1.5 * u;
      }
      if (!inside) continue;
      double w = kv[0];
      for (int j = 1; j < d; ++j) w *= kv[j];
      s0 += w;
      if (s1) s1->noalias() += w * respt_.col(i);
      if (gd > 0) {
        pre[0] = 1.0;
        for (int j = 0; j < gd; ++j) pre[j + 1] = pre[j] * kv[j];
        suf[d] = 1.0;
        for (int j = d - 1; j >= 0; --j) suf[j] = suf[j + 1] * kv[j];
        for (int k = 0; k < gd; ++k) {
          // ∂w_i/∂q_k = -inv_h_k * K'(u_ik) * ∏_{j≠k} K(u_ij)
          const double dw = -inv_heff_(k) * kd[k] * pre[k] * suf[k + 1];
          if (g0) (*g0)(k) += dw;
          if (g1) g1->row(k).noalias() += dw * respt_.col(i).transpose();
        }
      }
    }
  }

  double kde(VecRef query) const {
    double s0;
    accumulate(query, s0, nullptr, nullptr, nullptr);
    if (s0 <= 0.0) smoother_warnings().clamped++;
    return s0 * norm_;
  }

  // Nadaraya-Watson mean with nearest-neighbor fallback on empty support
  Vec nw(VecRef query) const {
    double s0;
    Vec s1;
    accumulate(query, s0, &s1, nullptr, nullptr);
    if (s0 < floor_) {
      smoother_warnings().fallbacks++;
      const Vec zq = standardize(query);
      int best = 0;
      double bestd = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n(); ++i) {
        const double dd = (Zt_.col(i) - zq).squaredNorm();
        if (dd < bestd) {
          bestd = dd;
          best = i;
        }
      }
      return respt_.col(best);
    }
    return s1 / s0;
  }

  // ∂ log kde / ∂ query, first target_dim coordinates (all if target_dim < 0)
  Vec log_grad(VecRef query, int target_dim = -1) const {
    double s0;
    Vec g0;
    accumulate(query, s0, nullptr, &g0, nullptr, target_dim);
    if (s0 < floor_) {
      smoother_warnings().clamped++;
      s0 = floor_;
    }
    if (target_dim < 0) target_dim = dim();
    return g0.head(target_dim) / s0;
  }

 private:
  Mat Zt_;       // dim x n standardized sample coordinates
  Mat respt_;    // m x n
  Vec center_;   // dim
  Vec inv_heff_; // dim
  double norm_ = 1.0;
  double floor_ = 0.0;
  KernelFamily fam_;
  int m_ = 0;
};

inline double kde(const SmootherInput& in, VecRef query, const KernelSpec& spec) {
  return KernelEvaluator(in, spec).kde(query);
}

inline Vec nw_regress(const SmootherInput& in, VecRef query, const KernelSpec& spec) {
  if (in.responses.cols() == 0) throw DimensionError("nw_regress: input has no responses");
  return KernelEvaluator(in, spec).nw(query);
}

inline Vec log_density_gradient(const SmootherInput& in, VecRef query, const KernelSpec& spec,
                                int target_dim = -1) {
  return KernelEvaluator(in, spec).log_grad(query, target_dim);
}

// conditional variant: extra conditioning coordinates enter as further kernel
// factors; the gradient is returned for the target block only
inline Vec log_density_gradient(const SmootherInput& target, MatRef conditioners, VecRef query,
                                const KernelSpec& spec) {
  Mat joined(target.points.rows(), target.points.cols() + conditioners.cols());
  joined << target.points, conditioners;
  return log_density_gradient(SmootherInput::make(joined), query, spec,
                              static_cast<int>(target.points.cols()));
}

enum class CvTask { density, regression };

struct CvOptions {
  int grid_size = 20;
  double span = 8.0;  // grid covers [h0/span, span*h0]
  int max_n = 400;    // cross-validate on a strided subsample beyond this size
};

namespace detail {

inline Vec cv_grid(double h0, const CvOptions& opt) {
  Vec g(opt.grid_size);
  const double lo = std::log(h0 / opt.span), hi = std::log(h0 * opt.span);
  for (int i = 0; i < opt.grid_size; ++i)
    g(i) = std::exp(lo + (hi - lo) * i / (opt.grid_size - 1));
  return g;
}

// leave-one-out squared-error score for regression smoothing
inline double cv_score_regression(const SmootherInput& in, double h, KernelFamily fam) {
  KernelEvaluator ev(in, {fam, h});
  const int n = in.n();
  const double self_w = std::pow(kernel_max(fam), in.dim());
  const Mat& resp = in.responses;
  const Vec grand_mean = resp.colwise().mean();
  double err = 0.0;
  for (int i = 0; i < n; ++i) {
    double s0;
    Vec s1;
    ev.accumulate(in.points.row(i).transpose(), s0, &s1, nullptr, nullptr);
    const double s0_loo = s0 - self_w;
    if (s0_loo < ev.weight_floor()) {
      // no usable neighbors at this h: fall back to the grand mean (penalizes small h)
      err += (resp.row(i).transpose() - grand_mean).squaredNorm();
    } else {
      Vec pred = (s1 - self_w * resp.row(i).transpose()) / s0_loo;
      err += (resp.row(i).transpose() - pred).squaredNorm();
    }
  }
  return err / n;
}

// least-squares CV: ∫ f̂² - (2/n) Σ f̂_{-i}(x_i), computed with the exact
// self-convolution of the kernel
inline double cv_score_density(const SmootherInput& in, double h, KernelFamily fam) {
  const int n = in.n(), d = in.dim();
  Vec inv_heff(d);
  for (int j = 0; j < d; ++j) inv_heff(j) = in.scale_bar / (h * in.scale(j));
  const double vol = inv_heff.prod();
  Mat Zt = ((in.points.rowwise() - in.center.transpose()) * inv_heff.asDiagonal()).transpose();
  double quad = n * std::pow(kernel_selfconv(0.0, fam), d);  // i == j diagonal
  double loo = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double pc = 1.0, pk = 1.0;
      bool any = true;
      for (int k = 0; k < d; ++k) {
        const double t = Zt(k, i) - Zt(k, j);
        if (std::abs(t) >= 2.0) {
          any = false;
          break;
        }
        pc *= kernel_selfconv(t, fam);
        pk *= kernel_eval(t, fam);
      }
      if (!any) continue;
      quad += 2.0 * pc;
      loo += 2.0 * pk;
    }
  }
  const double term1 = quad * vol / (static_cast<double>(n) * n);
  const double term2 = 2.0 * loo * vol / (static_cast<double>(n) * (n - 1));
  return term1 - term2;
}

inline SmootherInput strided_subsample(const SmootherInput& in, int target) {
  const int n = in.n();
  Mat pts(target, in.dim());
  Mat resp;
  if (in.responses.cols() > 0) resp.resize(target, in.responses.cols());
  for (int i = 0; i < target; ++i) {
    const int idx = static_cast<int>((static_cast<long long>(i) * n) / target);
    pts.row(i) = in.points.row(idx);
    if (resp.size() > 0) resp.row(i) = in.responses.row(idx);
  }
  return SmootherInput::make(pts, resp);
}

}  // namespace detail

// deterministic cross-validated bandwidth on a 20-point log grid centered at
// the Scott-style pilot h0 = n^{-1/(dim+4)} * mean(column SDs)
inline double cv_bandwidth(const SmootherInput& in, CvTask task, CvOptions opt = {},
                           KernelFamily fam = KernelFamily::biweight) {
  const int n = in.n(), d = in.dim();
  if (n < 10) throw DimensionError("cv_bandwidth: need n >= 10");
  for (int j = 0; j < d; ++j)
    if (in.scale(j) <= 1e-140)
      throw DimensionError("cv_bandwidth: zero-variance column");
  if (task == CvTask::regression && in.responses.cols() == 0)
    throw DimensionError("cv_bandwidth: regression task needs responses");

  const double h0_full = std::pow(n, -1.0 / (d + 4)) * in.scale_bar;
  const bool subsampled = n > opt.max_n;
  const SmootherInput* work = &in;
  SmootherInput sub;
  if (subsampled) {
    sub = detail::strided_subsample(in, opt.max_n);
    work = &sub;
  }
  const double h0_work = std::pow(work->n(), -1.0 / (d + 4)) * work->scale_bar;
  Vec grid = detail::cv_grid(h0_work, opt);
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid.size(); ++i) {
    const double s = task == CvTask::regression
                         ? detail::cv_score_regression(*work, grid(i), fam)
                         : detail::cv_score_density(*work, grid(i), fam);
    if (s < best_score) {
      best_score = s;
      best = i;
    }
  }
  double h = grid(best);
  if (!subsampled) return h;
  // rescale the subsample choice by the bandwidth rate, then snap to the full grid
  h *= std::pow(static_cast<double>(work->n()) / n, 1.0 / (d + 4));
  Vec full_grid = detail::cv_grid(h0_full, opt);
  int snap = 0;
  double bestdist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < full_grid.size(); ++i) {
    const double dd = std::abs(std::log(full_grid(i)) - std::log(h));
    if (dd < bestdist) {
      bestdist = dd;
      snap = i;
    }
  }
  return full_grid(snap);
}

}  // namespace innenv
