#pragma once

#include "innenv/core.hpp"

#include <cmath>
#include <limits>

namespace innenv {

// coordinate vector for a k_dim-dimensional subspace of R^k_ambient;
// vec holds the column-major lower (k_ambient-k_dim) x k_dim block of A·A_u^{-1}
struct SubspaceCoords {
  Vec vec;
  int k_ambient = 0;
  int k_dim = 0;

  void validate() const {
    if (k_dim < 1 || k_dim > k_ambient)
      throw DimensionError("SubspaceCoords: need 1 <= k_dim <= k_ambient");
    if (vec.size() != static_cast<long>(k_dim) * (k_ambient - k_dim))
      throw DimensionError("SubspaceCoords: vec length must be k_dim*(k_ambient-k_dim)");
    if (!vec.allFinite()) throw DimensionError("SubspaceCoords: entries must be finite");
  }
};

// theta = (gamma, b): gamma charts the material subspace in R^r, b charts the
// mixed subspace inside the (r-u)-dimensional complement frame
struct Theta {
  SubspaceCoords gamma;
  SubspaceCoords b;
  int r = 0, u = 0, d = 0;

  int q() const { return (r - u) * u + (r - u - d) * d; }

  void validate() const {
    if (u < 1 || d < 1 || r - u - d < 1)
      throw DimensionError("Theta: need u >= 1, d >= 1, r-u-d >= 1");
    if (gamma.k_ambient != r || gamma.k_dim != u || b.k_ambient != r - u || b.k_dim != d)
      throw DimensionError("Theta: coordinate blocks disagree with (r,u,d)");
    gamma.validate();
    b.validate();
  }

  Vec flat() const {
    Vec out(q());
    out << gamma.vec, b.vec;
    return out;
  }

  static Theta from_flat(VecRef v, int r, int u, int d) {
    Theta t;
    t.r = r;
    t.u = u;
    t.d = d;
    if (v.size() != static_cast<long>((r - u) * u + (r - u - d) * d))
      throw DimensionError("Theta::from_flat: wrong length");
    t.gamma = SubspaceCoords{v.head((r - u) * u), r, u};
    t.b = SubspaceCoords{v.tail((r - u - d) * d), r - u, d};
    t.validate();
    return t;
  }
};

struct InnerEnvelopeBases {
  Mat Gamma;   // r x u
  Mat Gamma0;  // r x (r-u)
  Mat B;       // (r-u) x d
  Mat B0;      // (r-u) x (r-u-d)
};

// canonical orthonormalization: Householder QR with columns flipped so the R
// diagonal is positive (agrees with classical Gram-Schmidt, single-valued)
inline Mat orthonormalize(MatRef M) {
  const int k = static_cast<int>(M.rows()), m = static_cast<int>(M.cols());
  Eigen::HouseholderQR<Mat> qr(M);
  Mat Q = qr.householderQ() * Mat::Identity(k, m);
  for (int j = 0; j < m; ++j)
    if (qr.matrixQR()(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

inline Mat coords_to_basis(const SubspaceCoords& a) {
  a.validate();
  const int k = a.k_ambient, m = a.k_dim;
  Mat stacked(k, m);
  stacked.topRows(m) = Mat::Identity(m, m);
  stacked.bottomRows(k - m) =
      Eigen::Map<const Mat>(a.vec.data(), k - m, m);
  return orthonormalize(stacked);
}

// row order that makes the top block well conditioned: pivoted QR on A^T
inline std::vector<int> pivot_row_order(MatRef A) {
  Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
  auto idx = qr.colsPermutation().indices();
  std::vector<int> order(idx.size());
  for (int i = 0; i < idx.size(); ++i) order[i] = idx(i);
  return order;
}

inline SubspaceCoords basis_to_coords(MatRef A) {
  const int k = static_cast<int>(A.rows()), m = static_cast<int>(A.cols());
  if (m < 1 || m > k) throw DimensionError("basis_to_coords: need 1 <= cols <= rows");
  Mat Au = A.topRows(m);
  Eigen::JacobiSVD<Mat> svd(Au);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(m - 1);
  if (!(smin > 0.0) || smax / smin > 1e8)
    throw SingularUpperBlock(
        "basis_to_coords: top block ill conditioned; reorder rows (see suggested_permutation)",
        pivot_row_order(A));
  Mat repr = A * Au.inverse();              // k x m, identity on top
  Mat lower = repr.bottomRows(k - m);       // (k-m) x m
  SubspaceCoords out;
  out.k_ambient = k;
  out.k_dim = m;
  out.vec = Eigen::Map<const Vec>(lower.data(), lower.size());
  return out;
}

// deterministic orthonormal complement; each column is signed so its
// largest-magnitude entry is positive (a locally stable pivot, so the map stays
// smooth where finite differences sample it)
inline Mat orth_complement(MatRef A) {
  const int k = static_cast<int>(A.rows()), m = static_cast<int>(A.cols());
  if (m >= k) throw DimensionError("orth_complement: k_dim must be < k_ambient");
  Eigen::HouseholderQR<Mat> qr(A);
  Mat Qfull = qr.householderQ() * Mat::Identity(k, k);
  Mat C = Qfull.rightCols(k - m);
  for (int j = 0; j < k - m; ++j) {
    int lead = 0;
    C.col(j).cwiseAbs().maxCoeff(&lead);
    if (C(lead, j) < 0.0) C.col(j) = -C.col(j);
  }
  return C;
}

inline Mat projection(MatRef A) { return A * A.transpose(); }

inline Mat residual_projection(MatRef A) {
  return Mat::Identity(A.rows(), A.rows()) - A * A.transpose();
}

inline double subspace_distance(MatRef A, MatRef B) {
  if (A.rows() != B.rows()) throw DimensionError("subspace_distance: ambient mismatch");
  return (projection(A) - projection(B)).norm();
}

// Hotelling's squared vector correlation det(B^T A A^T B) for equal-dimension spans
inline double vector_correlation(MatRef A, MatRef B) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw DimensionError("vector_correlation: dimension mismatch");
  Mat M = B.transpose() * A;
  return (M * M.transpose()).determinant();
}

inline InnerEnvelopeBases theta_to_bases(const Theta& t) {
  t.validate();
  InnerEnvelopeBases bs;
  bs.Gamma = coords_to_basis(t.gamma);
  bs.Gamma0 = orth_complement(bs.Gamma);
  bs.B = coords_to_basis(t.b);
  bs.B0 = orth_complement(bs.B);
  return bs;
}

// inverse chart; the mixed-block coordinates are taken relative to the canonical
// complement frame of span(Gamma) so theta_to_bases reproduces identical spans
inline Theta bases_to_theta(const InnerEnvelopeBases& bs) {
  const int r = static_cast<int>(bs.Gamma.rows());
  const int u = static_cast<int>(bs.Gamma.cols());
  const int d = static_cast<int>(bs.B.cols());
  Theta t;
  t.r = r;
  t.u = u;
  t.d = d;
  t.gamma = basis_to_coords(bs.Gamma);
  Mat Gamma_canon = coords_to_basis(t.gamma);
  Mat Gamma0_canon = orth_complement(Gamma_canon);
  Mat S2 = bs.Gamma0 * bs.B;                      // r x d, spans the mixed subspace
  Mat B_in_frame = orthonormalize(Gamma0_canon.transpose() * S2);  // (r-u) x d
  t.b = basis_to_coords(B_in_frame);
  t.validate();
  return t;
}

enum class BasisBlock { Gamma, Gamma0, B, B0 };

// d vec(block) / d coords^T by central differences; Gamma blocks vary with gamma,
// B blocks with b (the structurally independent coordinates are omitted)
inline Mat basis_jacobian(const Theta& theta, BasisBlock which,
                          double step_scale = std::cbrt(std::numeric_limits<double>::epsilon())) {
  theta.validate();
  const bool wrt_gamma = (which == BasisBlock::Gamma || which == BasisBlock::Gamma0);
  const int ncoord = wrt_gamma ? static_cast<int>(theta.gamma.vec.size())
                               : static_cast<int>(theta.b.vec.size());
  auto block_of = [&](const Theta& t) -> Mat {
    switch (which) {
      case BasisBlock::Gamma:  return coords_to_basis(t.gamma);
      case BasisBlock::Gamma0: return orth_complement(coords_to_basis(t.gamma));
      case BasisBlock::B:      return coords_to_basis(t.b);
      default:                 return orth_complement(coords_to_basis(t.b));
    }
  };
  Mat base = block_of(theta);
  Mat J(base.size(), ncoord);
  for (int j = 0; j < ncoord; ++j) {
    Theta tp = theta, tm = theta;
    double& cp = wrt_gamma ? tp.gamma.vec(j) : tp.b.vec(j);
    double& cm = wrt_gamma ? tm.gamma.vec(j) : tm.b.vec(j);
    const double h = step_scale * std::max(1.0, std::abs(cp));
    cp += h;
    cm -= h;
    Mat Bp = block_of(tp), Bm = block_of(tm);
    J.col(j) = Eigen::Map<const Vec>(Bp.data(), Bp.size()) -
               Eigen::Map<const Vec>(Bm.data(), Bm.size());
    J.col(j) /= 2.0 * h;
  }
  return J;
}

}  // namespace innenv
