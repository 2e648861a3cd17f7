#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "matekit/error.hpp"

namespace matekit {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct LeastSquaresFit {
  VectorX<Scalar> coef;
  VectorX<Scalar> residuals;
  Eigen::Index rank = 0;
};

// Frequency-weighted least squares via column-pivoted QR of sqrt(w) X.
// Rank deficiency is an error, never resolved by a pseudo-inverse: the
// decompositions downstream need the exact OLS solution.
template <typename DerivedX, typename DerivedY, typename DerivedW>
LeastSquaresFit<typename DerivedX::Scalar> weighted_least_squares(const Eigen::MatrixBase<DerivedX>& X,
                                                                  const Eigen::MatrixBase<DerivedY>& y,
                                                                  const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedX::Scalar;
  const VectorX<Scalar> sw = w.derived().array().sqrt().matrix();
  const MatrixX<Scalar> Xw = sw.asDiagonal() * X.derived();
  const VectorX<Scalar> yw = sw.asDiagonal() * y.derived();
  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(Xw);
  qr.setThreshold(Scalar(1e-10));
  LeastSquaresFit<Scalar> fit;
  fit.rank = qr.rank();
  if (fit.rank < X.cols()) {
    throw Error(Errc::RankDeficientDesign, "design matrix has rank " + std::to_string(fit.rank) + " < " +
                                               std::to_string(X.cols()) + " columns");
  }
  fit.coef = qr.solve(yw);
  fit.residuals = y.derived() - X.derived() * fit.coef;
  return fit;
}

template <typename DerivedV, typename DerivedW>
typename DerivedV::Scalar weighted_mean(const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedW>& w) {
  return v.derived().dot(w.derived()) / w.derived().sum();
}

// Sum_i w_i phi_i phi_i' / Sum_i w_i for the rows phi_i of an N x K matrix.
template <typename DerivedPhi, typename DerivedW>
MatrixX<typename DerivedPhi::Scalar> weighted_second_moment(const Eigen::MatrixBase<DerivedPhi>& phi,
                                                            const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedPhi::Scalar;
  const MatrixX<Scalar> scaled = w.derived().asDiagonal() * phi.derived();
  return (phi.derived().transpose() * scaled) / w.derived().sum();
}

template <typename Scalar>
struct SymmetricInverse {
  MatrixX<Scalar> inverse;
  Eigen::Index rank = 0;
  Scalar condition = Scalar(0);
  bool truncated = false;
};

// Inverse of a symmetric positive semidefinite matrix. When the condition
// number exceeds cond_limit, eigenvalues below rel_tol * max are dropped and
// the Moore-Penrose inverse on the retained subspace is returned.
template <typename Derived>
SymmetricInverse<typename Derived::Scalar> symmetric_inverse(const Eigen::MatrixBase<Derived>& A,
                                                             typename Derived::Scalar cond_limit = 1e10,
                                                             typename Derived::Scalar rel_tol = 1e-12) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> sym = (A.derived() + A.derived().transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(sym);
  const VectorX<Scalar>& ev = es.eigenvalues();
  SymmetricInverse<Scalar> out;
  const Scalar top = ev.size() ? ev.maxCoeff() : Scalar(0);
  const Scalar bottom = ev.size() ? ev.minCoeff() : Scalar(0);
  if (!(top > Scalar(0))) {
    out.inverse = MatrixX<Scalar>::Zero(sym.rows(), sym.cols());
    out.condition = std::numeric_limits<Scalar>::infinity();
    out.truncated = true;
    return out;
  }
  out.condition = bottom > Scalar(0) ? top / bottom : std::numeric_limits<Scalar>::infinity();
  VectorX<Scalar> inv_ev = VectorX<Scalar>::Zero(ev.size());
  if (out.condition <= cond_limit) {
    inv_ev = ev.cwiseInverse();
    out.rank = ev.size();
  } else {
    out.truncated = true;
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
      if (ev(k) > rel_tol * top) {
        inv_ev(k) = Scalar(1) / ev(k);
        ++out.rank;
      }
    }
  }
  out.inverse = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

}  // namespace matekit
