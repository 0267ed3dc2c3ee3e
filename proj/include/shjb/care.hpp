#pragma once

// Deterministic (noiseless) discounted algebraic Riccati solver.  Serves as
// the inner step of the stochastic iteration and as its zeroth iterate.
//
// The solve contract is the postcondition, not the algorithm: P symmetric
// PSD, residual below 1e-9 * (1 + |P|_F), and F - (alpha/2) I + G K Hurwitz.
// Primary method is the matrix-sign-function extraction of the Hamiltonian's
// stable invariant subspace (Byers 1987, with determinant scaling); a
// Newton-Kleinman pass polishes or, with a Bass-style stabilizing gain,
// replaces it when the sign iteration fails.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "shjb/errors.hpp"
#include "shjb/poly.hpp"

namespace shjb {

inline constexpr double kCareResidualRel = 1e-9;
inline constexpr double kPbhTolerance = 1e-8;

/// Problem data for -alpha P + PF + F'P + Q - (PG+S) R^-1 (G'P+S') = 0.
struct AREData {
  Matrix F;  ///< n x n drift
  Matrix G;  ///< n x m input
  Matrix Q;  ///< n x n symmetric state cost
  Matrix R;  ///< m x m symmetric positive definite control cost
  Matrix S;  ///< n x m cross cost
  double alpha = 0.0;

  int n() const { return static_cast<int>(F.rows()); }
  int m() const { return static_cast<int>(G.cols()); }

  /// Checks dimensions, symmetry of Q and R to 1e-12 relative, positive
  /// definiteness of R, PSD of [Q S; S' R], and alpha >= 0.
  void validate() const {
    const int nn = n(), mm = m();
    if (F.cols() != nn) throw DimensionError("AREData: F must be square");
    if (G.rows() != nn) throw DimensionError("AREData: G row count mismatch");
    if (Q.rows() != nn || Q.cols() != nn) throw DimensionError("AREData: Q must be n x n");
    if (R.rows() != mm || R.cols() != mm) throw DimensionError("AREData: R must be m x m");
    if (S.rows() != nn || S.cols() != mm) throw DimensionError("AREData: S must be n x m");
    if (alpha < 0.0) throw NumericalError("AREData: discount rate must be nonnegative");
    const double qs = Q.norm(), rs = R.norm();
    if ((Q - Q.transpose()).norm() > 1e-12 * std::max(1.0, qs))
      throw NumericalError("AREData: Q is not symmetric");
    if ((R - R.transpose()).norm() > 1e-12 * std::max(1.0, rs))
      throw NumericalError("AREData: R is not symmetric");
    Eigen::LLT<Matrix> llt(R);
    if (llt.info() != Eigen::Success)
      throw NumericalError("AREData: R is not positive definite");
    Matrix blk(nn + mm, nn + mm);
    blk << Q, S, S.transpose(), R;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (blk + blk.transpose()));
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, blk.norm()))
      throw NumericalError("AREData: [Q S; S' R] is not positive semidefinite");
  }
};

struct CAREResult {
  Matrix P;  ///< symmetric PSD kernel
  Matrix K;  ///< gain, K = -R^-1 (G'P + S')
  double residual = 0.0;
};

/// Frobenius norm of the ARE residual at P.
inline double care_residual(const AREData& d, const Matrix& P) {
  const Matrix g = d.G.transpose() * P + d.S.transpose();
  return (-d.alpha * P + P * d.F + d.F.transpose() * P + d.Q -
          g.transpose() * d.R.llt().solve(g))
      .norm();
}

/// Eigenvalues of F + GK sorted by (real part, imaginary part).
inline std::vector<std::complex<double>> closed_loop_spectrum(const Matrix& F, const Matrix& G,
                                                              const Matrix& K) {
  if (G.cols() != K.rows() || K.cols() != F.cols() || G.rows() != F.rows())
    throw DimensionError("closed_loop_spectrum: dimension mismatch");
  Eigen::EigenSolver<Matrix> es(F + G * K);
  std::vector<std::complex<double>> eigs(es.eigenvalues().data(),
                                         es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(eigs.begin(), eigs.end(), [](const auto& a, const auto& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return eigs;
}

inline double spectral_abscissa(const Matrix& A) {
  Eigen::EigenSolver<Matrix> es(A);
  return es.eigenvalues().real().maxCoeff();
}

/// Solves A'X + XA + W = 0 for Hurwitz A via complex Schur reduction.
inline Matrix lyapunov_solve(const Matrix& A, const Matrix& W) {
  using CMatrix = Eigen::MatrixXcd;
  const int n = static_cast<int>(A.rows());
  Eigen::ComplexSchur<Matrix> schur(A);
  if (schur.info() != Eigen::Success)
    throw NumericalError("lyapunov_solve: Schur decomposition failed");
  const CMatrix T = schur.matrixT();
  const CMatrix U = schur.matrixU();
  CMatrix Wt = U.adjoint() * W.cast<std::complex<double>>() * U;
  CMatrix Y = CMatrix::Zero(n, n);
  const CMatrix Tadj = T.adjoint();
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXcd rhs = -Wt.col(j);
    for (int k = 0; k < j; ++k) rhs -= T(k, j) * Y.col(k);
    CMatrix L = Tadj + T(j, j) * CMatrix::Identity(n, n);
    // L is lower triangular; forward substitution
    for (int i = 0; i < n; ++i) {
      std::complex<double> s = rhs[i];
      for (int k = 0; k < i; ++k) s -= L(i, k) * Y(k, j);
      if (std::abs(L(i, i)) < 1e-300)
        throw NumericalError("lyapunov_solve: singular triangular factor (A not Hurwitz?)");
      Y(i, j) = s / L(i, i);
    }
  }
  Matrix X = (U * Y * U.adjoint()).real();
  return 0.5 * (X + X.transpose());
}

namespace detail {

/// PBH rank tests at eigenvalues with nonnegative real part.
inline void pbh_checks(const Matrix& A, const Matrix& G, const Matrix& Q) {
  const int n = static_cast<int>(A.rows());
  Eigen::EigenSolver<Matrix> es(A);
  Eigen::SelfAdjointEigenSolver<Matrix> qes(Q);
  Matrix qroot =
      qes.eigenvectors() *
      qes.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
      qes.eigenvectors().transpose();
  for (int i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()[i];
    if (lam.real() < -1e-12) continue;
    Eigen::MatrixXcd Ashift = A.cast<std::complex<double>>();
    Ashift.diagonal().array() -= lam;
    Eigen::MatrixXcd stab(n, n + G.cols());
    stab << Ashift, G.cast<std::complex<double>>();
    if (stab.jacobiSvd().singularValues().minCoeff() <= kPbhTolerance)
      throw StabilizabilityError("solve_care: (F - (alpha/2) I, G) fails the PBH "
                                 "stabilizability test at an unstable eigenvalue");
    Eigen::MatrixXcd det(n + qroot.rows(), n);
    det << Ashift, qroot.cast<std::complex<double>>();
    if (det.jacobiSvd().singularValues().minCoeff() <= kPbhTolerance)
      throw StabilizabilityError("solve_care: (Q^{1/2}, F - (alpha/2) I) fails the PBH "
                                 "detectability test at an unstable eigenvalue");
  }
}

/// Matrix sign iteration on the Hamiltonian of A'P + PA - P W P + Qt = 0.
/// Returns an approximate P, or an empty matrix when the iteration fails.
inline Matrix care_sign_method(const Matrix& A, const Matrix& W, const Matrix& Qt) {
  const int n = static_cast<int>(A.rows());
  Matrix H(2 * n, 2 * n);
  H << A, -W, -Qt, -A.transpose();
  Matrix Z = H;
  const double p = static_cast<double>(2 * n);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::PartialPivLU<Matrix> lu(Z);
    const double logdet = lu.matrixLU().diagonal().array().abs().log().sum();
    if (!std::isfinite(logdet)) return Matrix();
    const double c = std::exp(-logdet / p);
    Matrix Zs = c * Z;
    Matrix Znext = 0.5 * (Zs + Eigen::PartialPivLU<Matrix>(Zs).inverse());
    const double delta = (Znext - Z).norm();
    Z = Znext;
    if (!Z.allFinite()) return Matrix();
    if (delta <= 1e-13 * std::max(1.0, Z.norm())) break;
  }
  // Stable subspace: (Z + I) [I; P] = 0, solved in least squares.
  Matrix lhs(2 * n, n), rhs(2 * n, n);
  lhs << Z.topRightCorner(n, n), Z.bottomRightCorner(n, n) + Matrix::Identity(n, n);
  rhs << -(Z.topLeftCorner(n, n) + Matrix::Identity(n, n)), -Z.bottomLeftCorner(n, n);
  Matrix P = lhs.colPivHouseholderQr().solve(rhs);
  P = 0.5 * (P + P.transpose());
  return P.allFinite() ? P : Matrix();
}

/// Bass-style stabilizing gain for (A, G): K = -G' Z^-1 with Z from a
/// shifted Lyapunov equation.
inline Matrix bass_stabilizing_gain(const Matrix& A, const Matrix& G) {
  const int n = static_cast<int>(A.rows());
  const double beta = 1.05 * A.norm() + 0.5;
  const Matrix M = -(A + beta * Matrix::Identity(n, n)).transpose();
  Matrix Z = lyapunov_solve(M, 2.0 * G * G.transpose());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Z);
  Matrix K = -G.transpose() * cod.pseudoInverse();
  if (spectral_abscissa(A + G * K) >= 0.0)
    throw NumericalError("solve_care: failed to construct a stabilizing initial gain");
  return K;
}

}  // namespace detail

/// Solves the discounted ARE.  See the header comment for the contract.
inline CAREResult solve_care(const AREData& data) {
  data.validate();
  const int n = data.n();
  const Matrix A = data.F - 0.5 * data.alpha * Matrix::Identity(n, n);
  detail::pbh_checks(A, data.G, data.Q);

  // Reduce the cross term: At = A - G R^-1 S', Qt = Q - S R^-1 S'.
  Eigen::LLT<Matrix> rchol(data.R);
  const Matrix RiSt = rchol.solve(data.S.transpose());
  const Matrix At = A - data.G * RiSt;
  Matrix Qt = data.Q - data.S * RiSt;
  Qt = 0.5 * (Qt + Qt.transpose());
  const Matrix W = data.G * rchol.solve(data.G.transpose());

  const auto residual_of = [&](const Matrix& P) { return care_residual(data, P); };
  const double target = kCareResidualRel;  // scaled against (1 + |P|) below

  Matrix P = detail::care_sign_method(At, W, Qt);
  Matrix Kt;  // gain for the transformed (cross-free) problem
  if (P.size() > 0 && spectral_abscissa(At - W * P) < 0.0) {
    Kt = -rchol.solve(data.G.transpose() * P);
  } else {
    Kt = detail::bass_stabilizing_gain(At, data.G) ;
    P = Matrix();
  }

  // Newton-Kleinman: quadratically convergent polish (or full solve when the
  // sign method produced nothing usable).
  Matrix best = P;
  double best_res = (P.size() > 0) ? residual_of(P) : std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 40; ++iter) {
    const Matrix Ac = At + data.G * Kt;
    if (spectral_abscissa(Ac) >= 0.0) break;
    Matrix Wc = Qt + Kt.transpose() * data.R * Kt;
    Matrix X = lyapunov_solve(Ac, 0.5 * (Wc + Wc.transpose()));
    Kt = -rchol.solve(data.G.transpose() * X);
    const double res = residual_of(X);
    if (res < best_res) {
      best = X;
      best_res = res;
    }
    if (res <= 0.01 * target * (1.0 + X.norm())) break;
  }
  if (best.size() == 0 || !std::isfinite(best_res))
    throw NumericalError("solve_care: both the sign method and Newton-Kleinman failed");

  P = 0.5 * (best + best.transpose());
  const double tol = target * (1.0 + P.norm());
  if (best_res > tol)
    throw NumericalError("solve_care: residual " + std::to_string(best_res) +
                         " above tolerance " + std::to_string(tol));
  CAREResult out;
  out.P = P;
  out.K = -rchol.solve(data.G.transpose() * P + data.S.transpose());
  out.residual = best_res;
  if (spectral_abscissa(A + data.G * out.K) >= 0.0)
    throw NumericalError("solve_care: computed gain is not stabilizing");
  return out;
}

}  // namespace shjb
