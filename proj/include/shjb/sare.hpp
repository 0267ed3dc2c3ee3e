#pragma once

// Stochastic algebraic Riccati solver: the monotone fixed-point iteration
// over deterministic ARE solves, with residual certification and divergence
// detection.
//
// Each sweep folds the previous kernel into the cost,
//   Q_t = Q + sum C_k' P C_k,  R_t = R + sum D_k' P D_k,
//   S_t = S + sum C_k' P D_k,
// solves the deterministic ARE with (Q_t, R_t, S_t), and reads the gain
// K = -R_t^-1 (G' P + S_t').  The residual below certifies the fixed point
// of exactly this iteration; through S_t it carries the D_k' P C_k coupling
// that the completed-square form requires.

#include <Eigen/Dense>
#include <ostream>
#include <string>
#include <vector>

#include "shjb/care.hpp"

namespace shjb {

inline constexpr double kSareDefaultTol = 1e-9;
inline constexpr int kSareDefaultMaxIter = 200;
inline constexpr double kSareDivergenceFactor = 1e8;

/// Linear-quadratic problem with bilinear noise channels dw_k entering as
/// (C_k x + D_k u) dw_k.  r = 0 reduces exactly to the deterministic data.
struct LQGBData {
  AREData base;
  std::vector<Matrix> C;  ///< r state couplings, each n x n
  std::vector<Matrix> D;  ///< r control couplings, each n x m

  int r() const { return static_cast<int>(C.size()); }

  void validate() const {
    base.validate();
    if (C.size() != D.size())
      throw DimensionError("LQGBData: C and D must have the same channel count");
    for (std::size_t k = 0; k < C.size(); ++k) {
      if (C[k].rows() != base.n() || C[k].cols() != base.n())
        throw DimensionError("LQGBData: C[" + std::to_string(k) + "] must be n x n");
      if (D[k].rows() != base.n() || D[k].cols() != base.m())
        throw DimensionError("LQGBData: D[" + std::to_string(k) + "] must be n x m");
    }
  }

  /// Cost matrices with the kernel P folded through the noise channels.
  void folded_cost(const Matrix& P, Matrix& Qt, Matrix& Rt, Matrix& St) const {
    Qt = base.Q;
    Rt = base.R;
    St = base.S;
    for (int k = 0; k < r(); ++k) {
      Qt += C[k].transpose() * P * C[k];
      Rt += D[k].transpose() * P * D[k];
      St += C[k].transpose() * P * D[k];
    }
    Qt = 0.5 * (Qt + Qt.transpose());
    Rt = 0.5 * (Rt + Rt.transpose());
  }
};

enum class SolveStatus { converged, diverged, max_iter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::diverged: return "diverged";
    default: return "max_iter";
  }
}

struct SAREHistoryEntry {
  int tau = 0;
  Matrix P;
  double p_norm = 0.0;
  double step_norm = 0.0;  ///< |P_tau - P_{tau-1}|_F, 0 at tau = 0
  double residual = 0.0;
};

struct SAREResult {
  Matrix P;
  Matrix K;
  int iterations = 0;
  std::vector<SAREHistoryEntry> history;
  SolveStatus status = SolveStatus::max_iter;
};

/// Residual of the stationary equations at (P, K): the completed-square
/// kernel equation plus the gain equation, both in Frobenius norm.
inline double sare_residual(const LQGBData& data, const Matrix& P, const Matrix& K) {
  const AREData& b = data.base;
  Matrix Qt, Rt, St;
  data.folded_cost(P, Qt, Rt, St);
  const Matrix g = b.G.transpose() * P + St.transpose();
  const Matrix rp = -b.alpha * P + P * b.F + b.F.transpose() * P + Qt -
                    g.transpose() * Rt.ldlt().solve(g);
  const Matrix rk = Rt * K + g;
  return rp.norm() + rk.norm();
}

/// Fixed-point iteration for the stochastic ARE.  Stops converged when
/// |P_t - P_{t-1}|_F <= tol (1 + |P_t|_F), diverged when |P_t|_F exceeds
/// 1e8 |P_0|_F (or an inner ARE fails on a blown-up iterate).
inline SAREResult sare_iterate(const LQGBData& data, double tol = kSareDefaultTol,
                               int max_iter = kSareDefaultMaxIter) {
  data.validate();
  if (tol <= 0.0) throw NumericalError("sare_iterate: tol must be positive");
  const AREData& b = data.base;

  SAREResult out;
  CAREResult first = solve_care(b);
  Matrix P = first.P;
  Matrix K = first.K;
  const double p0_norm = P.norm();
  out.history.push_back({0, P, p0_norm, 0.0, sare_residual(data, P, K)});

  for (int tau = 1; tau <= max_iter; ++tau) {
    AREData inner = b;
    data.folded_cost(P, inner.Q, inner.R, inner.S);
    Matrix Pn;
    try {
      Pn = solve_care(inner).P;
    } catch (const std::runtime_error& e) {
      if (P.norm() > 10.0 * p0_norm) {
        // the iterates were already blowing up; report divergence
        out.P = P;
        out.K = K;
        out.iterations = tau - 1;
        out.status = SolveStatus::diverged;
        return out;
      }
      throw NumericalError("sare_iterate: inner ARE failed at iteration " +
                           std::to_string(tau) + ": " + e.what());
    }
    Matrix Kn = -inner.R.ldlt().solve(b.G.transpose() * Pn + inner.S.transpose());
    const double step = (Pn - P).norm();
    P = Pn;
    K = Kn;
    out.history.push_back({tau, P, P.norm(), step, sare_residual(data, P, K)});
    out.P = P;
    out.K = K;
    out.iterations = tau;
    if (P.norm() > kSareDivergenceFactor * p0_norm) {
      out.status = SolveStatus::diverged;
      return out;
    }
    if (step <= tol * (1.0 + P.norm())) {
      out.status = SolveStatus::converged;
      return out;
    }
  }
  out.status = SolveStatus::max_iter;
  return out;
}

/// True iff every consecutive difference P_t - P_{t-1} has minimum
/// eigenvalue >= -1e-8 (1 + |P_t|_F).
inline bool check_monotone(const std::vector<SAREHistoryEntry>& history) {
  for (std::size_t i = 1; i < history.size(); ++i) {
    Matrix diff = history[i].P - history[i - 1].P;
    diff = 0.5 * (diff + diff.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(diff);
    if (es.eigenvalues().minCoeff() < -1e-8 * (1.0 + history[i].p_norm)) return false;
  }
  return true;
}

/// Iteration history as CSV: tau, |P|_F, |P - P_prev|_F, residual.
inline void write_history_csv(const std::vector<SAREHistoryEntry>& history, std::ostream& os) {
  os << "tau,p_norm,step_norm,residual\n";
  os.precision(17);
  for (const auto& h : history)
    os << h.tau << ',' << h.p_norm << ',' << h.step_norm << ',' << h.residual << '\n';
}

}  // namespace shjb
