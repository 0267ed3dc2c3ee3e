#pragma once

// Finite-horizon solver: classical RK4 backward in time on the stochastic
// differential Riccati equation, then a backward linear ODE for the
// time-varying degree-3 cost correction and degree-2 feedback correction.
//
// The kernel drift is the completed-square form
//   -dP/dt = P A + A' P + Q + sum C_k' P C_k - Sh Rh^-1 Sh',
//   Sh = P G + S + sum C_k' P D_k,   Rh = R + sum D_k' P D_k,
// with A = F - (alpha/2) I, and the stage gain K = -Rh^-1 Sh'.  This is the
// gain that actually minimizes the stage Hamiltonian; with it the drift
// coincides with the closed-loop value form, and the infinite-horizon limit
// of P(0) is the stationary kernel of the stochastic ARE iteration.

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "shjb/hjb.hpp"
#include "shjb/sare.hpp"

namespace shjb {

/// Finite-horizon problem: a data sampler continuous on [0, T], a horizon,
/// and terminal cost data.
struct TimeVaryingProblem {
  std::function<LQGBData(double)> sample;
  double horizon = 0.0;
  Matrix P_T;
  std::map<int, HomPoly> pi_T_hi;  ///< terminal cost corrections by degree

  static TimeVaryingProblem constant(LQGBData data, double horizon, Matrix P_T) {
    TimeVaryingProblem p;
    p.sample = [d = std::move(data)](double) { return d; };
    p.horizon = horizon;
    p.P_T = std::move(P_T);
    return p;
  }
};

struct SDRETrajectory {
  std::vector<double> t;   ///< uniform ascending grid, t0 = 0 .. tN = T
  std::vector<Matrix> P;   ///< per-node kernel, symmetric
  std::vector<Matrix> K;   ///< per-node gain
  std::vector<HomPoly> pi3;                ///< filled by integrate_pi3
  std::vector<std::vector<HomPoly>> kappa2;  ///< filled by integrate_pi3

  int steps() const { return static_cast<int>(t.size()) - 1; }
};

namespace detail {

inline Matrix sdre_gain(const LQGBData& d, const Matrix& P, double time_stamp) {
  Matrix Rh = d.base.R;
  Matrix Sh = P * d.base.G + d.base.S;
  for (int k = 0; k < d.r(); ++k) {
    Rh += d.D[k].transpose() * P * d.D[k];
    Sh += d.C[k].transpose() * P * d.D[k];
  }
  Eigen::LDLT<Matrix> ldlt(0.5 * (Rh + Rh.transpose()));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("integrate_sdre: R + sum D'PD is not invertible at t = " +
                         std::to_string(time_stamp));
  return -ldlt.solve(Sh.transpose());
}

inline Matrix sdre_drift(const LQGBData& d, const Matrix& P, double time_stamp) {
  const int n = d.base.n();
  const Matrix A = d.base.F - 0.5 * d.base.alpha * Matrix::Identity(n, n);
  Matrix Rh = d.base.R;
  Matrix Sh = P * d.base.G + d.base.S;
  Matrix Qn = d.base.Q;
  for (int k = 0; k < d.r(); ++k) {
    Rh += d.D[k].transpose() * P * d.D[k];
    Sh += d.C[k].transpose() * P * d.D[k];
    Qn += d.C[k].transpose() * P * d.C[k];
  }
  Eigen::LDLT<Matrix> ldlt(0.5 * (Rh + Rh.transpose()));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("integrate_sdre: R + sum D'PD is not invertible at t = " +
                         std::to_string(time_stamp));
  Matrix dP = -(P * A + A.transpose() * P + Qn - Sh * ldlt.solve(Sh.transpose()));
  return 0.5 * (dP + dP.transpose());
}

}  // namespace detail

/// Fixed-step RK4 backward from P(T) = P_T, with symmetrization after every
/// step.  Throws DivergenceError with an escape-time bracket on blowup.
inline SDRETrajectory integrate_sdre(const TimeVaryingProblem& problem, int steps) {
  if (steps < 1) throw DimensionError("integrate_sdre: steps must be >= 1");
  if (problem.horizon <= 0.0) throw DimensionError("integrate_sdre: horizon must be positive");
  const double h = problem.horizon / steps;
  SDRETrajectory traj;
  traj.t.resize(static_cast<std::size_t>(steps) + 1);
  traj.P.resize(static_cast<std::size_t>(steps) + 1);
  traj.K.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) traj.t[static_cast<std::size_t>(i)] = h * i;
  traj.t.back() = problem.horizon;

  const double blowup = 1e8 * std::max(1.0, problem.P_T.norm());
  traj.P.back() = problem.P_T;  // terminal data, bit for bit
  for (int i = steps; i > 0; --i) {
    const double ti = traj.t[static_cast<std::size_t>(i)];
    const Matrix& Pi = traj.P[static_cast<std::size_t>(i)];
    const LQGBData di = problem.sample(ti);
    di.validate();
    const LQGBData dmid = problem.sample(ti - 0.5 * h);
    const LQGBData dlo = problem.sample(ti - h);
    Matrix k1 = detail::sdre_drift(di, Pi, ti);
    Matrix k2 = detail::sdre_drift(dmid, Pi - 0.5 * h * k1, ti - 0.5 * h);
    Matrix k3 = detail::sdre_drift(dmid, Pi - 0.5 * h * k2, ti - 0.5 * h);
    Matrix k4 = detail::sdre_drift(dlo, Pi - h * k3, ti - h);
    Matrix Pn = Pi - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Pn = 0.5 * (Pn + Pn.transpose());
    if (!Pn.allFinite() || Pn.norm() > blowup)
      throw DivergenceError("integrate_sdre: kernel escaped between t = " +
                            std::to_string(ti - h) + " and t = " + std::to_string(ti));
    traj.P[static_cast<std::size_t>(i) - 1] = Pn;
  }
  for (int i = 0; i <= steps; ++i)
    traj.K[static_cast<std::size_t>(i)] = detail::sdre_gain(
        problem.sample(traj.t[static_cast<std::size_t>(i)]), traj.P[static_cast<std::size_t>(i)],
        traj.t[static_cast<std::size_t>(i)]);
  return traj;
}

/// Backward linear ODE for the degree-3 cost correction and the per-node
/// degree-2 feedback correction.  The trajectory supplies the kernel at the
/// nodes; stage values are re-derived with the same RK4 scheme so the pair
/// (P, pi3) advances consistently.  Higher-degree problem terms are held
/// constant in time.
inline void integrate_pi3(const TimeVaryingProblem& problem, SDRETrajectory& traj,
                          const VectorSeries& f2, const std::vector<VectorSeries>& gamma2,
                          const PolySeries& l3, const HomPoly& pi3_T) {
  const int steps = traj.steps();
  if (steps < 1) throw DimensionError("integrate_pi3: empty trajectory");
  const double h = traj.t[1] - traj.t[0];
  const LQGBData d0 = problem.sample(0.0);
  const int n = d0.base.n();
  const auto basis3 = enumerate_basis(n, 3);
  const auto basis2 = enumerate_basis(n, 2);

  auto make_problem = [&](const LQGBData& d) {
    NonlinearProblem p = NonlinearProblem::from_linear(d, 3);
    p.f_hi = f2;
    p.gamma_hi = gamma2;
    p.l_hi = l3;
    return p;
  };

  // d(coeffs)/dt = -[(M + N - alpha I) c + rhs(t)], rhs from the degree-3
  // collection with the quadratic kernel and linear gain at time t.
  auto stage = [&](const LQGBData& d, const Matrix& P, double ts) {
    const Matrix K = detail::sdre_gain(d, P, ts);
    NonlinearProblem p = make_problem(d);
    detail::CollectContext ctx(p);
    SeriesSolution quad;
    quad.P = P;
    quad.K = K;
    quad.degree_cap = 3;
    PolySeries pi = quad.pi_series();
    VectorSeries kappa = quad.kappa_series();
    const PolySeries E5 = detail::collect_value_equation(ctx, pi, kappa, 3);
    Vector rhs = Vector::Zero(static_cast<Eigen::Index>(basis3.size()));
    if (const HomPoly* t3 = E5.term(3)) rhs = detail::coeff_vector(*t3, basis3);
    Matrix Op = build_deterministic_operator(d.base.F + d.base.G * K, 3);
    std::vector<Matrix> Ms;
    for (int k = 0; k < d.r(); ++k) Ms.push_back(d.C[k] + d.D[k] * K);
    if (!Ms.empty()) Op += build_noise_operator(Ms, 3);
    Op.diagonal().array() -= d.base.alpha;
    return std::make_pair(Op, rhs);
  };

  std::vector<Vector> c(static_cast<std::size_t>(steps) + 1);
  c.back() = detail::coeff_vector(pi3_T, basis3);
  for (int i = steps; i > 0; --i) {
    const double ti = traj.t[static_cast<std::size_t>(i)];
    const Matrix& Pi = traj.P[static_cast<std::size_t>(i)];
    const LQGBData di = problem.sample(ti);
    const LQGBData dmid = problem.sample(ti - 0.5 * h);
    const LQGBData dlo = problem.sample(ti - h);

    // kernel stage values, re-derived exactly as integrate_sdre does
    Matrix p1 = detail::sdre_drift(di, Pi, ti);
    Matrix p2 = detail::sdre_drift(dmid, Pi - 0.5 * h * p1, ti - 0.5 * h);
    Matrix p3 = detail::sdre_drift(dmid, Pi - 0.5 * h * p2, ti - 0.5 * h);

    auto [opA, rhsA] = stage(di, Pi, ti);
    auto cdot = [&](const Matrix& Op, const Vector& rhs, const Vector& cc) -> Vector {
      return -(Op * cc + rhs);
    };
    Vector k1 = cdot(opA, rhsA, c[static_cast<std::size_t>(i)]);
    auto [opB, rhsB] = stage(dmid, Pi - 0.5 * h * p1, ti - 0.5 * h);
    Vector k2 = cdot(opB, rhsB, c[static_cast<std::size_t>(i)] - 0.5 * h * k1);
    auto [opC, rhsC] = stage(dmid, Pi - 0.5 * h * p2, ti - 0.5 * h);
    Vector k3 = cdot(opC, rhsC, c[static_cast<std::size_t>(i)] - 0.5 * h * k2);
    auto [opD, rhsD] = stage(dlo, Pi - h * p3, ti - h);
    Vector k4 = cdot(opD, rhsD, c[static_cast<std::size_t>(i)] - h * k3);
    Vector cn = c[static_cast<std::size_t>(i)] - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!cn.allFinite())
      throw DivergenceError("integrate_pi3: correction escaped between t = " +
                            std::to_string(ti - h) + " and t = " + std::to_string(ti));
    c[static_cast<std::size_t>(i) - 1] = cn;
  }

  traj.pi3.resize(c.size());
  traj.kappa2.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    traj.pi3[i] = detail::poly_from_coeffs(c[i], basis3, n, 3);
    // kappa^[2](t) from the degree-2 block of the control-gradient equation
    const LQGBData d = problem.sample(traj.t[i]);
    NonlinearProblem p = make_problem(d);
    detail::CollectContext ctx(p);
    SeriesSolution sol;
    sol.P = traj.P[i];
    sol.K = traj.K[i];
    sol.degree_cap = 3;
    if (!traj.pi3[i].empty()) sol.pi_hi.emplace(3, traj.pi3[i]);
    PolySeries pi = sol.pi_series();
    VectorSeries kappa = sol.kappa_series();
    const VectorSeries E6 = detail::collect_gradient_equation(ctx, pi, kappa, 2);
    Matrix Rh = d.base.R;
    for (int k = 0; k < d.r(); ++k) Rh += d.D[k].transpose() * traj.P[i] * d.D[k];
    Eigen::LDLT<Matrix> rhat(0.5 * (Rh + Rh.transpose()));
    std::vector<HomPoly> k2s(static_cast<std::size_t>(d.base.m()), HomPoly(n, 2));
    for (const auto& mi : basis2) {
      Vector b(d.base.m());
      for (int q = 0; q < d.base.m(); ++q) {
        const HomPoly* t2 = E6[static_cast<std::size_t>(q)].term(2);
        b[q] = t2 ? t2->coefficient(mi) : 0.0;
      }
      Vector sol2 = -rhat.solve(b);
      for (int q = 0; q < d.base.m(); ++q)
        if (sol2[q] != 0.0) k2s[static_cast<std::size_t>(q)].add_term(mi, sol2[q]);
    }
    for (auto& kk : k2s) kk.normalize();
    traj.kappa2[i] = std::move(k2s);
  }
}

/// Trajectory CSV: t, vec(P) row-major, vec(K) row-major, then optional pi3
/// and kappa2 coefficient columns in graded-lex order.
inline void write_trajectory_csv(const SDRETrajectory& traj, std::ostream& os) {
  if (traj.t.empty()) return;
  const int n = static_cast<int>(traj.P.front().rows());
  const int m = static_cast<int>(traj.K.front().rows());
  os << "t";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) os << ",P" << i << j;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) os << ",K" << i << j;
  const bool with_pi3 = traj.pi3.size() == traj.t.size();
  std::vector<MultiIndex> basis3, basis2;
  if (with_pi3) {
    basis3 = enumerate_basis(n, 3);
    basis2 = enumerate_basis(n, 2);
    for (std::size_t b = 0; b < basis3.size(); ++b) os << ",pi3_" << b;
    for (int q = 0; q < m; ++q)
      for (std::size_t b = 0; b < basis2.size(); ++b) os << ",kappa2_" << q << '_' << b;
  }
  os << '\n';
  os.precision(17);
  for (std::size_t idx = 0; idx < traj.t.size(); ++idx) {
    os << traj.t[idx];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) os << ',' << traj.P[idx](i, j);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) os << ',' << traj.K[idx](i, j);
    if (with_pi3) {
      for (const auto& mi : basis3) os << ',' << traj.pi3[idx].coefficient(mi);
      for (int q = 0; q < m; ++q)
        for (const auto& mi : basis2) os << ',' << traj.kappa2[idx][static_cast<std::size_t>(q)].coefficient(mi);
    }
    os << '\n';
  }
}

}  // namespace shjb
