#pragma once

// Degree-by-degree power-series solution of the infinite-horizon stochastic
// HJB equations.  The value equation has a regular singular point at the
// origin, so once the degree-2 level (the stochastic ARE) is solved, each
// higher degree reduces to one square linear system on a homogeneous
// coefficient space:
//
//   (M + N - alpha I) coeffs(pi^[d+1]) = -rhs,
//
// where M transports along the closed loop (F+GK)x, N is the noise Hessian
// term over the channels C_k + D_k K, and rhs collects every degree-(d+1)
// product of already-known series.  The gain correction kappa^[d] then
// follows from the control-gradient equation through one positive definite
// solve with R + sum D_k' P D_k.
//
// The unknown kappa^[d] never enters the degree-(d+1) value collection: its
// coefficient is x'(PG + S + sum C_k'PD_k + K'(R + sum D_k'PD_k)), which
// vanishes identically at the stochastic-ARE gain.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "shjb/poly.hpp"
#include "shjb/sare.hpp"

namespace shjb {

/// Numeric witness for the invertibility of the degree-d operator, after
/// Lemma-1 style bounds: margin = tau - r sigma^2 / 2 with tau the closed-loop
/// spectral-abscissa bound and sigma the largest noise-channel norm.
struct InvertibilityCertificate {
  int degree = 0;
  double tau = 0.0;    ///< all eig(F+GK) real parts < -tau
  double sigma = 0.0;  ///< max_k |C_k + D_k K|_2
  int r = 0;           ///< noise channel count
  double rho = 0.0;    ///< |M^-1|_2 of the deterministic operator
  double margin = 0.0;
  double smallest_singular_value = 0.0;  ///< of the assembled stochastic operator
  bool invertible = false;
};

class OperatorSingularError : public std::runtime_error {
 public:
  OperatorSingularError(const std::string& what, InvertibilityCertificate cert)
      : std::runtime_error(what), certificate(std::move(cert)) {}
  InvertibilityCertificate certificate;
};

/// Matrix of p -> dp/dx . A x on the degree-d coefficient space, in
/// enumerate_basis order.  Its spectrum is the d-fold sums of eig(A).
inline Matrix build_deterministic_operator(const Matrix& A, int degree) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n) throw DimensionError("build_deterministic_operator: A must be square");
  const auto basis = enumerate_basis(n, degree);
  std::map<MultiIndex, int> index;
  for (std::size_t i = 0; i < basis.size(); ++i) index.emplace(basis[i], static_cast<int>(i));
  Matrix M = Matrix::Zero(basis.size(), basis.size());
  for (std::size_t col = 0; col < basis.size(); ++col) {
    HomPoly mono(n, degree);
    mono.add_term(basis[col], 1.0);
    HomPoly image(n, degree);
    for (int j = 0; j < n; ++j) {
      if (A.row(j).isZero(0.0)) continue;
      image += multiply(partial(mono, j), linear_form(A, j));
    }
    for (const auto& [mi, c] : image.terms()) M(index.at(mi), static_cast<int>(col)) = c;
  }
  return M;
}

/// Matrix of p -> 1/2 sum_k (M_k x)' d2p/dx2 (M_k x) on the degree-d space.
inline Matrix build_noise_operator(const std::vector<Matrix>& Ms, int degree) {
  if (Ms.empty()) throw DimensionError("build_noise_operator: at least one channel required");
  const int n = static_cast<int>(Ms.front().rows());
  const auto basis = enumerate_basis(n, degree);
  std::map<MultiIndex, int> index;
  for (std::size_t i = 0; i < basis.size(); ++i) index.emplace(basis[i], static_cast<int>(i));
  Matrix N = Matrix::Zero(basis.size(), basis.size());
  for (std::size_t col = 0; col < basis.size(); ++col) {
    HomPoly mono(n, degree);
    mono.add_term(basis[col], 1.0);
    HomPoly image(n, degree);
    for (const auto& M : Ms) {
      if (M.rows() != n || M.cols() != n)
        throw DimensionError("build_noise_operator: channels must be n x n");
      image += hessian_form(mono, M, M) * 0.5;
    }
    for (const auto& [mi, c] : image.terms()) N(index.at(mi), static_cast<int>(col)) = c;
  }
  return N;
}

/// Certificate for the degree-d stochastic operator at gain K.
inline InvertibilityCertificate lemma1_certificate(const LQGBData& lin, const Matrix& K,
                                                   int degree) {
  InvertibilityCertificate cert;
  cert.degree = degree;
  cert.r = lin.r();
  const Matrix Acl = lin.base.F + lin.base.G * K;
  cert.tau = -spectral_abscissa(Acl);
  for (int k = 0; k < lin.r(); ++k) {
    const Matrix Mk = lin.C[k] + lin.D[k] * K;
    cert.sigma = std::max(cert.sigma, Mk.jacobiSvd().singularValues().maxCoeff());
  }
  cert.margin = cert.tau - 0.5 * cert.r * cert.sigma * cert.sigma;

  const Matrix M = build_deterministic_operator(Acl, degree);
  Eigen::JacobiSVD<Matrix> svd_m(M);
  const double smin_m = svd_m.singularValues().minCoeff();
  if (smin_m <= 1e-14 * std::max(1.0, svd_m.singularValues().maxCoeff()))
    throw NumericalError("lemma1_certificate: deterministic operator is singular; "
                         "the closed loop violates the standing assumptions");
  cert.rho = 1.0 / smin_m;

  Matrix Op = M;
  if (lin.r() > 0) {
    std::vector<Matrix> Ms;
    for (int k = 0; k < lin.r(); ++k) Ms.push_back(lin.C[k] + lin.D[k] * K);
    Op += build_noise_operator(Ms, degree);
  }
  Op.diagonal().array() -= lin.base.alpha;
  Eigen::JacobiSVD<Matrix> svd(Op);
  cert.smallest_singular_value = svd.singularValues().minCoeff();
  cert.invertible =
      cert.margin > 0.0 ||
      cert.smallest_singular_value > 1e-10 * std::max(1.0, svd.singularValues().maxCoeff());
  return cert;
}

/// Taylor problem data: the linear-quadratic-bilinear block plus homogeneous
/// corrections.  Degree-1 dynamics and degree-2 cost live only in `lin`.
struct NonlinearProblem {
  LQGBData lin;
  VectorSeries f_hi;                   ///< n components in (x,u), degrees >= 2
  std::vector<VectorSeries> gamma_hi;  ///< per channel, n components in (x,u), degrees >= 2
  PolySeries l_hi;                     ///< scalar in (x,u), degrees >= 3
  int degree_cap = kDefaultDegreeCap;

  int n() const { return lin.base.n(); }
  int m() const { return lin.base.m(); }
  int nxu() const { return n() + m(); }

  static NonlinearProblem from_linear(LQGBData lin_, int cap = kDefaultDegreeCap) {
    NonlinearProblem p;
    p.lin = std::move(lin_);
    p.f_hi.assign(p.n(), PolySeries(p.nxu()));
    p.gamma_hi.assign(p.lin.r(), VectorSeries(p.n(), PolySeries(p.nxu())));
    p.l_hi = PolySeries(p.nxu());
    p.degree_cap = cap;
    return p;
  }

  void validate() const {
    lin.validate();
    if (degree_cap < 2) throw DimensionError("NonlinearProblem: degree_cap must be >= 2");
    if (static_cast<int>(f_hi.size()) != n())
      throw DimensionError("NonlinearProblem: f_hi must have n components");
    if (static_cast<int>(gamma_hi.size()) != lin.r())
      throw DimensionError("NonlinearProblem: gamma_hi must have r entries");
    auto check_series = [&](const PolySeries& s, int min_deg, const char* what) {
      if (s.nvars() != nxu())
        throw DimensionError(std::string("NonlinearProblem: ") + what +
                             " must live on the (x,u) block");
      if (!s.empty() && s.min_degree() < min_deg)
        throw DimensionError(std::string("NonlinearProblem: ") + what +
                             " duplicates low-degree data held in lin");
    };
    for (const auto& s : f_hi) check_series(s, 2, "f_hi");
    for (const auto& g : gamma_hi) {
      if (static_cast<int>(g.size()) != n())
        throw DimensionError("NonlinearProblem: gamma_hi components must number n");
      for (const auto& s : g) check_series(s, 2, "gamma_hi");
    }
    check_series(l_hi, 3, "l_hi");
  }

  /// Full drift component i as a series over (x,u): row of [F G] plus f_hi.
  PolySeries full_f(int i) const {
    Matrix FG(n(), nxu());
    FG << lin.base.F, lin.base.G;
    PolySeries s(nxu());
    s.add(linear_form(FG, i));
    s += f_hi[static_cast<std::size_t>(i)];
    return s;
  }

  PolySeries full_gamma(int k, int i) const {
    Matrix CD(n(), nxu());
    CD << lin.C[static_cast<std::size_t>(k)], lin.D[static_cast<std::size_t>(k)];
    PolySeries s(nxu());
    s.add(linear_form(CD, i));
    s += gamma_hi[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
    return s;
  }

  /// Full running cost: 1/2 (x,u)' [Q S; S' R] (x,u) plus l_hi.
  PolySeries full_l() const {
    Matrix W(nxu(), nxu());
    W << lin.base.Q, lin.base.S, lin.base.S.transpose(), lin.base.R;
    PolySeries s(nxu());
    HomPoly quad(nxu(), 2);
    for (int i = 0; i < nxu(); ++i)
      for (int j = i; j < nxu(); ++j) {
        const double c = (i == j) ? 0.5 * W(i, i) : 0.5 * (W(i, j) + W(j, i));
        if (c == 0.0) continue;
        std::vector<int> e(static_cast<std::size_t>(nxu()), 0);
        e[static_cast<std::size_t>(i)] += 1;
        e[static_cast<std::size_t>(j)] += 1;
        quad.add_term(MultiIndex(std::move(e)), c);
      }
    s.add(quad);
    s += l_hi;
    return s;
  }
};

/// Power-series solution: kernel and gain plus homogeneous corrections.
/// pi^[2] is represented by P only and kappa^[1] by K only.
struct SeriesSolution {
  Matrix P;
  Matrix K;
  std::map<int, HomPoly> pi_hi;                  ///< degrees 3 .. degree_cap
  std::map<int, std::vector<HomPoly>> kappa_hi;  ///< degrees 2 .. degree_cap-1
  int degree_cap = kDefaultDegreeCap;

  int n() const { return static_cast<int>(P.rows()); }
  int m() const { return static_cast<int>(K.rows()); }

  /// Value series including the quadratic kernel.
  PolySeries pi_series() const {
    PolySeries s(n());
    HomPoly quad(n(), 2);
    for (int i = 0; i < n(); ++i)
      for (int j = i; j < n(); ++j) {
        const double c = (i == j) ? 0.5 * P(i, i) : 0.5 * (P(i, j) + P(j, i));
        if (c == 0.0) continue;
        std::vector<int> e(static_cast<std::size_t>(n()), 0);
        e[static_cast<std::size_t>(i)] += 1;
        e[static_cast<std::size_t>(j)] += 1;
        quad.add_term(MultiIndex(std::move(e)), c);
      }
    s.add(quad);
    for (const auto& [d, h] : pi_hi) s.add(h);
    return s;
  }

  /// Feedback components as series, truncated above max_degree.
  VectorSeries kappa_series(int max_degree = 1 << 20) const {
    VectorSeries out;
    for (int q = 0; q < m(); ++q) {
      PolySeries s(n());
      s.add(linear_form(K, q));
      for (const auto& [d, comps] : kappa_hi)
        if (d <= max_degree) s.add(comps[static_cast<std::size_t>(q)]);
      out.push_back(std::move(s));
    }
    return out;
  }

  double pi_value(const Vector& x) const { return pi_series().evaluate(x); }

  Vector kappa_value(const Vector& x, int max_degree = 1 << 20) const {
    Vector u(m());
    auto ks = kappa_series(max_degree);
    for (int q = 0; q < m(); ++q) u[q] = ks[static_cast<std::size_t>(q)].evaluate(x);
    return u;
  }
};

enum class HjbMethod { direct, iterative };

struct HJBSeriesResult {
  SeriesSolution solution;
  std::map<int, InvertibilityCertificate> certificates;  ///< per solved degree (of pi)
  SAREResult sare;
};

namespace detail {

inline PolySeries series_partial(const PolySeries& s, int j) {
  PolySeries r(s.nvars());
  for (const auto& [d, h] : s.terms()) r.add(partial(h, j));
  return r;
}

/// Everything the degree collections need, precomputed once per solve.
struct CollectContext {
  int n = 0, m = 0, r = 0;
  double alpha = 0.0;
  std::vector<PolySeries> f;                    // n comps over (x,u)
  std::vector<std::vector<PolySeries>> gamma;   // r x n comps over (x,u)
  PolySeries l;                                 // scalar over (x,u)
  std::vector<std::vector<PolySeries>> f_u;     // d f_i / d u_q, [q][i]
  std::vector<PolySeries> l_u;                  // d l / d u_q
  std::vector<std::vector<std::vector<PolySeries>>> gamma_u;  // [k][q][i]

  explicit CollectContext(const NonlinearProblem& p)
      : n(p.n()), m(p.m()), r(p.lin.r()), alpha(p.lin.base.alpha), l(p.full_l()) {
    for (int i = 0; i < n; ++i) f.push_back(p.full_f(i));
    for (int k = 0; k < r; ++k) {
      std::vector<PolySeries> gk;
      for (int i = 0; i < n; ++i) gk.push_back(p.full_gamma(k, i));
      gamma.push_back(std::move(gk));
    }
    for (int q = 0; q < m; ++q) {
      std::vector<PolySeries> fq;
      for (int i = 0; i < n; ++i) fq.push_back(series_partial(f[static_cast<std::size_t>(i)], n + q));
      f_u.push_back(std::move(fq));
      l_u.push_back(series_partial(l, n + q));
    }
    for (int k = 0; k < r; ++k) {
      std::vector<std::vector<PolySeries>> gk;
      for (int q = 0; q < m; ++q) {
        std::vector<PolySeries> gq;
        for (int i = 0; i < n; ++i)
          gq.push_back(series_partial(gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)], n + q));
        gk.push_back(std::move(gq));
      }
      gamma_u.push_back(std::move(gk));
    }
  }
};

/// Degree components of the value equation
///   -alpha pi + pi_x f(x,kappa) + l(x,kappa) + 1/2 sum_k g_k' pi_xx g_k,
/// truncated above `upto`.
inline PolySeries collect_value_equation(const CollectContext& ctx, const PolySeries& pi,
                                         const VectorSeries& kappa, int upto) {
  PolySeries E = pi * (-ctx.alpha);
  std::vector<PolySeries> pix;
  for (int j = 0; j < ctx.n; ++j) pix.push_back(series_partial(pi, j));
  for (int i = 0; i < ctx.n; ++i) {
    const PolySeries fi = substitute(ctx.f[static_cast<std::size_t>(i)], ctx.n, kappa, upto);
    E += multiply(pix[static_cast<std::size_t>(i)], fi, upto);
  }
  E += substitute(ctx.l, ctx.n, kappa, upto);
  if (ctx.r > 0) {
    std::vector<std::vector<PolySeries>> pixx(static_cast<std::size_t>(ctx.n));
    for (int i = 0; i < ctx.n; ++i)
      for (int j = 0; j < ctx.n; ++j)
        pixx[static_cast<std::size_t>(i)].push_back(series_partial(pix[static_cast<std::size_t>(i)], j));
    for (int k = 0; k < ctx.r; ++k) {
      std::vector<PolySeries> gs;
      for (int i = 0; i < ctx.n; ++i)
        gs.push_back(substitute(ctx.gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)],
                                ctx.n, kappa, upto));
      PolySeries acc(ctx.n);
      for (int i = 0; i < ctx.n; ++i)
        for (int j = 0; j < ctx.n; ++j) {
          if (pixx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].empty()) continue;
          acc += multiply(multiply(gs[static_cast<std::size_t>(i)],
                                   pixx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], upto),
                          gs[static_cast<std::size_t>(j)], upto);
        }
      E += acc * 0.5;
    }
  }
  return E;
}

/// Degree components of the control-gradient equation
///   pi_x f_u(x,kappa) + l_u(x,kappa) + sum_k g_k' pi_xx (g_k)_u,
/// one series per control component, truncated above `upto`.
inline VectorSeries collect_gradient_equation(const CollectContext& ctx, const PolySeries& pi,
                                              const VectorSeries& kappa, int upto) {
  std::vector<PolySeries> pix;
  for (int j = 0; j < ctx.n; ++j) pix.push_back(series_partial(pi, j));
  std::vector<std::vector<PolySeries>> pixx(static_cast<std::size_t>(ctx.n));
  for (int i = 0; i < ctx.n; ++i)
    for (int j = 0; j < ctx.n; ++j)
      pixx[static_cast<std::size_t>(i)].push_back(series_partial(pix[static_cast<std::size_t>(i)], j));

  VectorSeries out;
  for (int q = 0; q < ctx.m; ++q) {
    PolySeries E(ctx.n);
    for (int i = 0; i < ctx.n; ++i) {
      const PolySeries fqi =
          substitute(ctx.f_u[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)], ctx.n, kappa, upto);
      E += multiply(pix[static_cast<std::size_t>(i)], fqi, upto);
    }
    E += substitute(ctx.l_u[static_cast<std::size_t>(q)], ctx.n, kappa, upto);
    for (int k = 0; k < ctx.r; ++k) {
      for (int i = 0; i < ctx.n; ++i) {
        const PolySeries gi = substitute(ctx.gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)],
                                         ctx.n, kappa, upto);
        for (int j = 0; j < ctx.n; ++j) {
          if (pixx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].empty()) continue;
          const PolySeries gju =
              substitute(ctx.gamma_u[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)]
                                    [static_cast<std::size_t>(j)],
                         ctx.n, kappa, upto);
          if (gju.empty()) continue;
          E += multiply(multiply(gi, pixx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], upto),
                        gju, upto);
        }
      }
    }
    out.push_back(std::move(E));
  }
  return out;
}

inline Vector coeff_vector(const HomPoly& h, const std::vector<MultiIndex>& basis) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) v[static_cast<Eigen::Index>(i)] = h.coefficient(basis[i]);
  return v;
}

inline HomPoly poly_from_coeffs(const Vector& v, const std::vector<MultiIndex>& basis, int nvars,
                                int degree) {
  HomPoly h(nvars, degree);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (v[static_cast<Eigen::Index>(i)] != 0.0) h.add_term(basis[i], v[static_cast<Eigen::Index>(i)]);
  }
  h.normalize();
  return h;
}

}  // namespace detail

/// Solves one degree: pi^[d+1] from the value collection and kappa^[d] from
/// the gradient collection.  `pi` and `kappa` must hold all lower degrees and
/// are extended in place.
inline std::pair<HomPoly, std::vector<HomPoly>> solve_degree(
    const detail::CollectContext& ctx, const Matrix& Op, const Matrix& Rhat, PolySeries& pi,
    VectorSeries& kappa, int d, HjbMethod method, const Matrix& M_det) {
  const int n = ctx.n;
  const auto basis_hi = enumerate_basis(n, d + 1);
  const PolySeries E5 = detail::collect_value_equation(ctx, pi, kappa, d + 1);
  Vector rhs = Vector::Zero(static_cast<Eigen::Index>(basis_hi.size()));
  if (const HomPoly* top = E5.term(d + 1)) rhs = detail::coeff_vector(*top, basis_hi);

  Vector c;
  if (method == HjbMethod::direct) {
    c = Op.partialPivLu().solve(-rhs);
  } else {
    // Richardson sweep: solve the noise-free transport with the previous
    // iterate's noise image folded into the inhomogeneity.
    Matrix Mop = M_det;
    Mop.diagonal().array() -= ctx.alpha;
    Eigen::PartialPivLU<Matrix> mlu(Mop);
    const Matrix Nop = Op - Mop;
    c = mlu.solve(-rhs);
    const double scale0 = std::max(1.0, c.norm());
    for (int sweep = 0; sweep < 500; ++sweep) {
      Vector next = mlu.solve(-(rhs + Nop * c));
      const double delta = (next - c).norm();
      c = next;
      if (c.norm() > 1e8 * scale0)
        throw DivergenceError("solve_degree: iterative sweep diverged at degree " +
                              std::to_string(d + 1));
      if (delta <= 1e-10 * std::max(1.0, c.norm())) break;
      if (sweep == 499)
        throw DivergenceError("solve_degree: iterative sweep failed to converge at degree " +
                              std::to_string(d + 1));
    }
  }
  HomPoly pi_next = detail::poly_from_coeffs(c, basis_hi, n, d + 1);
  pi.add(pi_next);

  const auto basis_d = enumerate_basis(n, d);
  const VectorSeries E6 = detail::collect_gradient_equation(ctx, pi, kappa, d);
  Eigen::LDLT<Matrix> rhat(Rhat);
  std::vector<HomPoly> kd(static_cast<std::size_t>(ctx.m), HomPoly(n, d));
  for (const auto& mi : basis_d) {
    Vector b(ctx.m);
    for (int q = 0; q < ctx.m; ++q) {
      const HomPoly* t = E6[static_cast<std::size_t>(q)].term(d);
      b[q] = t ? t->coefficient(mi) : 0.0;
    }
    Vector sol = -rhat.solve(b);
    for (int q = 0; q < ctx.m; ++q)
      if (sol[q] != 0.0) kd[static_cast<std::size_t>(q)].add_term(mi, sol[q]);
  }
  for (auto& comp : kd) comp.normalize();
  for (int q = 0; q < ctx.m; ++q) kappa[static_cast<std::size_t>(q)].add(kd[static_cast<std::size_t>(q)]);
  return {std::move(pi_next), std::move(kd)};
}

/// Full series solve: stochastic ARE, then degrees 2 .. degree_cap-1.
inline HJBSeriesResult solve_hjb_series(const NonlinearProblem& problem,
                                        HjbMethod method = HjbMethod::direct,
                                        double sare_tol = 1e-12) {
  problem.validate();
  HJBSeriesResult out;
  out.sare = sare_iterate(problem.lin, sare_tol);
  if (out.sare.status != SolveStatus::converged)
    throw DivergenceError(std::string("solve_hjb_series: SARE status ") +
                          to_string(out.sare.status));
  const Matrix P = out.sare.P;
  const Matrix K = out.sare.K;

  SeriesSolution sol;
  sol.P = P;
  sol.K = K;
  sol.degree_cap = problem.degree_cap;

  detail::CollectContext ctx(problem);
  PolySeries pi = sol.pi_series();       // quadratic kernel only, so far
  VectorSeries kappa = sol.kappa_series();

  const Matrix Acl = problem.lin.base.F + problem.lin.base.G * K;
  std::vector<Matrix> Ms;
  for (int k = 0; k < problem.lin.r(); ++k) Ms.push_back(problem.lin.C[k] + problem.lin.D[k] * K);
  Matrix Rhat = problem.lin.base.R;
  for (int k = 0; k < problem.lin.r(); ++k)
    Rhat += problem.lin.D[k].transpose() * P * problem.lin.D[k];

  for (int d = 2; d < problem.degree_cap; ++d) {
    const Matrix M = build_deterministic_operator(Acl, d + 1);
    Matrix Op = M;
    if (!Ms.empty()) Op += build_noise_operator(Ms, d + 1);
    Op.diagonal().array() -= ctx.alpha;

    InvertibilityCertificate cert = lemma1_certificate(problem.lin, K, d + 1);
    out.certificates.emplace(d + 1, cert);
    if (!cert.invertible)
      throw OperatorSingularError("solve_hjb_series: degree-" + std::to_string(d + 1) +
                                      " operator is numerically singular",
                                  cert);

    auto [pi_d, kappa_d] = solve_degree(ctx, Op, Rhat, pi, kappa, d, method, M);
    if (!pi_d.empty()) sol.pi_hi.emplace(d + 1, std::move(pi_d));
    sol.kappa_hi.emplace(d, std::move(kappa_d));
  }
  out.solution = std::move(sol);
  return out;
}

/// Pointwise residuals of the two HJB equations at x, evaluated with the
/// truncated series solution and the problem's polynomial data.
inline std::pair<double, Vector> hjb_residual(const NonlinearProblem& problem,
                                              const SeriesSolution& sol, const Vector& x) {
  const int n = problem.n(), m = problem.m();
  if (x.size() != n) throw DimensionError("hjb_residual: x has wrong dimension");
  detail::CollectContext ctx(problem);
  const PolySeries pi = sol.pi_series();
  const Vector u = sol.kappa_value(x);
  Vector xu(n + m);
  xu << x, u;

  Vector grad(n);
  Matrix hess(n, n);
  for (int i = 0; i < n; ++i) {
    const PolySeries di = detail::series_partial(pi, i);
    grad[i] = di.evaluate(x);
    for (int j = 0; j < n; ++j) hess(i, j) = detail::series_partial(di, j).evaluate(x);
  }

  double scalar = -ctx.alpha * pi.evaluate(x);
  Vector fval(n);
  for (int i = 0; i < n; ++i) fval[i] = ctx.f[static_cast<std::size_t>(i)].evaluate(xu);
  scalar += grad.dot(fval) + ctx.l.evaluate(xu);
  for (int k = 0; k < ctx.r; ++k) {
    Vector g(n);
    for (int i = 0; i < n; ++i)
      g[i] = ctx.gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].evaluate(xu);
    scalar += 0.5 * g.dot(hess * g);
  }

  Vector gradient_eq(m);
  for (int q = 0; q < m; ++q) {
    double v = 0.0;
    for (int i = 0; i < n; ++i)
      v += grad[i] * ctx.f_u[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)].evaluate(xu);
    v += ctx.l_u[static_cast<std::size_t>(q)].evaluate(xu);
    for (int k = 0; k < ctx.r; ++k) {
      Vector g(n), gu(n);
      for (int i = 0; i < n; ++i) {
        g[i] = ctx.gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].evaluate(xu);
        gu[i] = ctx.gamma_u[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)]
                           [static_cast<std::size_t>(i)]
                    .evaluate(xu);
      }
      v += g.dot(hess * gu);
    }
    gradient_eq[q] = v;
  }
  return {scalar, gradient_eq};
}

}  // namespace shjb
