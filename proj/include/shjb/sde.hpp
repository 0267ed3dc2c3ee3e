#pragma once

// Monte Carlo verification harness: Euler-Maruyama simulation of the
// closed-loop bilinear-noise SDE under a polynomial feedback, accumulating
// the discounted running cost.  Normals come from a counter-based Philox
// generator keyed by (seed, path, step, draw), so results are bit-identical
// for a given seed no matter how many threads run the paths.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "shjb/hjb.hpp"

namespace shjb {

/// Philox4x32-10 block cipher (Salmon et al. 2011).
struct Philox4x32 {
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }
};

/// Two standard normals from the counter (seed, path, step, draw) by
/// Box-Muller over Philox output.
inline std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t path,
                                             std::uint32_t step, std::uint32_t draw) {
  const std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(path),
                                            static_cast<std::uint32_t>(path >> 32), step, draw};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                            static_cast<std::uint32_t>(seed >> 32)};
  const auto out = Philox4x32::block(ctr, key);
  const std::uint64_t a = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
  // u1 in (0,1], u2 in [0,1)
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1p-53;
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 6.283185307179586476925286766559 * u2;
  return {rad * std::cos(ang), rad * std::sin(ang)};
}

struct SimConfig {
  Vector x0;
  double T = 10.0;        ///< horizon at which the discounted integral is truncated
  double dt = 1e-3;
  int npaths = 10000;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  bool keep_paths = false;  ///< retain per-path costs in the result
  int threads = 0;          ///< 0 = hardware concurrency

  void validate() const {
    if (dt <= 0.0) throw DimensionError("SimConfig: dt must be positive");
    if (npaths < 1) throw DimensionError("SimConfig: npaths must be >= 1");
    if (T <= 0.0) throw DimensionError("SimConfig: T must be positive");
  }
};

struct SimResult {
  double mean_cost = 0.0;
  double std_error = 0.0;
  int paths_diverged = 0;
  std::vector<double> per_path;  ///< only when keep_paths is set
};

/// Polynomial feedback u = K x + sum kappa^[d](x), truncated at a degree.
struct FeedbackPolicy {
  VectorSeries kappa;  ///< complete per-component series including degree 1

  static FeedbackPolicy from_solution(const SeriesSolution& sol,
                                      int truncate_degree = 1 << 20) {
    FeedbackPolicy p;
    p.kappa = sol.kappa_series(truncate_degree);
    return p;
  }

  static FeedbackPolicy linear(const Matrix& K) {
    FeedbackPolicy p;
    for (int q = 0; q < K.rows(); ++q) {
      PolySeries s(static_cast<int>(K.cols()));
      s.add(linear_form(K, q));
      p.kappa.push_back(std::move(s));
    }
    return p;
  }

  Vector evaluate(const Vector& x) const {
    Vector u(static_cast<Eigen::Index>(kappa.size()));
    for (std::size_t q = 0; q < kappa.size(); ++q)
      u[static_cast<Eigen::Index>(q)] = kappa[q].evaluate(x);
    return u;
  }
};

namespace detail {

/// Precomputed one-step maps for the all-linear case: the Euler-Maruyama
/// update collapses to x <- A x + sum xi_k B_k x with a quadratic stage cost.
struct LinearLoop {
  Matrix A;               // I + dt (F + G K)
  std::vector<Matrix> B;  // sqrt(dt) (C_k + D_k K)
  Matrix W;               // 1/2 (Q + S K + K'S' + K'R K), symmetric
  bool active = false;
};

inline LinearLoop make_linear_loop(const NonlinearProblem& problem,
                                   const FeedbackPolicy& policy, const SimConfig& cfg) {
  LinearLoop loop;
  for (const auto& s : problem.f_hi)
    if (!s.empty()) return loop;
  for (const auto& g : problem.gamma_hi)
    for (const auto& s : g)
      if (!s.empty()) return loop;
  if (!problem.l_hi.empty()) return loop;
  for (const auto& s : policy.kappa)
    if (!s.empty() && s.max_degree() > 1) return loop;

  const int n = problem.n(), m = problem.m();
  Matrix K = Matrix::Zero(m, n);
  for (int q = 0; q < m; ++q)
    if (const HomPoly* h = policy.kappa[static_cast<std::size_t>(q)].term(1))
      for (const auto& [mi, c] : h->terms())
        for (int j = 0; j < n; ++j)
          if (mi[j] == 1) K(q, j) = c;
  const auto& b = problem.lin.base;
  loop.A = Matrix::Identity(n, n) + cfg.dt * (b.F + b.G * K);
  for (int k = 0; k < problem.lin.r(); ++k)
    loop.B.push_back(std::sqrt(cfg.dt) * (problem.lin.C[static_cast<std::size_t>(k)] +
                                          problem.lin.D[static_cast<std::size_t>(k)] * K));
  Matrix W = b.Q + b.S * K + K.transpose() * b.S.transpose() + K.transpose() * b.R * K;
  loop.W = 0.25 * (W + W.transpose());  // halves the symmetrized quadratic
  loop.active = true;
  return loop;
}

/// One path of the closed-loop Euler-Maruyama scheme; returns the discounted
/// cost, or NaN when the path escapes |x| > 1e6.
inline double simulate_path(const NonlinearProblem& problem, const FeedbackPolicy& policy,
                            const SimConfig& cfg, const CollectContext& ctx,
                            const LinearLoop& loop, std::uint64_t path) {
  const int n = problem.n(), m = problem.m(), r = problem.lin.r();
  const int steps = static_cast<int>(cfg.T / cfg.dt + 0.5);
  const double sqdt = std::sqrt(cfg.dt);
  double xi[2] = {0.0, 0.0};
  double cost = 0.0;
  double discount = 1.0;
  const double decay = std::exp(-cfg.alpha * cfg.dt);

  if (loop.active && r <= 2) {
    // tight kernel used by the verification runs (millions of steps)
    double x[8], xn[8];
    for (int i = 0; i < n; ++i) x[i] = cfg.x0[i];
    for (int s = 0; s < steps; ++s) {
      const auto [z0, z1] = normal_pair(cfg.seed, path, static_cast<std::uint32_t>(s), 0);
      xi[0] = z0;
      xi[1] = z1;
      double quad = 0.0, nrm2 = 0.0;
      for (int i = 0; i < n; ++i) {
        double wi = 0.0, ai = 0.0;
        for (int j = 0; j < n; ++j) {
          wi += loop.W(i, j) * x[j];
          ai += loop.A(i, j) * x[j];
        }
        quad += x[i] * wi;
        xn[i] = ai;
      }
      for (int k = 0; k < r; ++k)
        for (int i = 0; i < n; ++i) {
          double bi = 0.0;
          for (int j = 0; j < n; ++j) bi += loop.B[static_cast<std::size_t>(k)](i, j) * x[j];
          xn[i] += xi[k] * bi;
        }
      cost += discount * quad * cfg.dt;
      discount *= decay;
      for (int i = 0; i < n; ++i) {
        x[i] = xn[i];
        nrm2 += x[i] * x[i];
      }
      if (nrm2 > 1e12) return std::numeric_limits<double>::quiet_NaN();
    }
    return cost;
  }

  Vector x = cfg.x0;
  Vector u(m), drift(n), gk(n), xu(n + m), xnew(n);
  std::vector<double> xiv(static_cast<std::size_t>(r));
  for (int s = 0; s < steps; ++s) {
    for (int k = 0; k < r; k += 2) {
      const auto [z0, z1] = normal_pair(cfg.seed, path, static_cast<std::uint32_t>(s),
                                        static_cast<std::uint32_t>(k / 2));
      xiv[static_cast<std::size_t>(k)] = z0;
      if (k + 1 < r) xiv[static_cast<std::size_t>(k) + 1] = z1;
    }
    if (loop.active) {
      cost += discount * x.dot(loop.W * x) * cfg.dt;
      xnew.noalias() = loop.A * x;
      for (int k = 0; k < r; ++k)
        xnew.noalias() += xiv[static_cast<std::size_t>(k)] * (loop.B[static_cast<std::size_t>(k)] * x);
      x = xnew;
    } else {
      xu.head(n) = x;
      u = policy.evaluate(x);
      xu.tail(m) = u;
      for (int i = 0; i < n; ++i) drift[i] = ctx.f[static_cast<std::size_t>(i)].evaluate(xu);
      cost += discount * ctx.l.evaluate(xu) * cfg.dt;
      xnew = x + cfg.dt * drift;
      for (int k = 0; k < r; ++k) {
        for (int i = 0; i < n; ++i)
          gk[i] = ctx.gamma[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].evaluate(xu);
        xnew += sqdt * xiv[static_cast<std::size_t>(k)] * gk;
      }
      x = xnew;
      discount *= decay;
      if (x.squaredNorm() > 1e12) return std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    discount *= decay;
    if (x.squaredNorm() > 1e12) return std::numeric_limits<double>::quiet_NaN();
  }
  return cost;
}

}  // namespace detail

/// Simulates npaths closed-loop paths and estimates the discounted cost.
/// Identical (seed, cfg) inputs give bit-identical results regardless of the
/// thread count; diverged paths are counted and excluded from the mean.
inline SimResult simulate_closed_loop(const NonlinearProblem& problem,
                                      const FeedbackPolicy& policy, const SimConfig& cfg) {
  cfg.validate();
  problem.validate();
  if (static_cast<int>(policy.kappa.size()) != problem.m())
    throw DimensionError("simulate_closed_loop: feedback has wrong control dimension");
  if (cfg.x0.size() != problem.n())
    throw DimensionError("simulate_closed_loop: x0 has wrong dimension");
  const detail::CollectContext ctx(problem);
  const detail::LinearLoop loop = detail::make_linear_loop(problem, policy, cfg);

  std::vector<double> costs(static_cast<std::size_t>(cfg.npaths));
  int nthreads = cfg.threads > 0 ? cfg.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, cfg.npaths));
  std::vector<std::thread> pool;
  std::atomic<int> next_block{0};
  const int block = 256;
  const int nblocks = (cfg.npaths + block - 1) / block;
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int b = next_block.fetch_add(1);
        if (b >= nblocks) return;
        const int lo = b * block, hi = std::min(cfg.npaths, lo + block);
        for (int p = lo; p < hi; ++p)
          costs[static_cast<std::size_t>(p)] = detail::simulate_path(
              problem, policy, cfg, ctx, loop, static_cast<std::uint64_t>(p));
      }
    });
  }
  for (auto& th : pool) th.join();

  SimResult res;
  double sum = 0.0, sumsq = 0.0;
  int good = 0;
  for (double c : costs) {
    if (std::isnan(c)) {
      ++res.paths_diverged;
      continue;
    }
    sum += c;
    sumsq += c * c;
    ++good;
  }
  if (good > 0) {
    res.mean_cost = sum / good;
    if (good > 1) {
      const double var = std::max(0.0, (sumsq - sum * sum / good) / (good - 1));
      res.std_error = std::sqrt(var / good);
    }
  }
  if (cfg.keep_paths) res.per_path = std::move(costs);
  return res;
}

/// Runs every feedback against the same random-number stream (common random
/// numbers) for a variance-reduced comparison; results in input order.
inline std::vector<SimResult> compare_feedbacks(const NonlinearProblem& problem,
                                                const std::vector<FeedbackPolicy>& policies,
                                                const SimConfig& cfg) {
  std::vector<SimResult> out;
  out.reserve(policies.size());
  for (const auto& p : policies) out.push_back(simulate_closed_loop(problem, p, cfg));
  return out;
}

/// Comparison table as CSV, ranked by mean cost (diverging entries last).
inline void write_comparison_csv(const std::vector<std::string>& labels,
                                 const std::vector<SimResult>& results, std::ostream& os) {
  std::vector<std::size_t> order(results.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return results[a].mean_cost < results[b].mean_cost;
  });
  os << "rank,feedback,mean_cost,std_error,paths_diverged\n";
  os.precision(12);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& res = results[order[r]];
    os << (r + 1) << ',' << labels[order[r]] << ',' << res.mean_cost << ',' << res.std_error
       << ',' << res.paths_diverged << '\n';
  }
}

}  // namespace shjb
