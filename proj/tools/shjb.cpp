// Batch front door: ingest problem files, dispatch solvers, emit solutions,
// trajectories, histories, and residual reports.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "shjb/problem_io.hpp"
#include "shjb/sde.hpp"

namespace fs = std::filesystem;
using namespace shjb;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_manifest(const fs::path& out_dir, RunManifest manifest) {
  manifest.outputs.push_back((out_dir / "manifest.json").string());
  atomic_write(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

RunManifest base_manifest(const std::string& command, const std::string& input,
                          const json& config) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.input_path = input;
  m.input_hash = file_hash_hex(input);
  return m;
}

int cmd_solve_sare(const std::string& input, const std::string& out, double tol, int max_iter) {
  Timer timer;
  const ProblemFile pf = ProblemFile::load(input);
  const LQGBData data = pf.to_lqgb();
  SAREResult res = sare_iterate(data, tol, max_iter);

  fs::create_directories(out);
  json sol;
  sol["status"] = to_string(res.status);
  sol["iterations"] = res.iterations;
  sol["P"] = io::matrix_to_json(res.P);
  sol["K"] = io::matrix_to_json(res.K);
  sol["residual"] = sare_residual(data, res.P, res.K);
  std::vector<std::complex<double>> eigs = closed_loop_spectrum(data.base.F, data.base.G, res.K);
  json spec = json::array();
  for (const auto& z : eigs) spec.push_back(json{{"re", z.real()}, {"im", z.imag()}});
  sol["closed_loop_eigenvalues"] = std::move(spec);
  atomic_write(fs::path(out) / "solution.json", sol.dump(2) + "\n");
  std::ostringstream hist;
  write_history_csv(res.history, hist);
  atomic_write(fs::path(out) / "history.csv", hist.str());

  RunManifest m = base_manifest("solve-sare", input,
                                json{{"tol", tol}, {"max_iter", max_iter}, {"out", out}});
  m.wall_time_s = timer.seconds();
  m.outputs = {(fs::path(out) / "solution.json").string(), (fs::path(out) / "history.csv").string()};
  write_manifest(out, std::move(m));
  if (res.status == SolveStatus::diverged) {
    std::cerr << "solve-sare: iteration diverged after " << res.iterations
              << " sweeps (|P| = " << res.history.back().p_norm << ")\n";
    return 2;
  }
  if (res.status == SolveStatus::max_iter) {
    std::cerr << "solve-sare: no convergence within " << max_iter << " sweeps\n";
    return 2;
  }
  return 0;
}

int cmd_solve_hjb(const std::string& input, const std::string& out, int degree,
                  const std::string& method, double tol) {
  Timer timer;
  ProblemFile pf = ProblemFile::load(input);
  if (degree > 0) pf.degree_cap = degree;
  NonlinearProblem problem = pf.to_nonlinear();
  const HjbMethod hm = method == "iterative" ? HjbMethod::iterative : HjbMethod::direct;

  fs::create_directories(out);
  HJBSeriesResult res;
  try {
    res = solve_hjb_series(problem, hm, tol);
  } catch (const OperatorSingularError& e) {
    std::cerr << "solve-hjb: " << e.what() << "\n";
    json dump = certificate_to_json(e.certificate);
    atomic_write(fs::path(out) / "certificates.json", dump.dump(2) + "\n");
    std::cerr << dump.dump(2) << "\n";
    return 3;
  }

  atomic_write(fs::path(out) / "solution.json", solution_to_json(res.solution).dump(2) + "\n");
  json certs = json::array();
  for (const auto& [d, c] : res.certificates) certs.push_back(certificate_to_json(c));
  atomic_write(fs::path(out) / "certificates.json", certs.dump(2) + "\n");

  // residual-order samples: mean |residual| over a few spheres
  std::ostringstream rr;
  rr << "radius,mean_abs_residual\n";
  rr.precision(12);
  std::vector<double> lr, lv;
  for (int i = 0; i < 10; ++i) {
    const double rad = 0.03 * std::pow(10.0, i / 9.0);
    double acc = 0.0;
    int cnt = 0;
    for (int s = 0; s < 16; ++s) {
      const double ang = 0.39269908169872414 * (s + 0.5);
      Vector x(problem.n());
      for (int v = 0; v < problem.n(); ++v)
        x[v] = rad * ((v % 2 == 0) ? std::cos(ang * (v + 1)) : std::sin(ang * (v + 1)));
      x *= rad / x.norm();
      acc += std::abs(hjb_residual(problem, res.solution, x).first);
      ++cnt;
    }
    rr << rad << ',' << acc / cnt << '\n';
    lr.push_back(std::log(rad));
    lv.push_back(std::log(acc / cnt));
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lr.size(); ++i) {
    sx += lr[i];
    sy += lv[i];
    sxx += lr[i] * lr[i];
    sxy += lr[i] * lv[i];
  }
  const double N = static_cast<double>(lr.size());
  const double slope = (N * sxy - sx * sy) / (N * sxx - sx * sx);
  rr << "# fitted log-log slope: " << slope << "\n";
  atomic_write(fs::path(out) / "residual_order.csv", rr.str());

  std::ostringstream report;
  report << solution_report(res.solution);
  report << "residual order (log-log slope over [0.03, 0.3]): " << slope << "\n";
  atomic_write(fs::path(out) / "report.txt", report.str());

  RunManifest m = base_manifest(
      "solve-hjb", input,
      json{{"degree", problem.degree_cap}, {"method", method}, {"tol", tol}, {"out", out}});
  m.wall_time_s = timer.seconds();
  m.outputs = {(fs::path(out) / "solution.json").string(),
               (fs::path(out) / "certificates.json").string(),
               (fs::path(out) / "residual_order.csv").string(),
               (fs::path(out) / "report.txt").string()};
  write_manifest(out, std::move(m));
  return 0;
}

int cmd_solve_sdre(const std::string& input, const std::string& out, int steps,
                   double horizon_override) {
  Timer timer;
  ProblemFile pf = ProblemFile::load(input);
  if (horizon_override > 0.0) pf.horizon = horizon_override;
  TimeVaryingProblem tv = pf.to_time_varying();

  fs::create_directories(out);
  SDRETrajectory traj;
  try {
    traj = integrate_sdre(tv, steps);
  } catch (const DivergenceError& e) {
    std::cerr << "solve-sdre: " << e.what() << "\n";
    return 2;
  }
  // degree-3 correction when cubic-level data or a terminal correction exists
  bool has_cubic = tv.pi_T_hi.count(3) > 0 || !pf.l_hi.empty();
  for (const auto& s : pf.f_hi) has_cubic = has_cubic || !s.empty();
  for (const auto& g : pf.gamma_hi)
    for (const auto& s : g) has_cubic = has_cubic || !s.empty();
  if (has_cubic) {
    VectorSeries f2(static_cast<std::size_t>(pf.n), PolySeries(pf.n + pf.m));
    std::vector<VectorSeries> g2(static_cast<std::size_t>(pf.r),
                                 VectorSeries(static_cast<std::size_t>(pf.n), PolySeries(pf.n + pf.m)));
    PolySeries l3(pf.n + pf.m);
    for (int i = 0; i < pf.n; ++i)
      if (const HomPoly* h = pf.f_hi[static_cast<std::size_t>(i)].term(2))
        f2[static_cast<std::size_t>(i)].add(*h);
    for (int k = 0; k < pf.r; ++k)
      for (int i = 0; i < pf.n; ++i)
        if (const HomPoly* h = pf.gamma_hi[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].term(2))
          g2[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].add(*h);
    if (const HomPoly* h = pf.l_hi.term(3)) l3.add(*h);
    HomPoly pi3T = tv.pi_T_hi.count(3) ? tv.pi_T_hi.at(3) : HomPoly(pf.n, 3);
    integrate_pi3(tv, traj, f2, g2, l3, pi3T);
  }
  std::ostringstream csv;
  write_trajectory_csv(traj, csv);
  atomic_write(fs::path(out) / "trajectory.csv", csv.str());
  json summary;
  summary["P0"] = io::matrix_to_json(traj.P.front());
  summary["K0"] = io::matrix_to_json(traj.K.front());
  summary["steps"] = steps;
  summary["horizon"] = tv.horizon;
  atomic_write(fs::path(out) / "summary.json", summary.dump(2) + "\n");

  RunManifest m = base_manifest("solve-sdre", input,
                                json{{"steps", steps}, {"horizon", tv.horizon}, {"out", out}});
  m.wall_time_s = timer.seconds();
  m.outputs = {(fs::path(out) / "trajectory.csv").string(),
               (fs::path(out) / "summary.json").string()};
  write_manifest(out, std::move(m));
  return 0;
}

int cmd_simulate(const std::string& input, const std::string& solution_path,
                 const std::string& out, const std::string& x0_str, double T, double dt,
                 int paths, std::uint64_t seed, const std::string& degrees_str,
                 bool keep_paths) {
  Timer timer;
  const ProblemFile pf = ProblemFile::load(input);
  NonlinearProblem problem = pf.to_nonlinear();

  std::ifstream sin(solution_path);
  if (!sin) throw NumericalError("cannot open solution file: " + solution_path);
  json sj;
  sin >> sj;
  SeriesSolution sol = solution_from_json(sj);
  if (sol.n() != problem.n() || sol.m() != problem.m())
    throw DimensionError("simulate: solution dimensions do not match the problem");

  SimConfig cfg;
  cfg.T = T;
  cfg.dt = dt;
  cfg.npaths = paths;
  cfg.seed = seed;
  cfg.alpha = pf.alpha;
  cfg.keep_paths = keep_paths;
  cfg.x0 = Vector::Zero(problem.n());
  {
    std::stringstream ss(x0_str);
    std::string item;
    int idx = 0;
    while (std::getline(ss, item, ',')) {
      if (idx >= problem.n()) throw DimensionError("simulate: x0 has too many entries");
      cfg.x0[idx++] = std::stod(item);
    }
    if (idx != problem.n()) throw DimensionError("simulate: x0 has too few entries");
  }

  std::vector<int> degrees;
  {
    std::stringstream ss(degrees_str);
    std::string item;
    while (std::getline(ss, item, ',')) degrees.push_back(std::stoi(item));
    if (degrees.empty()) degrees.push_back(sol.degree_cap);
  }
  std::vector<FeedbackPolicy> policies;
  std::vector<std::string> labels;
  for (int d : degrees) {
    policies.push_back(FeedbackPolicy::from_solution(sol, d));
    labels.push_back("degree<=" + std::to_string(d));
  }
  auto results = compare_feedbacks(problem, policies, cfg);

  fs::create_directories(out);
  std::ostringstream csv;
  write_comparison_csv(labels, results, csv);
  atomic_write(fs::path(out) / "results.csv", csv.str());
  if (keep_paths) {
    std::ostringstream pp;
    pp.precision(17);
    pp << "path";
    for (const auto& l : labels) pp << ',' << l;
    pp << '\n';
    for (int p = 0; p < cfg.npaths; ++p) {
      pp << p;
      for (const auto& resv : results) pp << ',' << resv.per_path[static_cast<std::size_t>(p)];
      pp << '\n';
    }
    atomic_write(fs::path(out) / "per_path.csv", pp.str());
  }

  RunManifest m = base_manifest(
      "simulate", input,
      json{{"solution", solution_path}, {"x0", x0_str}, {"T", T}, {"dt", dt},
           {"paths", paths}, {"seed", seed}, {"degrees", degrees_str}, {"out", out}});
  m.wall_time_s = timer.seconds();
  m.outputs = {(fs::path(out) / "results.csv").string()};
  write_manifest(out, std::move(m));
  return 0;
}

int cmd_spectrum(const std::string& input, const std::string& out, int degree) {
  Timer timer;
  const ProblemFile pf = ProblemFile::load(input);
  const LQGBData data = pf.to_lqgb();
  SAREResult res = sare_iterate(data);
  if (res.status != SolveStatus::converged) {
    std::cerr << "spectrum: SARE did not converge (" << to_string(res.status) << ")\n";
    return 2;
  }
  const Matrix Acl = data.base.F + data.base.G * res.K;
  std::vector<Matrix> Ms;
  for (int k = 0; k < data.r(); ++k) Ms.push_back(data.C[k] + data.D[k] * res.K);

  json j;
  j["closed_loop"] = io::matrix_to_json(Acl);
  json per_degree = json::array();
  const int dmax = degree > 0 ? degree : pf.degree_cap;
  for (int d = 2; d <= dmax; ++d) {
    Matrix M = build_deterministic_operator(Acl, d);
    Matrix Op = M;
    if (!Ms.empty()) Op += build_noise_operator(Ms, d);
    Op.diagonal().array() -= data.base.alpha;
    json entry;
    entry["degree"] = d;
    Eigen::EigenSolver<Matrix> es_m(M), es_s(Op);
    json em = json::array(), eo = json::array();
    for (int i = 0; i < es_m.eigenvalues().size(); ++i) {
      em.push_back(json{{"re", es_m.eigenvalues()[i].real()}, {"im", es_m.eigenvalues()[i].imag()}});
      eo.push_back(json{{"re", es_s.eigenvalues()[i].real()}, {"im", es_s.eigenvalues()[i].imag()}});
    }
    entry["deterministic_eigenvalues"] = std::move(em);
    entry["stochastic_eigenvalues"] = std::move(eo);
    entry["certificate"] = certificate_to_json(lemma1_certificate(data, res.K, d));
    per_degree.push_back(std::move(entry));
  }
  j["operators"] = std::move(per_degree);

  fs::create_directories(out);
  atomic_write(fs::path(out) / "spectra.json", j.dump(2) + "\n");
  RunManifest m =
      base_manifest("spectrum", input, json{{"degree", degree}, {"out", out}});
  m.wall_time_s = timer.seconds();
  m.outputs = {(fs::path(out) / "spectra.json").string()};
  write_manifest(out, std::move(m));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic HJB power-series toolkit"};
  app.require_subcommand(1);

  std::string input, out = "out", method = "direct", x0 = "0", degrees, solution_path;
  double tol = kSareDefaultTol, dt = 1e-3, horizon = 0.0, T = 10.0;
  int max_iter = kSareDefaultMaxIter, degree = 0, steps = 1000, paths = 10000;
  std::uint64_t seed = 0;
  bool keep_paths = false;

  auto* sare = app.add_subcommand("solve-sare", "solve the stochastic algebraic Riccati system");
  sare->add_option("--input", input)->required();
  sare->add_option("--out", out);
  sare->add_option("--tol", tol);
  sare->add_option("--max-iter", max_iter);

  auto* hjb = app.add_subcommand("solve-hjb", "power-series solve of the stochastic HJB equations");
  hjb->add_option("--input", input)->required();
  hjb->add_option("--out", out);
  hjb->add_option("--degree", degree);
  hjb->add_option("--method", method)->check(CLI::IsMember({"direct", "iterative"}));
  hjb->add_option("--tol", tol);

  auto* sdre = app.add_subcommand("solve-sdre", "backward integration of the differential Riccati system");
  sdre->add_option("--input", input)->required();
  sdre->add_option("--out", out);
  sdre->add_option("--steps", steps);
  sdre->add_option("--horizon", horizon);

  auto* sim = app.add_subcommand("simulate", "Monte Carlo verification of a computed feedback");
  sim->add_option("--input", input)->required();
  sim->add_option("--solution", solution_path)->required();
  sim->add_option("--out", out);
  sim->add_option("--x0", x0)->required();
  sim->add_option("--horizon", T);
  sim->add_option("--dt", dt);
  sim->add_option("--paths", paths);
  sim->add_option("--seed", seed);
  sim->add_option("--degrees", degrees);
  sim->add_flag("--keep-paths", keep_paths);

  auto* spec = app.add_subcommand("spectrum", "dump operator spectra and invertibility certificates");
  spec->add_option("--input", input)->required();
  spec->add_option("--out", out);
  spec->add_option("--degree", degree);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sare->parsed()) return cmd_solve_sare(input, out, tol, max_iter);
    if (hjb->parsed())
      return cmd_solve_hjb(input, out, degree, method, tol == kSareDefaultTol ? 1e-12 : tol);
    if (sdre->parsed()) return cmd_solve_sdre(input, out, steps, horizon);
    if (sim->parsed())
      return cmd_simulate(input, solution_path, out, x0, T, dt, paths, seed, degrees, keep_paths);
    if (spec->parsed()) return cmd_spectrum(input, out, degree);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
