#pragma once

// Problem-file and solution-file formats.  Problems are schema-versioned
// JSON: dense row-major matrices, optional higher-degree Taylor terms as
// exponent/coefficient records over the concatenated (x,u) block, optional
// terminal data and per-node time tables.  Serialization round-trips floats
// exactly.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shjb/hjb.hpp"
#include "shjb/sdre.hpp"

namespace shjb {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

namespace io {

inline Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw DimensionError("problem file: field '" + name + "' must be a matrix (array of rows)");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.front().size());
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[static_cast<std::size_t>(i)].size()) != cols)
      throw DimensionError("problem file: ragged rows in matrix '" + name + "'");
    for (int c = 0; c < cols; ++c)
      M(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  }
  return M;
}

inline json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline HomPoly poly_from_records(const json& terms, int nvars, int degree,
                                 const std::string& name) {
  HomPoly h(nvars, degree);
  for (const auto& t : terms) {
    const auto& e = t.at("exponents");
    if (static_cast<int>(e.size()) != nvars)
      throw DimensionError("problem file: '" + name + "' exponent tuple has wrong length");
    std::vector<int> exps;
    for (const auto& v : e) exps.push_back(v.get<int>());
    h.add_term(MultiIndex(std::move(exps)), t.at("coeff").get<double>());
  }
  return h;
}

inline json poly_to_records(const HomPoly& h) {
  json terms = json::array();
  for (const auto& [mi, c] : h.terms())
    terms.push_back(json{{"exponents", mi.exponents()}, {"coeff", c}});
  return terms;
}

inline json series_to_blocks(const PolySeries& s) {
  json blocks = json::array();
  for (const auto& [d, h] : s.terms())
    blocks.push_back(json{{"degree", d}, {"terms", poly_to_records(h)}});
  return blocks;
}

}  // namespace io

/// In-memory image of a problem file.
struct ProblemFile {
  int schema_version = kSchemaVersion;
  int n = 0, m = 0, r = 0;
  double alpha = 0.0;
  Matrix F, G, Q, R, S;
  std::vector<Matrix> C, D;
  int degree_cap = kDefaultDegreeCap;
  VectorSeries f_hi;                   // components over (x,u)
  std::vector<VectorSeries> gamma_hi;  // per channel
  PolySeries l_hi;
  std::optional<Matrix> P_T;
  std::map<int, HomPoly> pi_T_hi;
  std::optional<double> horizon;
  // optional time table: per-node matrices, linearly interpolated
  std::vector<double> table_t;
  std::map<std::string, std::vector<Matrix>> table_mats;   // F,G,Q,R,S
  std::vector<std::vector<Matrix>> table_C, table_D;       // per node, per channel

  static ProblemFile parse(const json& j) {
    ProblemFile p;
    p.schema_version = j.value("schema_version", kSchemaVersion);
    if (p.schema_version != kSchemaVersion)
      throw DimensionError("problem file: unsupported schema_version " +
                           std::to_string(p.schema_version));
    p.n = j.at("n").get<int>();
    p.m = j.at("m").get<int>();
    p.r = j.value("r", 0);
    p.alpha = j.value("alpha", 0.0);
    p.F = io::matrix_from_json(j.at("F"), "F");
    p.G = io::matrix_from_json(j.at("G"), "G");
    p.Q = io::matrix_from_json(j.at("Q"), "Q");
    p.R = io::matrix_from_json(j.at("R"), "R");
    p.S = j.contains("S") ? io::matrix_from_json(j.at("S"), "S") : Matrix::Zero(p.n, p.m);
    if (j.contains("C"))
      for (std::size_t k = 0; k < j.at("C").size(); ++k)
        p.C.push_back(io::matrix_from_json(j.at("C")[k], "C[" + std::to_string(k) + "]"));
    if (j.contains("D"))
      for (std::size_t k = 0; k < j.at("D").size(); ++k)
        p.D.push_back(io::matrix_from_json(j.at("D")[k], "D[" + std::to_string(k) + "]"));
    if (static_cast<int>(p.C.size()) != p.r || static_cast<int>(p.D.size()) != p.r)
      throw DimensionError("problem file: C and D must each hold r matrices");
    p.degree_cap = j.value("degree_cap", kDefaultDegreeCap);

    const int nxu = p.n + p.m;
    p.f_hi.assign(static_cast<std::size_t>(p.n), PolySeries(nxu));
    p.gamma_hi.assign(static_cast<std::size_t>(p.r),
                      VectorSeries(static_cast<std::size_t>(p.n), PolySeries(nxu)));
    p.l_hi = PolySeries(nxu);
    if (j.contains("f_hi"))
      for (const auto& blk : j.at("f_hi")) {
        const int comp = blk.at("component").get<int>();
        if (comp < 0 || comp >= p.n)
          throw DimensionError("problem file: f_hi component out of range");
        p.f_hi[static_cast<std::size_t>(comp)].add(
            io::poly_from_records(blk.at("terms"), nxu, blk.at("degree").get<int>(), "f_hi"));
      }
    if (j.contains("gamma_hi"))
      for (const auto& blk : j.at("gamma_hi")) {
        const int ch = blk.at("channel").get<int>();
        const int comp = blk.at("component").get<int>();
        if (ch < 0 || ch >= p.r || comp < 0 || comp >= p.n)
          throw DimensionError("problem file: gamma_hi channel/component out of range");
        p.gamma_hi[static_cast<std::size_t>(ch)][static_cast<std::size_t>(comp)].add(
            io::poly_from_records(blk.at("terms"), nxu, blk.at("degree").get<int>(), "gamma_hi"));
      }
    if (j.contains("l_hi"))
      for (const auto& blk : j.at("l_hi"))
        p.l_hi.add(
            io::poly_from_records(blk.at("terms"), nxu, blk.at("degree").get<int>(), "l_hi"));

    if (j.contains("terminal")) {
      const auto& t = j.at("terminal");
      if (t.contains("P_T")) p.P_T = io::matrix_from_json(t.at("P_T"), "terminal.P_T");
      if (t.contains("pi_T"))
        for (const auto& blk : t.at("pi_T")) {
          const int d = blk.at("degree").get<int>();
          p.pi_T_hi.emplace(d, io::poly_from_records(blk.at("terms"), p.n, d, "terminal.pi_T"));
        }
    }
    if (j.contains("horizon")) p.horizon = j.at("horizon").get<double>();

    if (j.contains("time_table")) {
      const auto& tt = j.at("time_table");
      for (const auto& v : tt.at("t")) p.table_t.push_back(v.get<double>());
      if (p.table_t.size() < 2)
        throw DimensionError("problem file: time_table needs at least two nodes");
      for (const char* key : {"F", "G", "Q", "R", "S"}) {
        if (!tt.contains(key)) continue;
        std::vector<Matrix> mats;
        for (std::size_t i = 0; i < tt.at(key).size(); ++i)
          mats.push_back(io::matrix_from_json(tt.at(key)[i],
                                              std::string("time_table.") + key));
        if (mats.size() != p.table_t.size())
          throw DimensionError("problem file: time_table entry count mismatch for " +
                               std::string(key));
        p.table_mats.emplace(key, std::move(mats));
      }
      for (const char* key : {"C", "D"}) {
        if (!tt.contains(key)) continue;
        auto& dst = std::string(key) == "C" ? p.table_C : p.table_D;
        for (std::size_t node = 0; node < tt.at(key).size(); ++node) {
          std::vector<Matrix> per_channel;
          for (std::size_t k = 0; k < tt.at(key)[node].size(); ++k)
            per_channel.push_back(io::matrix_from_json(tt.at(key)[node][k],
                                                       std::string("time_table.") + key));
          dst.push_back(std::move(per_channel));
        }
        if (dst.size() != p.table_t.size())
          throw DimensionError("problem file: time_table entry count mismatch for " +
                               std::string(key));
      }
    }
    return p;
  }

  static ProblemFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NumericalError("cannot open problem file: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw NumericalError("problem file " + path + ": " + e.what());
    }
    try {
      return parse(j);
    } catch (const json::exception& e) {
      throw NumericalError("problem file " + path + ": " + e.what());
    }
  }

  json to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["n"] = n;
    j["m"] = m;
    j["r"] = r;
    j["alpha"] = alpha;
    j["F"] = io::matrix_to_json(F);
    j["G"] = io::matrix_to_json(G);
    j["Q"] = io::matrix_to_json(Q);
    j["R"] = io::matrix_to_json(R);
    j["S"] = io::matrix_to_json(S);
    j["C"] = json::array();
    j["D"] = json::array();
    for (const auto& Ck : C) j["C"].push_back(io::matrix_to_json(Ck));
    for (const auto& Dk : D) j["D"].push_back(io::matrix_to_json(Dk));
    j["degree_cap"] = degree_cap;
    json fblocks = json::array();
    for (int i = 0; i < n; ++i)
      for (const auto& [d, h] : f_hi[static_cast<std::size_t>(i)].terms())
        fblocks.push_back(json{{"component", i}, {"degree", d}, {"terms", io::poly_to_records(h)}});
    if (!fblocks.empty()) j["f_hi"] = std::move(fblocks);
    json gblocks = json::array();
    for (int k = 0; k < r; ++k)
      for (int i = 0; i < n; ++i)
        for (const auto& [d, h] : gamma_hi[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].terms())
          gblocks.push_back(json{{"channel", k},
                                 {"component", i},
                                 {"degree", d},
                                 {"terms", io::poly_to_records(h)}});
    if (!gblocks.empty()) j["gamma_hi"] = std::move(gblocks);
    json lblocks = json::array();
    for (const auto& [d, h] : l_hi.terms())
      lblocks.push_back(json{{"degree", d}, {"terms", io::poly_to_records(h)}});
    if (!lblocks.empty()) j["l_hi"] = std::move(lblocks);
    if (P_T || !pi_T_hi.empty()) {
      json t;
      if (P_T) t["P_T"] = io::matrix_to_json(*P_T);
      if (!pi_T_hi.empty()) {
        json blocks = json::array();
        for (const auto& [d, h] : pi_T_hi)
          blocks.push_back(json{{"degree", d}, {"terms", io::poly_to_records(h)}});
        t["pi_T"] = std::move(blocks);
      }
      j["terminal"] = std::move(t);
    }
    if (horizon) j["horizon"] = *horizon;
    return j;
  }

  LQGBData to_lqgb() const {
    LQGBData d;
    d.base.F = F;
    d.base.G = G;
    d.base.Q = Q;
    d.base.R = R;
    d.base.S = S;
    d.base.alpha = alpha;
    d.C = C;
    d.D = D;
    d.validate();
    return d;
  }

  NonlinearProblem to_nonlinear() const {
    NonlinearProblem p = NonlinearProblem::from_linear(to_lqgb(), degree_cap);
    p.f_hi = f_hi;
    p.gamma_hi = gamma_hi;
    p.l_hi = l_hi;
    p.validate();
    return p;
  }

  TimeVaryingProblem to_time_varying() const {
    if (!horizon) throw DimensionError("problem file: time-varying solve needs 'horizon'");
    TimeVaryingProblem tv;
    tv.horizon = *horizon;
    tv.P_T = P_T ? *P_T : Matrix::Zero(n, n);
    tv.pi_T_hi = pi_T_hi;
    if (table_t.empty()) {
      tv.sample = [d = to_lqgb()](double) { return d; };
      return tv;
    }
    // linear interpolation between nodes, constant extrapolation outside
    auto interp_weight = [ts = table_t](double t) {
      std::size_t i = 0;
      while (i + 2 < ts.size() && t > ts[i + 1]) ++i;
      const double span = ts[i + 1] - ts[i];
      double w = span > 0 ? (t - ts[i]) / span : 0.0;
      w = std::clamp(w, 0.0, 1.0);
      return std::pair<std::size_t, double>(i, w);
    };
    tv.sample = [self = *this, interp_weight](double t) {
      auto [i, w] = interp_weight(t);
      auto pick = [&](const char* key, const Matrix& fallback) -> Matrix {
        auto it = self.table_mats.find(key);
        if (it == self.table_mats.end()) return fallback;
        return (1.0 - w) * it->second[i] + w * it->second[i + 1];
      };
      LQGBData d;
      d.base.F = pick("F", self.F);
      d.base.G = pick("G", self.G);
      d.base.Q = pick("Q", self.Q);
      d.base.R = pick("R", self.R);
      d.base.S = pick("S", self.S);
      d.base.alpha = self.alpha;
      for (int k = 0; k < self.r; ++k) {
        d.C.push_back(self.table_C.empty()
                          ? self.C[static_cast<std::size_t>(k)]
                          : (1.0 - w) * self.table_C[i][static_cast<std::size_t>(k)] +
                                w * self.table_C[i + 1][static_cast<std::size_t>(k)]);
        d.D.push_back(self.table_D.empty()
                          ? self.D[static_cast<std::size_t>(k)]
                          : (1.0 - w) * self.table_D[i][static_cast<std::size_t>(k)] +
                                w * self.table_D[i + 1][static_cast<std::size_t>(k)]);
      }
      return d;
    };
    return tv;
  }
};

/// Writes text to <path> atomically (temp file then rename).
inline void atomic_write(const std::filesystem::path& path, const std::string& text) {
  namespace fs = std::filesystem;
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw NumericalError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << fnv1a_hash(ss.str());
  return hex.str();
}

/// Reproducibility record emitted alongside every command output.
struct RunManifest {
  std::string command;
  json config;
  std::string input_path;
  std::string input_hash;
  double wall_time_s = 0.0;
  std::vector<std::string> outputs;

  json to_json() const {
    return json{{"command", command},      {"config", config},
                {"input", input_path},     {"input_hash_fnv1a64", input_hash},
                {"tool_version", kToolVersion}, {"wall_time_s", wall_time_s},
                {"outputs", outputs}};
  }
};

/// Series-solution file: P, K dense row-major plus polynomial blocks.
inline json solution_to_json(const SeriesSolution& sol) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["n"] = sol.n();
  j["m"] = sol.m();
  j["degree_cap"] = sol.degree_cap;
  j["P"] = io::matrix_to_json(sol.P);
  j["K"] = io::matrix_to_json(sol.K);
  json pis = json::array();
  for (const auto& [d, h] : sol.pi_hi)
    pis.push_back(json{{"degree", d}, {"terms", io::poly_to_records(h)}});
  j["pi"] = std::move(pis);
  json kaps = json::array();
  for (const auto& [d, comps] : sol.kappa_hi)
    for (std::size_t q = 0; q < comps.size(); ++q)
      kaps.push_back(json{{"component", static_cast<int>(q)},
                          {"degree", d},
                          {"terms", io::poly_to_records(comps[q])}});
  j["kappa"] = std::move(kaps);
  return j;
}

inline SeriesSolution solution_from_json(const json& j) {
  SeriesSolution sol;
  sol.P = io::matrix_from_json(j.at("P"), "P");
  sol.K = io::matrix_from_json(j.at("K"), "K");
  sol.degree_cap = j.value("degree_cap", kDefaultDegreeCap);
  const int n = sol.n(), m = sol.m();
  for (const auto& blk : j.value("pi", json::array())) {
    const int d = blk.at("degree").get<int>();
    sol.pi_hi.emplace(d, io::poly_from_records(blk.at("terms"), n, d, "pi"));
  }
  for (const auto& blk : j.value("kappa", json::array())) {
    const int d = blk.at("degree").get<int>();
    const int q = blk.at("component").get<int>();
    auto [it, inserted] =
        sol.kappa_hi.emplace(d, std::vector<HomPoly>(static_cast<std::size_t>(m), HomPoly(n, d)));
    it->second[static_cast<std::size_t>(q)] =
        io::poly_from_records(blk.at("terms"), n, d, "kappa");
  }
  return sol;
}

inline json certificate_to_json(const InvertibilityCertificate& c) {
  return json{{"degree", c.degree},
              {"tau", c.tau},
              {"sigma", c.sigma},
              {"r", c.r},
              {"rho", c.rho},
              {"margin", c.margin},
              {"smallest_singular_value", c.smallest_singular_value},
              {"invertible", c.invertible}};
}

/// Human-readable coefficient listing, one block per degree, monomials in
/// graded-lex order.
inline std::string solution_report(const SeriesSolution& sol) {
  std::ostringstream os;
  os.precision(10);
  const int n = sol.n();
  auto monomial_name = [&](const MultiIndex& mi) {
    std::ostringstream m;
    for (int v = 0; v < n; ++v) {
      if (mi[v] == 0) continue;
      m << "x" << (v + 1);
      if (mi[v] > 1) m << '^' << mi[v];
    }
    return m.str().empty() ? std::string("1") : m.str();
  };
  os << "optimal cost pi(x)\n";
  os << "  degree 2:";
  SeriesSolution quad_only;
  quad_only.P = sol.P;
  quad_only.K = sol.K;
  const PolySeries quad = quad_only.pi_series();
  if (const HomPoly* q2 = quad.term(2))
    for (const auto& [mi, c] : q2->terms()) os << ' ' << c << '*' << monomial_name(mi);
  os << '\n';
  for (const auto& [d, h] : sol.pi_hi) {
    if (h.empty()) continue;
    os << "  degree " << d << ':';
    for (const auto& [mi, c] : h.terms()) os << ' ' << c << '*' << monomial_name(mi);
    os << '\n';
  }
  os << "optimal feedback kappa(x)\n";
  for (int q = 0; q < sol.m(); ++q) {
    os << "  component " << (q + 1) << ", degree 1:";
    for (int v = 0; v < n; ++v) os << ' ' << sol.K(q, v) << "*x" << (v + 1);
    os << '\n';
    for (const auto& [d, comps] : sol.kappa_hi) {
      const auto& h = comps[static_cast<std::size_t>(q)];
      if (h.empty()) continue;
      os << "  component " << (q + 1) << ", degree " << d << ':';
      for (const auto& [mi, c] : h.terms()) os << ' ' << c << '*' << monomial_name(mi);
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace shjb
