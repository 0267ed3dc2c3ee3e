#pragma once

// Homogeneous multivariate polynomial algebra on multi-index coefficient
// tables: basis enumeration, arithmetic, differentiation, and composition
// with linear and polynomial maps.  All values are immutable in spirit:
// operations return fresh objects and never mutate their inputs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "shjb/errors.hpp"

namespace shjb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Degree cap used when callers do not specify one.  Cost grows
/// combinatorially with the cap, so it stays a conscious choice.
inline constexpr int kDefaultDegreeCap = 6;

/// Relative prune threshold applied by HomPoly::normalize.
inline constexpr double kPruneRel = 1e-14;

/// Exponent tuple of a monomial.  Ordered graded-lexicographically:
/// lower total degree first; within a degree the tuple with the larger
/// leading exponents comes first, so (3,0) precedes (2,1) precedes (0,3).
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> exponents) : exps_(std::move(exponents)) {
    for (int e : exps_)
      if (e < 0) throw DimensionError("MultiIndex: negative exponent");
  }

  int nvars() const { return static_cast<int>(exps_.size()); }
  int degree() const { return std::accumulate(exps_.begin(), exps_.end(), 0); }
  int operator[](int j) const { return exps_[static_cast<std::size_t>(j)]; }
  const std::vector<int>& exponents() const { return exps_; }

  bool operator==(const MultiIndex& o) const { return exps_ == o.exps_; }
  bool operator!=(const MultiIndex& o) const { return !(*this == o); }
  bool operator<(const MultiIndex& o) const {
    const int da = degree(), db = o.degree();
    if (da != db) return da < db;
    return exps_ > o.exps_;  // larger exponent tuple first within a degree
  }

  /// Componentwise sum (monomial product).
  MultiIndex operator+(const MultiIndex& o) const {
    if (nvars() != o.nvars()) throw DimensionError("MultiIndex: nvars mismatch in +");
    std::vector<int> e(exps_);
    for (int j = 0; j < o.nvars(); ++j) e[static_cast<std::size_t>(j)] += o[j];
    return MultiIndex(std::move(e));
  }

 private:
  std::vector<int> exps_;
};

/// All multi-indices of the given total degree in graded-lex order.
/// The order is stable across runs; it fixes the coefficient-vector layout
/// for every operator matrix built downstream.
inline std::vector<MultiIndex> enumerate_basis(int nvars, int degree) {
  if (nvars < 1) throw DimensionError("enumerate_basis: nvars must be >= 1");
  if (degree < 0) throw DimensionError("enumerate_basis: degree must be >= 0");
  std::vector<MultiIndex> out;
  std::vector<int> cur(static_cast<std::size_t>(nvars), 0);
  auto rec = [&](auto&& self, int pos, int rem) -> void {
    if (pos == nvars - 1) {
      cur[static_cast<std::size_t>(pos)] = rem;
      out.emplace_back(cur);
      return;
    }
    for (int e = rem; e >= 0; --e) {
      cur[static_cast<std::size_t>(pos)] = e;
      self(self, pos + 1, rem - e);
    }
  };
  rec(rec, 0, degree);
  return out;
}

/// Homogeneous polynomial of fixed degree in a fixed variable block.
/// Absent multi-indices are zero coefficients.
class HomPoly {
 public:
  HomPoly() : nvars_(0), degree_(0) {}
  HomPoly(int nvars, int degree) : nvars_(nvars), degree_(degree) {
    if (nvars < 1) throw DimensionError("HomPoly: nvars must be >= 1");
    if (degree < 0) throw DimensionError("HomPoly: degree must be >= 0");
  }

  int nvars() const { return nvars_; }
  int degree() const { return degree_; }
  bool empty() const { return coeffs_.empty(); }
  const std::map<MultiIndex, double>& terms() const { return coeffs_; }

  void add_term(const MultiIndex& mi, double c) {
    if (mi.nvars() != nvars_) throw DimensionError("HomPoly: multi-index nvars mismatch");
    if (mi.degree() != degree_) throw DimensionError("HomPoly: multi-index degree mismatch");
    if (c == 0.0) return;
    auto [it, inserted] = coeffs_.emplace(mi, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) coeffs_.erase(it);
    }
  }

  double coefficient(const MultiIndex& mi) const {
    auto it = coeffs_.find(mi);
    return it == coeffs_.end() ? 0.0 : it->second;
  }

  double max_abs_coeff() const {
    double m = 0.0;
    for (const auto& [mi, c] : coeffs_) m = std::max(m, std::abs(c));
    return m;
  }

  /// Drop coefficients below rel * max|c| (keeps tables sparse without
  /// changing results at test tolerances).
  void normalize(double rel = kPruneRel) {
    const double thresh = rel * max_abs_coeff();
    for (auto it = coeffs_.begin(); it != coeffs_.end();) {
      if (std::abs(it->second) < thresh)
        it = coeffs_.erase(it);
      else
        ++it;
    }
  }

  double evaluate(const Vector& x) const {
    if (x.size() != nvars_) throw DimensionError("HomPoly::evaluate: x size mismatch");
    double s = 0.0;
    for (const auto& [mi, c] : coeffs_) {
      double t = c;
      for (int j = 0; j < nvars_; ++j)
        for (int e = 0; e < mi[j]; ++e) t *= x[j];
      s += t;
    }
    return s;
  }

  HomPoly& operator+=(const HomPoly& o) {
    if (o.nvars_ != nvars_ || o.degree_ != degree_)
      throw DimensionError("HomPoly: += shape mismatch");
    for (const auto& [mi, c] : o.coeffs_) add_term(mi, c);
    return *this;
  }

  HomPoly operator*(double s) const {
    HomPoly r(nvars_, degree_);
    if (s == 0.0) return r;
    for (const auto& [mi, c] : coeffs_) r.coeffs_.emplace(mi, c * s);
    return r;
  }

  /// Euclidean norm of the coefficient vector (graded-lex layout).
  double coeff_norm() const {
    double s = 0.0;
    for (const auto& [mi, c] : coeffs_) s += c * c;
    return std::sqrt(s);
  }

 private:
  int nvars_;
  int degree_;
  std::map<MultiIndex, double> coeffs_;
};

inline HomPoly operator+(HomPoly a, const HomPoly& b) {
  a += b;
  return a;
}

/// Coefficient convolution; result degree is the sum of the degrees.
inline HomPoly multiply(const HomPoly& p, const HomPoly& q) {
  if (p.nvars() != q.nvars()) throw DimensionError("multiply: nvars mismatch");
  HomPoly r(p.nvars(), p.degree() + q.degree());
  for (const auto& [mi, c] : p.terms())
    for (const auto& [mj, d] : q.terms()) r.add_term(mi + mj, c * d);
  return r;
}

/// Partial derivative with respect to variable j.  A degree-0 input yields
/// the zero polynomial of degree 0 (convention, not an error).
inline HomPoly partial(const HomPoly& p, int j) {
  if (j < 0 || j >= p.nvars()) throw DimensionError("partial: variable index out of range");
  if (p.degree() == 0) return HomPoly(p.nvars(), 0);
  HomPoly r(p.nvars(), p.degree() - 1);
  for (const auto& [mi, c] : p.terms()) {
    const int e = mi[j];
    if (e == 0) continue;
    std::vector<int> exps = mi.exponents();
    exps[static_cast<std::size_t>(j)] -= 1;
    r.add_term(MultiIndex(std::move(exps)), c * e);
  }
  return r;
}

/// The linear polynomial (row i of A) . x as a degree-1 HomPoly.
inline HomPoly linear_form(const Matrix& A, int row) {
  HomPoly r(static_cast<int>(A.cols()), 1);
  for (int j = 0; j < A.cols(); ++j) {
    if (A(row, j) == 0.0) continue;
    std::vector<int> e(static_cast<std::size_t>(A.cols()), 0);
    e[static_cast<std::size_t>(j)] = 1;
    r.add_term(MultiIndex(std::move(e)), A(row, j));
  }
  return r;
}

/// x |-> (Ax)' d2p/dx2 (Bx), computed symbolically.  Degree-preserving;
/// inputs of degree < 2 give the zero polynomial of the same degree.
inline HomPoly hessian_form(const HomPoly& p, const Matrix& A, const Matrix& B) {
  const int n = p.nvars();
  if (A.rows() != n || A.cols() != n || B.rows() != n || B.cols() != n)
    throw DimensionError("hessian_form: A and B must be nvars x nvars");
  HomPoly r(n, p.degree());
  if (p.degree() < 2) return r;
  for (int i = 0; i < n; ++i) {
    if (A.row(i).isZero(0.0)) continue;
    const HomPoly ai = linear_form(A, i);
    const HomPoly dpi = partial(p, i);
    for (int j = 0; j < n; ++j) {
      if (B.row(j).isZero(0.0)) continue;
      const HomPoly hij = partial(dpi, j);
      if (hij.empty()) continue;
      r += multiply(multiply(hij, ai), linear_form(B, j));
    }
  }
  return r;
}

/// Truncated sum of homogeneous terms keyed by degree, all in one variable
/// block.  Used for Taylor data, composed maps, and solution series.
class PolySeries {
 public:
  PolySeries() : nvars_(0) {}
  explicit PolySeries(int nvars) : nvars_(nvars) {
    if (nvars < 1) throw DimensionError("PolySeries: nvars must be >= 1");
  }

  int nvars() const { return nvars_; }
  bool empty() const { return terms_.empty(); }
  const std::map<int, HomPoly>& terms() const { return terms_; }

  int min_degree() const { return terms_.empty() ? 0 : terms_.begin()->first; }
  int max_degree() const { return terms_.empty() ? 0 : terms_.rbegin()->first; }

  /// The homogeneous component of the given degree, or nullptr.
  const HomPoly* term(int degree) const {
    auto it = terms_.find(degree);
    return it == terms_.end() ? nullptr : &it->second;
  }

  void add(const HomPoly& h) {
    if (h.nvars() != nvars_) throw DimensionError("PolySeries::add: nvars mismatch");
    if (h.empty()) return;
    auto [it, inserted] = terms_.emplace(h.degree(), h);
    if (!inserted) it->second += h;
    if (it->second.empty()) terms_.erase(it);
  }

  PolySeries& operator+=(const PolySeries& o) {
    if (o.nvars_ != nvars_) throw DimensionError("PolySeries: += nvars mismatch");
    for (const auto& [d, h] : o.terms_) add(h);
    return *this;
  }

  PolySeries operator*(double s) const {
    PolySeries r(nvars_);
    if (s == 0.0) return r;
    for (const auto& [d, h] : terms_) r.add(h * s);
    return r;
  }

  double evaluate(const Vector& x) const {
    double s = 0.0;
    for (const auto& [d, h] : terms_) s += h.evaluate(x);
    return s;
  }

  void normalize(double rel = kPruneRel) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      it->second.normalize(rel);
      if (it->second.empty())
        it = terms_.erase(it);
      else
        ++it;
    }
  }

  /// Series with a single constant term (degree 0), as a multiplication unit.
  static PolySeries constant(int nvars, double value) {
    PolySeries r(nvars);
    HomPoly h(nvars, 0);
    h.add_term(MultiIndex(std::vector<int>(static_cast<std::size_t>(nvars), 0)), value);
    r.add(h);
    return r;
  }

 private:
  int nvars_;
  std::map<int, HomPoly> terms_;
};

/// m-component polynomial map, one series per component.
using VectorSeries = std::vector<PolySeries>;

/// Product of two series, dropping every term above max_degree.
inline PolySeries multiply(const PolySeries& a, const PolySeries& b, int max_degree) {
  if (a.nvars() != b.nvars()) throw DimensionError("multiply(series): nvars mismatch");
  PolySeries r(a.nvars());
  for (const auto& [da, ha] : a.terms())
    for (const auto& [db, hb] : b.terms()) {
      if (da + db > max_degree) continue;
      r.add(multiply(ha, hb));
    }
  return r;
}

inline PolySeries series_pow(const PolySeries& a, int e, int max_degree) {
  PolySeries r = PolySeries::constant(a.nvars(), 1.0);
  for (int i = 0; i < e; ++i) r = multiply(r, a, max_degree);
  return r;
}

/// Substitute u := umap(x) into a polynomial over the concatenated (x,u)
/// block.  p has nx + umap.size() variables; every umap component is a
/// series in the first nx variables with min_degree >= 1.  The result is
/// truncated above max_degree; it is exact when umap is linear.
inline PolySeries substitute(const HomPoly& p, int nx, const VectorSeries& umap,
                             int max_degree) {
  const int m = static_cast<int>(umap.size());
  if (p.nvars() != nx + m) throw DimensionError("substitute: p must have nx + m variables");
  for (const auto& comp : umap) {
    if (comp.nvars() != nx) throw DimensionError("substitute: umap component nvars mismatch");
    if (!comp.empty() && comp.min_degree() < 1)
      throw DimensionError("substitute: umap components must have min_degree >= 1");
  }
  PolySeries out(nx);
  for (const auto& [mi, c] : p.terms()) {
    // split the monomial into its x part and u part
    std::vector<int> ex(mi.exponents().begin(), mi.exponents().begin() + nx);
    const int dx = std::accumulate(ex.begin(), ex.end(), 0);
    if (dx > max_degree) continue;
    PolySeries t(nx);
    HomPoly xpart(nx, dx);
    xpart.add_term(MultiIndex(std::move(ex)), c);
    t.add(xpart);
    bool dead = false;
    for (int j = 0; j < m && !dead; ++j) {
      const int e = mi[nx + j];
      if (e == 0) continue;
      t = multiply(t, series_pow(umap[j], e, max_degree), max_degree);
      dead = t.empty();
    }
    out += t;
  }
  return out;
}

/// Substitute into every term of a series over the (x,u) block.
inline PolySeries substitute(const PolySeries& p, int nx, const VectorSeries& umap,
                             int max_degree) {
  const int m = static_cast<int>(umap.size());
  if (p.nvars() != nx + m) throw DimensionError("substitute: series must have nx + m variables");
  PolySeries out(nx);
  for (const auto& [d, h] : p.terms()) out += substitute(h, nx, umap, max_degree);
  return out;
}

}  // namespace shjb
