#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "shjb/poly.hpp"

using namespace shjb;

namespace {

HomPoly random_poly(int nvars, int degree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  HomPoly p(nvars, degree);
  for (const auto& mi : enumerate_basis(nvars, degree)) p.add_term(mi, dist(rng));
  return p;
}

Vector random_point(int nvars, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vector x(nvars);
  for (int i = 0; i < nvars; ++i) x[i] = dist(rng);
  return x;
}

MultiIndex mi(std::vector<int> e) { return MultiIndex(std::move(e)); }

}  // namespace

TEST_CASE("enumerate_basis order and counts") {
  SECTION("nvars=2 degree=1") {
    auto b = enumerate_basis(2, 1);
    REQUIRE(b.size() == 2);
    CHECK(b[0] == mi({1, 0}));
    CHECK(b[1] == mi({0, 1}));
  }
  SECTION("nvars=2 degree=3 graded-lex order") {
    auto b = enumerate_basis(2, 3);
    REQUIRE(b.size() == 4);
    CHECK(b[0] == mi({3, 0}));
    CHECK(b[1] == mi({2, 1}));
    CHECK(b[2] == mi({1, 2}));
    CHECK(b[3] == mi({0, 3}));
  }
  SECTION("nvars=3 degree=4 count by direct enumeration") {
    // independent oracle: count all exponent triples summing to 4
    int count = 0;
    for (int a = 0; a <= 4; ++a)
      for (int b = 0; b <= 4 - a; ++b) ++count;  // c is determined
    auto basis = enumerate_basis(3, 4);
    CHECK(static_cast<int>(basis.size()) == count);
    CHECK(basis.size() == 15);
    CHECK(std::is_sorted(basis.begin(), basis.end()));
  }
  SECTION("order is total and deterministic") {
    auto b = enumerate_basis(4, 3);
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
      CHECK(b[i] < b[i + 1]);
      CHECK_FALSE(b[i + 1] < b[i]);
    }
  }
}

TEST_CASE("multiply basics") {
  HomPoly x1(2, 1), x2(2, 1);
  x1.add_term(mi({1, 0}), 1.0);
  x2.add_term(mi({0, 1}), 1.0);

  SECTION("x1 * x2 = x1 x2") {
    auto p = multiply(x1, x2);
    CHECK(p.degree() == 2);
    CHECK(p.coefficient(mi({1, 1})) == 1.0);
    CHECK(p.terms().size() == 1);
  }
  SECTION("difference of squares") {
    HomPoly s = x1 + x2;
    HomPoly d = x1 + x2 * (-1.0);
    auto p = multiply(s, d);
    CHECK(p.coefficient(mi({2, 0})) == 1.0);
    CHECK(p.coefficient(mi({0, 2})) == -1.0);
    CHECK(p.coefficient(mi({1, 1})) == 0.0);
  }
  SECTION("dimension mismatch throws") {
    HomPoly q(3, 1);
    q.add_term(mi({1, 0, 0}), 1.0);
    CHECK_THROWS_AS(multiply(x1, q), DimensionError);
  }
}

TEST_CASE("multiply agrees with pointwise evaluation") {
  std::mt19937_64 rng(7);
  auto p = random_poly(3, 2, rng);
  auto q = random_poly(3, 3, rng);
  auto pq = multiply(p, q);
  REQUIRE(pq.degree() == 5);
  for (int t = 0; t < 20; ++t) {
    Vector x = random_point(3, rng);
    const double lhs = pq.evaluate(x);
    const double rhs = p.evaluate(x) * q.evaluate(x);
    CHECK(lhs == Catch::Approx(rhs).margin(1e-12));
  }
}

TEST_CASE("partial derivatives") {
  SECTION("d(x1^2 x2)/dx1 = 2 x1 x2") {
    HomPoly p(2, 3);
    p.add_term(mi({2, 1}), 1.0);
    auto d = partial(p, 0);
    CHECK(d.degree() == 2);
    CHECK(d.coefficient(mi({1, 1})) == 2.0);
  }
  SECTION("d(x2^3)/dx1 = 0") {
    HomPoly p(2, 3);
    p.add_term(mi({0, 3}), 1.0);
    CHECK(partial(p, 0).empty());
  }
  SECTION("degree-0 input maps to zero by convention") {
    HomPoly c(2, 0);
    c.add_term(mi({0, 0}), 3.0);
    auto d = partial(c, 1);
    CHECK(d.degree() == 0);
    CHECK(d.empty());
  }
  SECTION("gradient matches central finite differences") {
    std::mt19937_64 rng(11);
    auto p = random_poly(3, 4, rng);
    const double h = 1e-5;
    for (int t = 0; t < 10; ++t) {
      Vector x = random_point(3, rng);
      for (int j = 0; j < 3; ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const double fd = (p.evaluate(xp) - p.evaluate(xm)) / (2 * h);
        const double sym = partial(p, j).evaluate(x);
        CHECK(sym == Catch::Approx(fd).epsilon(1e-6).margin(1e-8));
      }
    }
  }
}

TEST_CASE("Euler identity: sum_j x_j dp/dx_j = degree * p") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int nv = 2 + static_cast<int>(rng() % 3);
    const int deg = 1 + static_cast<int>(rng() % 4);
    auto p = random_poly(nv, deg, rng);
    HomPoly acc(nv, deg);
    for (int j = 0; j < nv; ++j) {
      HomPoly xj(nv, 1);
      std::vector<int> e(static_cast<std::size_t>(nv), 0);
      e[static_cast<std::size_t>(j)] = 1;
      xj.add_term(MultiIndex(e), 1.0);
      acc += multiply(xj, partial(p, j));
    }
    for (const auto& [m, c] : p.terms())
      CHECK(acc.coefficient(m) == Catch::Approx(deg * c).epsilon(1e-12));
  }
}

TEST_CASE("homogeneity: p(t x) = t^d p(x)") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> tdist(0.2, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int nv = 2 + static_cast<int>(rng() % 3);
    const int deg = static_cast<int>(rng() % 5);
    auto p = random_poly(nv, deg, rng);
    Vector x = random_point(nv, rng);
    const double t = tdist(rng);
    Vector tx = t * x;
    const double lhs = p.evaluate(tx);
    const double rhs = std::pow(t, deg) * p.evaluate(x);
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12).margin(1e-13));
  }
}

TEST_CASE("evaluate basics") {
  HomPoly p(2, 2);
  p.add_term(mi({2, 0}), 1.0);
  Vector x(2);
  x << 2.0, 0.0;
  CHECK(p.evaluate(x) == 4.0);
  HomPoly z(2, 3);
  CHECK(z.evaluate(x) == 0.0);
}

TEST_CASE("hessian_form") {
  SECTION("A = B = I gives d(d-1) p by Euler applied twice") {
    HomPoly p(2, 3);
    p.add_term(mi({2, 1}), 1.0);
    auto h = hessian_form(p, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    CHECK(h.degree() == 3);
    CHECK(h.coefficient(mi({2, 1})) == Catch::Approx(6.0));
    CHECK(h.terms().size() == 1);
  }
  SECTION("A = 0 gives 0") {
    std::mt19937_64 rng(19);
    auto p = random_poly(3, 3, rng);
    auto h = hessian_form(p, Matrix::Zero(3, 3), Matrix::Random(3, 3));
    CHECK(h.empty());
  }
  SECTION("degree < 2 gives zero polynomial") {
    HomPoly lin(2, 1);
    lin.add_term(mi({1, 0}), 2.0);
    CHECK(hessian_form(lin, Matrix::Identity(2, 2), Matrix::Identity(2, 2)).empty());
  }
  SECTION("matches numeric Hessian contraction") {
    std::mt19937_64 rng(23);
    auto p = random_poly(3, 3, rng);
    Matrix A = Matrix::Random(3, 3), B = Matrix::Random(3, 3);
    auto h = hessian_form(p, A, B);
    const double step = 1e-5;
    for (int t = 0; t < 10; ++t) {
      Vector x = random_point(3, rng);
      Matrix H(3, 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          Vector xpp = x, xpm = x, xmp = x, xmm = x;
          xpp[i] += step; xpp[j] += step;
          xpm[i] += step; xpm[j] -= step;
          xmp[i] -= step; xmp[j] += step;
          xmm[i] -= step; xmm[j] -= step;
          H(i, j) = (p.evaluate(xpp) - p.evaluate(xpm) - p.evaluate(xmp) + p.evaluate(xmm)) /
                    (4 * step * step);
        }
      const double expected = (A * x).transpose() * H * (B * x);
      CHECK(h.evaluate(x) == Catch::Approx(expected).epsilon(1e-6).margin(1e-7));
    }
  }
}

TEST_CASE("substitution") {
  SECTION("u1^2 with u = (x1 + x2) gives (x1 + x2)^2") {
    HomPoly p(3, 2);  // vars (x1, x2, u1)
    p.add_term(mi({0, 0, 2}), 1.0);
    VectorSeries umap(1, PolySeries(2));
    HomPoly k(2, 1);
    k.add_term(mi({1, 0}), 1.0);
    k.add_term(mi({0, 1}), 1.0);
    umap[0].add(k);
    auto s = substitute(p, 2, umap, 6);
    REQUIRE(s.term(2) != nullptr);
    CHECK(s.term(2)->coefficient(mi({2, 0})) == Catch::Approx(1.0));
    CHECK(s.term(2)->coefficient(mi({1, 1})) == Catch::Approx(2.0));
    CHECK(s.term(2)->coefficient(mi({0, 2})) == Catch::Approx(1.0));
  }
  SECTION("x1 u1 with kappa of degrees 1 and 2 grades as 2 plus 3") {
    HomPoly p(3, 2);
    p.add_term(mi({1, 0, 1}), 1.0);
    VectorSeries umap(1, PolySeries(2));
    HomPoly k1(2, 1), k2(2, 2);
    k1.add_term(mi({0, 1}), 2.0);
    k2.add_term(mi({0, 2}), 0.5);
    umap[0].add(k1);
    umap[0].add(k2);
    auto s = substitute(p, 2, umap, 6);
    REQUIRE(s.term(2) != nullptr);
    REQUIRE(s.term(3) != nullptr);
    CHECK(s.term(2)->coefficient(mi({1, 1})) == Catch::Approx(2.0));
    CHECK(s.term(3)->coefficient(mi({1, 2})) == Catch::Approx(0.5));
    CHECK(s.term(4) == nullptr);
  }
  SECTION("substitution commutes with evaluation") {
    std::mt19937_64 rng(29);
    auto p = random_poly(4, 3, rng);  // (x1, x2, u1, u2)
    Matrix K = Matrix::Random(2, 2);
    VectorSeries umap;
    for (int i = 0; i < 2; ++i) {
      PolySeries s(2);
      s.add(linear_form(K, i));
      umap.push_back(s);
    }
    auto sub = substitute(p, 2, umap, 8);
    for (int t = 0; t < 20; ++t) {
      Vector x = random_point(2, rng);
      Vector xu(4);
      xu.head(2) = x;
      xu.tail(2) = K * x;
      const double lhs = sub.evaluate(x);
      const double rhs = p.evaluate(xu);
      CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10).margin(1e-12));
    }
  }
  SECTION("dimension mismatch throws") {
    HomPoly p(3, 2);
    p.add_term(mi({0, 0, 2}), 1.0);
    VectorSeries umap(2, PolySeries(2));  // two u components but p has one
    CHECK_THROWS_AS(substitute(p, 2, umap, 6), DimensionError);
  }
}

TEST_CASE("grading invariant under multiply") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const int nv = 2 + static_cast<int>(rng() % 2);
    const int da = static_cast<int>(rng() % 4);
    const int db = static_cast<int>(rng() % 4);
    auto a = random_poly(nv, da, rng);
    auto b = random_poly(nv, db, rng);
    CHECK(multiply(a, b).degree() == da + db);
  }
}

TEST_CASE("normalize prunes relative to the largest coefficient") {
  HomPoly p(2, 2);
  p.add_term(mi({2, 0}), 1.0);
  p.add_term(mi({0, 2}), 1e-20);
  p.normalize();
  CHECK(p.coefficient(mi({2, 0})) == 1.0);
  CHECK(p.coefficient(mi({0, 2})) == 0.0);
  CHECK(p.terms().size() == 1);
}
