#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rlqp/policy.hpp"
#include "rlqp/problems.hpp"
#include "rlqp/qps.hpp"
#include "rlqp/rng.hpp"
#include "rlqp/solver.hpp"

namespace {

using namespace rlqp;
using Catch::Matchers::ContainsSubstring;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string fixture(const std::string& name) {
  return read_file(std::string(RLQP_FIXTURE_DIR) + "/" + name);
}

const std::string kMinimal =
    "NAME          MIN1\n"
    "ROWS\n"
    " N  obj\n"
    " L  c1\n"
    "COLUMNS\n"
    "    x1        c1        1.0\n"
    "RHS\n"
    "    RHS       c1        4.0\n"
    "ENDATA\n";

double solved_objective(const QpProblem& qp) {
  SolverSettings settings;
  settings.eps_abs = 1e-6;
  settings.eps_rel = 1e-6;
  AdmmSolver solver(qp, settings);
  // the residual-ratio rule can cycle on tiny problems; a fixed step size
  // converges on all of these
  FixedPolicy policy;
  const SolveResult result = solver.solve(policy);
  REQUIRE(result.status == SolveStatus::Solved);
  return result.objective;
}

// entries of the symmetric matrix counted with both mirror images
Index full_symmetric_nnz(const SparseMatrixCsc& upper) {
  Index count = 0;
  for (Index j = 0; j < upper.ncols; ++j)
    for (Index p = upper.col_ptr[j]; p < upper.col_ptr[j + 1]; ++p)
      count += upper.row_idx[p] == j ? 1 : 2;
  return count;
}

void require_same_qp(const QpProblem& want, const QpProblem& got) {
  REQUIRE(got.num_vars() == want.num_vars());
  REQUIRE(got.num_constraints() == want.num_constraints());
  REQUIRE(got.q == want.q);
  REQUIRE(got.a.col_ptr == want.a.col_ptr);
  REQUIRE(got.a.row_idx == want.a.row_idx);
  REQUIRE(got.a.values == want.a.values);
  REQUIRE(got.p.col_ptr == want.p.col_ptr);
  REQUIRE(got.p.row_idx == want.p.row_idx);
  REQUIRE(got.p.values == want.p.values);
  REQUIRE(got.u == want.u);
  for (Index i = 0; i < want.num_constraints(); ++i) {
    if (got.l[i] == want.l[i]) continue;
    // a two-sided row passes through a range value, rounding once more
    const double scale = std::max({1.0, std::abs(want.l[i]), std::abs(want.u[i])});
    REQUIRE(std::abs(got.l[i] - want.l[i]) <= 1e-15 * scale);
  }
}

}  // namespace

TEST_CASE("qps minimal document parses", "[qps]") {
  const QpsDocument doc = parse_qps(kMinimal);
  REQUIRE(doc.name == "MIN1");
  REQUIRE(doc.num_cols() == 1);
  REQUIRE(doc.num_rows() == 1);
  REQUIRE(doc.objective_row == "obj");

  const QpProblem qp = to_qp(doc);
  REQUIRE(qp.num_vars() == 1);
  // the default variable bound 0 <= x materializes as a second row
  REQUIRE(qp.num_constraints() == 2);
  REQUIRE(qp.l[0] == -kInf);
  REQUIRE(qp.u[0] == 4.0);
  REQUIRE(qp.l[1] == 0.0);
  REQUIRE(qp.u[1] == kInf);
}

TEST_CASE("qps equality row pins both bounds", "[qps]") {
  const std::string text =
      "NAME          EQ\n"
      "ROWS\n"
      " N  obj\n"
      " E  c1\n"
      "COLUMNS\n"
      "    x1        c1        1.0\n"
      "RHS\n"
      "    RHS       c1        5.0\n"
      "ENDATA\n";
  const QpProblem qp = to_qp(parse_qps(text));
  REQUIRE(qp.l[0] == 5.0);
  REQUIRE(qp.u[0] == 5.0);
}

TEST_CASE("qps parse errors carry line numbers", "[qps]") {
  SECTION("missing ENDATA") {
    std::string text = kMinimal.substr(0, kMinimal.size() - 7);
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 9") &&
                                             ContainsSubstring("missing ENDATA"));
  }
  SECTION("unknown section") {
    std::string text = kMinimal;
    text.replace(text.find("RHS\n"), 4, "RSH\n");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 7") &&
                                             ContainsSubstring("unknown section"));
  }
  SECTION("malformed numeric field") {
    std::string text = kMinimal;
    text.replace(text.find("4.0"), 3, "4.x");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 8") &&
                                             ContainsSubstring("malformed numeric"));
  }
  SECTION("undeclared row reference") {
    std::string text = kMinimal;
    text.replace(text.find("    x1        c1"), 16, "    x1        cX");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 6") &&
                                             ContainsSubstring("undeclared row"));
  }
  SECTION("duplicate objective row") {
    std::string text = kMinimal;
    text.insert(text.find(" L  c1"), " N  obj2\n");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("duplicate objective"));
  }
  SECTION("duplicate row name") {
    std::string text = kMinimal;
    text.insert(text.find("COLUMNS"), " L  c1\n");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("duplicate row"));
  }
  SECTION("sections out of order") {
    const std::string text =
        "NAME          T\n"
        "ROWS\n"
        " N  obj\n"
        " L  c1\n"
        "COLUMNS\n"
        "    x1        c1        1.0\n"
        "RHS\n"
        "BOUNDS\n"
        "RANGES\n"
        "ENDATA\n";
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 9") &&
                                             ContainsSubstring("out of order"));
  }
  SECTION("objective row is required") {
    std::string text = kMinimal;
    text.replace(text.find(" N  obj"), 7, " L  ob2");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("no objective row"));
  }
  SECTION("unsupported bound type") {
    const std::string text =
        "NAME          T\n"
        "ROWS\n"
        " N  obj\n"
        " L  c1\n"
        "COLUMNS\n"
        "    x1        c1        1.0\n"
        "RHS\n"
        "BOUNDS\n"
        " BV BND       x1\n"
        "ENDATA\n";
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("line 9") &&
                                             ContainsSubstring("unsupported bound type"));
  }
  SECTION("undeclared bound column") {
    const std::string text =
        "NAME          T\n"
        "ROWS\n"
        " N  obj\n"
        " L  c1\n"
        "COLUMNS\n"
        "    x1        c1        1.0\n"
        "RHS\n"
        "BOUNDS\n"
        " UP BND       x9        3.0\n"
        "ENDATA\n";
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("undeclared column"));
  }
  SECTION("range on the objective row") {
    const std::string text =
        "NAME          T\n"
        "ROWS\n"
        " N  obj\n"
        " L  c1\n"
        "COLUMNS\n"
        "    x1        c1        1.0\n"
        "RHS\n"
        "RANGES\n"
        "    RNG       obj       1.0\n"
        "ENDATA\n";
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("range on the objective"));
  }
  SECTION("data before any section") {
    REQUIRE_THROWS_WITH(parse_qps("    x1 c1 1.0\n"), ContainsSubstring("line 1"));
  }
  SECTION("integer markers are rejected") {
    std::string text = kMinimal;
    text.insert(text.find("    x1"), "    M1        'MARKER'   'INTORG'\n");
    REQUIRE_THROWS_WITH(parse_qps(text), ContainsSubstring("integer markers"));
  }
}

TEST_CASE("qps ranges widen rows by type", "[qps]") {
  const std::string text =
      "NAME          RNG\n"
      "ROWS\n"
      " N  obj\n"
      " L  r1\n"
      " G  r2\n"
      " E  r3\n"
      " E  r4\n"
      "COLUMNS\n"
      "    x1        r1        1.0   r2        1.0\n"
      "    x1        r3        1.0   r4        1.0\n"
      "RHS\n"
      "    RHS       r1        10.0  r2        1.0\n"
      "    RHS       r3        5.0   r4        5.0\n"
      "RANGES\n"
      "    RNG       r1        4.0   r2        3.0\n"
      "    RNG       r3        2.0   r4        -2.0\n"
      "BOUNDS\n"
      " FR BND       x1\n"
      "ENDATA\n";
  const QpProblem qp = to_qp(parse_qps(text));
  REQUIRE(qp.num_constraints() == 4);
  REQUIRE(qp.l[0] == 6.0);
  REQUIRE(qp.u[0] == 10.0);
  REQUIRE(qp.l[1] == 1.0);
  REQUIRE(qp.u[1] == 4.0);
  REQUIRE(qp.l[2] == 5.0);
  REQUIRE(qp.u[2] == 7.0);
  REQUIRE(qp.l[3] == 3.0);
  REQUIRE(qp.u[3] == 5.0);
}

TEST_CASE("qps bound types combine onto the default range", "[qps]") {
  const std::string text =
      "NAME          BND\n"
      "ROWS\n"
      " N  obj\n"
      " L  c1\n"
      "COLUMNS\n"
      "    a         c1        1.0\n"
      "    b         c1        1.0\n"
      "    c         c1        1.0\n"
      "    d         c1        1.0\n"
      "    e         c1        1.0\n"
      "    f         c1        1.0\n"
      "RHS\n"
      "    RHS       c1        9.0\n"
      "BOUNDS\n"
      " UP BND       a         3.0\n"
      " LO BND       b         -1.0\n"
      " UP BND       b         2.0\n"
      " FX BND       c         7.0\n"
      " FR BND       d\n"
      " MI BND       e\n"
      " UP BND       e         4.0\n"
      " PL BND       f\n"
      "ENDATA\n";
  const QpProblem qp = to_qp(parse_qps(text));
  // d is free and contributes no row; the others follow in variable order
  REQUIRE(qp.num_constraints() == 6);
  REQUIRE(qp.l[1] == 0.0);
  REQUIRE(qp.u[1] == 3.0);
  REQUIRE(qp.l[2] == -1.0);
  REQUIRE(qp.u[2] == 2.0);
  REQUIRE(qp.l[3] == 7.0);
  REQUIRE(qp.u[3] == 7.0);
  REQUIRE(qp.l[4] == -kInf);
  REQUIRE(qp.u[4] == 4.0);
  REQUIRE(qp.l[5] == 0.0);
  REQUIRE(qp.u[5] == kInf);

  SECTION("inconsistent bounds are rejected") {
    std::string bad = text;
    bad.replace(bad.find(" UP BND       a         3.0"), 27, " UP BND       a         -3.");
    REQUIRE_THROWS_WITH(to_qp(parse_qps(bad)), ContainsSubstring("inconsistent bounds"));
  }
}

TEST_CASE("qps objective rhs is recorded but does not change the program", "[qps]") {
  std::string text = kMinimal;
  text.replace(text.find("    RHS       c1        4.0"), 27,
               "    RHS       c1        4.0   obj       100.");
  const QpsDocument doc = parse_qps(text);
  bool saw_constant = false;
  for (const auto& e : doc.rhs) saw_constant |= e.row == "obj";
  REQUIRE(saw_constant);
  const QpProblem qp = to_qp(doc);
  REQUIRE(qp.num_constraints() == 2);
  REQUIRE(qp.u[0] == 4.0);
}

TEST_CASE("qps quadratic sections agree across conventions", "[qps]") {
  const std::string head =
      "NAME          Q\n"
      "ROWS\n"
      " N  obj\n"
      " L  c1\n"
      "COLUMNS\n"
      "    x1        c1        1.0\n"
      "    x2        c1        1.0\n"
      "RHS\n"
      "    RHS       c1        4.0\n";
  const std::string tri = head +
                          "QUADOBJ\n"
                          "    x1        x1        4.0\n"
                          "    x2        x1        2.0\n"
                          "    x2        x2        10.0\n"
                          "ENDATA\n";
  const std::string full = head +
                           "QMATRIX\n"
                           "    x1        x1        4.0\n"
                           "    x1        x2        2.0\n"
                           "    x2        x1        2.0\n"
                           "    x2        x2        10.0\n"
                           "ENDATA\n";
  const QpProblem a = to_qp(parse_qps(tri));
  const QpProblem b = to_qp(parse_qps(full));
  REQUIRE(a.p.col_ptr == b.p.col_ptr);
  REQUIRE(a.p.row_idx == b.p.row_idx);
  REQUIRE(a.p.values == b.p.values);
  // the lower-triangle listing lands in upper-triangle storage
  REQUIRE(a.p.values == std::vector<double>{4.0, 2.0, 10.0});
}

TEST_CASE("qps fixtures convert with the published dimensions", "[qps]") {
  struct Expect {
    const char* file;
    Index n;
    Index m;
    Index nnz;
    double optimum;
    double constant;
  };
  const Expect table[] = {
      {"hs21.qps", 2, 3, 6, -99.96, -100.0},
      {"hs35.qps", 3, 4, 13, 0.111111, 9.0},
      {"qptest.qps", 2, 4, 10, 4.371875, 0.0},
      {"tame.qps", 2, 3, 8, 0.0, 0.0},
      {"zecevic2.qps", 2, 4, 7, -4.125, 0.0},
  };
  for (const Expect& e : table) {
    INFO(e.file);
    const QpProblem qp = to_qp(parse_qps(fixture(e.file)));
    REQUIRE(qp.num_vars() == e.n);
    REQUIRE(qp.num_constraints() == e.m);
    REQUIRE(qp.a.nnz() + full_symmetric_nnz(qp.p) == e.nnz);
    const double objective = solved_objective(qp) + e.constant;
    REQUIRE(objective == Catch::Approx(e.optimum).margin(1e-3));
  }
}

TEST_CASE("qps round trip preserves generated problems", "[qps]") {
  SECTION("box constrained quadratic") {
    GeneratorSpec g;
    g.cls = ProblemClass::Random;
    g.dim = 10;
    g.seed = 17;
    const QpProblem qp = generate(g);
    require_same_qp(qp, to_qp(parse_qps(write_qps(qp))));
  }
  SECTION("equality constrained quadratic") {
    GeneratorSpec g;
    g.cls = ProblemClass::EqConstrained;
    g.dim = 8;
    g.seed = 23;
    const QpProblem qp = generate(g);
    require_same_qp(qp, to_qp(parse_qps(write_qps(qp))));
  }
  SECTION("one sided rows keep their infinities") {
    QpProblem qp;
    qp.p = SparseMatrixCsc::from_triplets(2, 2, {{0, 0, 2.0}, {0, 1, 0.5}, {1, 1, 3.0}});
    qp.a = SparseMatrixCsc::from_triplets(4, 2, {{0, 0, 1.0},
                                                 {1, 0, -2.5},
                                                 {1, 1, 1.0},
                                                 {2, 1, 4.0},
                                                 {3, 0, 1.0},
                                                 {3, 1, 1.0}});
    qp.q = {0.25, -3.0};
    qp.l = {-kInf, 2.0, 1.0, -7.5};
    qp.u = {5.0, kInf, 1.0, 7.5};
    qp.name = "one sided";
    require_same_qp(qp, to_qp(parse_qps(write_qps(qp))));
  }
  SECTION("a row unbounded on both sides cannot be written") {
    QpProblem qp;
    qp.p = SparseMatrixCsc::from_triplets(1, 1, {{0, 0, 1.0}});
    qp.a = SparseMatrixCsc::identity(1);
    qp.q = {0.0};
    qp.l = {-kInf};
    qp.u = {kInf};
    REQUIRE_THROWS_AS(write_qps(qp), std::invalid_argument);
  }
}

TEST_CASE("qps parser survives arbitrary input", "[qps]") {
  Rng rng(2026);
  const std::string valid = fixture("hs21.qps");
  int parsed = 0;
  for (int trial = 0; trial < 400; ++trial) {
    std::string text;
    if (trial % 2 == 0) {
      const int len = static_cast<int>(rng.uniform_int(0, 400));
      for (int k = 0; k < len; ++k)
        text.push_back(static_cast<char>(rng.uniform_int(0, 255)));
    } else {
      text = valid;
      const int edits = static_cast<int>(rng.uniform_int(1, 8));
      for (int k = 0; k < edits && !text.empty(); ++k) {
        const auto pos = static_cast<std::size_t>(rng.uniform_int(0, int(text.size()) - 1));
        switch (rng.uniform_int(0, 2)) {
          case 0: text[pos] = static_cast<char>(rng.uniform_int(0, 255)); break;
          case 1: text.erase(pos, 1); break;
          default: text.insert(pos, 1, static_cast<char>(rng.uniform_int(32, 126))); break;
        }
      }
    }
    try {
      const QpProblem qp = to_qp(parse_qps(text));
      parsed += qp.num_vars();
    } catch (const std::exception&) {
    }
  }
  // mutated copies of a real file should sometimes still parse
  REQUIRE(parsed > 0);
}
