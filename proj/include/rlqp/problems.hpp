#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlqp/problem.hpp"
#include "rlqp/rng.hpp"

namespace rlqp {

enum class ProblemClass { Random, EqConstrained, Control, Huber, Svm, Lasso, Portfolio };

inline const char* to_string(ProblemClass c) {
  switch (c) {
    case ProblemClass::Random: return "random";
    case ProblemClass::EqConstrained: return "eq";
    case ProblemClass::Control: return "control";
    case ProblemClass::Huber: return "huber";
    case ProblemClass::Svm: return "svm";
    case ProblemClass::Lasso: return "lasso";
    case ProblemClass::Portfolio: return "portfolio";
  }
  return "?";
}

inline ProblemClass problem_class_from_string(const std::string& s) {
  if (s == "random") return ProblemClass::Random;
  if (s == "eq") return ProblemClass::EqConstrained;
  if (s == "control") return ProblemClass::Control;
  if (s == "huber") return ProblemClass::Huber;
  if (s == "svm") return ProblemClass::Svm;
  if (s == "lasso") return ProblemClass::Lasso;
  if (s == "portfolio") return ProblemClass::Portfolio;
  throw std::invalid_argument("unknown problem class '" + s + "'");
}

struct GeneratorSpec {
  ProblemClass cls = ProblemClass::Random;
  Index dim = 10;
  std::uint64_t seed = 0;
  double density = 0.15;
};

/// Benchmark dimension ladder per class (20 sizes each).
inline std::vector<Index> schedule_default(ProblemClass c) {
  switch (c) {
    case ProblemClass::Random:
    case ProblemClass::EqConstrained:
      return {10, 11, 12, 13, 15, 18, 23, 29, 39, 53, 73, 103, 146, 211, 304, 442, 644, 940,
              1373, 2009};
    case ProblemClass::Control:
    case ProblemClass::Huber:
    case ProblemClass::Svm:
    case ProblemClass::Lasso:
      return {10, 11, 12, 13, 14, 16, 17, 20, 23, 26, 31, 37, 45, 55, 68, 84, 105, 132, 166, 209};
    case ProblemClass::Portfolio:
      return {5, 6, 7, 8, 9, 10, 12, 14, 16, 20, 24, 28, 35, 43, 52, 65, 80, 99, 124, 154};
  }
  throw std::invalid_argument("schedule_default: unknown class");
}

namespace detail {

// Sparse factor M (n x n, col-major draw order), then the upper triangle of
// M M^T + 1e-2 I accumulated densely.
inline SparseMatrixCsc random_psd_upper(Rng& rng, Index n, double density) {
  std::vector<std::vector<Index>> col_rows(n);
  std::vector<std::vector<double>> col_vals(n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (rng.uniform() < density) {
        col_rows[j].push_back(i);
        col_vals[j].push_back(rng.normal());
      }
  std::vector<double> dense(static_cast<std::size_t>(n) * n, 0.0);
  for (Index k = 0; k < n; ++k) {
    const auto& rows = col_rows[k];
    const auto& vals = col_vals[k];
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = a; b < rows.size(); ++b) {
        Index i = rows[a], j = rows[b];
        if (i > j) std::swap(i, j);
        dense[static_cast<std::size_t>(i) * n + j] += vals[a] * vals[b];
      }
  }
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      double v = dense[static_cast<std::size_t>(i) * n + j];
      if (i == j) v += 1e-2;
      if (v != 0.0) t.push_back({i, j, v});
    }
  }
  return SparseMatrixCsc::from_triplets(n, n, std::move(t));
}

// Sparse m x n matrix, row-major draw order, each row forced nonempty.
inline SparseMatrixCsc random_rows_nonempty(Rng& rng, Index m, Index n, double density) {
  std::vector<Triplet> t;
  for (Index i = 0; i < m; ++i) {
    bool empty = true;
    for (Index j = 0; j < n; ++j)
      if (rng.uniform() < density) {
        t.push_back({i, j, rng.normal()});
        empty = false;
      }
    if (empty) t.push_back({i, static_cast<Index>(rng.uniform_int(0, n - 1)), rng.normal()});
  }
  return SparseMatrixCsc::from_triplets(m, n, std::move(t));
}

inline QpProblem gen_random_qp(const GeneratorSpec& g, std::vector<double>* witness) {
  Rng rng(g.seed);
  const Index n = g.dim;
  const Index m = 10 * ((g.dim + 9) / 10);
  QpProblem qp;
  qp.p = random_psd_upper(rng, n, g.density);
  qp.a = random_rows_nonempty(rng, m, n, g.density);
  std::vector<double> x0(n);
  for (auto& v : x0) v = rng.normal();
  qp.q.resize(n);
  for (auto& v : qp.q) v = rng.normal();
  std::vector<double> ax(m);
  gemv(qp.a, x0, ax);
  qp.l.resize(m);
  qp.u.resize(m);
  for (Index i = 0; i < m; ++i) {
    qp.u[i] = ax[i] + std::abs(rng.normal());
    qp.l[i] = ax[i] - std::abs(rng.normal());
  }
  qp.name = "random_n" + std::to_string(n) + "_s" + std::to_string(g.seed);
  if (witness) *witness = std::move(x0);
  return qp;
}

inline QpProblem gen_eq_qp(const GeneratorSpec& g, std::vector<double>* witness) {
  Rng rng(g.seed);
  const Index n = g.dim;
  const Index m = (g.dim + 1) / 2;
  QpProblem qp;
  qp.p = random_psd_upper(rng, n, g.density);
  qp.a = random_rows_nonempty(rng, m, n, g.density);
  std::vector<double> x0(n);
  for (auto& v : x0) v = rng.normal();
  qp.q.resize(n);
  for (auto& v : qp.q) v = rng.normal();
  std::vector<double> ax(m);
  gemv(qp.a, x0, ax);
  qp.l = ax;
  qp.u = ax;
  qp.name = "eq_n" + std::to_string(n) + "_s" + std::to_string(g.seed);
  if (witness) *witness = std::move(x0);
  return qp;
}

}  // namespace detail

/// Generates one problem instance. The optional witness receives a point
/// that strictly satisfies the constraints (generators build the bounds
/// around it). Identical specs produce identical problems.
inline QpProblem generate(const GeneratorSpec& g, std::vector<double>* witness = nullptr) {
  if (g.dim < 1) throw std::invalid_argument("generate: dim must be positive");
  if (!(g.density > 0.0 && g.density <= 1.0))
    throw std::invalid_argument("generate: density must be in (0, 1]");
  switch (g.cls) {
    case ProblemClass::Random: return detail::gen_random_qp(g, witness);
    case ProblemClass::EqConstrained: return detail::gen_eq_qp(g, witness);
    default:
      throw std::runtime_error(std::string("generator for class '") + to_string(g.cls) +
                               "' is not implemented");
  }
}

}  // namespace rlqp
