#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlqp/sparse.hpp"

namespace rlqp {

/// Convex quadratic program
///
///   minimize    0.5 x^T P x + q^T x
///   subject to  l <= A x <= u
///
/// with P symmetric positive semidefinite, stored as its upper triangle.
/// Bounds may be -inf/+inf; equality rows have l_i == u_i.
struct QpProblem {
  SparseMatrixCsc p;
  std::vector<double> q;
  SparseMatrixCsc a;
  std::vector<double> l;
  std::vector<double> u;
  std::string name;

  Index num_vars() const { return p.ncols; }
  Index num_constraints() const { return a.nrows; }

  /// Throws std::invalid_argument on inconsistent dimensions or l > u.
  void validate() const {
    p.validate();
    a.validate();
    const Index n = p.ncols;
    const Index m = a.nrows;
    if (p.nrows != n) throw std::invalid_argument("problem: P must be square");
    if (n == 0) throw std::invalid_argument("problem: no variables");
    for (Index j = 0; j < n; ++j)
      for (Index pp = p.col_ptr[j]; pp < p.col_ptr[j + 1]; ++pp)
        if (p.row_idx[pp] > j)
          throw std::invalid_argument("problem: P must be given as its upper triangle");
    if (a.ncols != n)
      throw std::invalid_argument("problem: A column count does not match variable count");
    if (q.size() != static_cast<std::size_t>(n))
      throw std::invalid_argument("problem: q length does not match variable count");
    if (l.size() != static_cast<std::size_t>(m) || u.size() != static_cast<std::size_t>(m))
      throw std::invalid_argument("problem: bound lengths do not match constraint count");
    for (Index i = 0; i < m; ++i) {
      if (std::isnan(l[i]) || std::isnan(u[i]))
        throw std::invalid_argument("problem: NaN bound in row " + std::to_string(i));
      if (l[i] > u[i])
        throw std::invalid_argument("problem: l > u in row " + std::to_string(i));
      if (l[i] == kInf || u[i] == -kInf)
        throw std::invalid_argument("problem: infinite bound with wrong sign in row " +
                                    std::to_string(i));
    }
  }

  double objective(std::span<const double> x) const {
    std::vector<double> px(num_vars());
    symv_upper(p, x, px);
    double v = 0.0;
    for (Index j = 0; j < num_vars(); ++j) v += (0.5 * px[j] + q[j]) * x[j];
    return v;
  }
};

}  // namespace rlqp
