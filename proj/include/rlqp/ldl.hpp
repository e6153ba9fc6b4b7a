#pragma once

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include <span>
#include <stdexcept>
#include <vector>

#include "rlqp/kkt.hpp"
#include "rlqp/sparse.hpp"

namespace rlqp {

/// LDL^T factors of a sparse symmetric quasi-definite matrix,
/// perm(K) = L D L^T with L unit lower triangular (diagonal implicit) and
/// D diagonal with nonzero, possibly negative, entries. No pivoting: the
/// quasi-definite structure keeps the factorization well defined under any
/// symmetric permutation. The permuted input is kept for the iterative
/// refinement pass in ldl_solve.
struct LdlFactor {
  Index n = 0;
  SparseMatrixCsc l;
  std::vector<double> d;
  std::vector<double> d_inv;
  std::vector<Index> perm;      // permuted(i,j) = K(perm[i], perm[j])
  std::vector<Index> perm_inv;
  SparseMatrixCsc kperm;
};

namespace detail {

// Below this order the natural ordering is kept; AMD setup costs more than
// it saves on tiny systems.
inline constexpr Index kAmdThreshold = 64;

inline std::vector<Index> amd_ordering(const SparseMatrixCsc& k) {
  using EigenCsc = Eigen::SparseMatrix<double, Eigen::ColMajor, Index>;
  Eigen::Map<const EigenCsc> map(k.nrows, k.ncols, k.nnz(), k.col_ptr.data(), k.row_idx.data(),
                                 k.values.data());
  Eigen::AMDOrdering<Index> amd;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, Index> pm;
  amd(map.selfadjointView<Eigen::Upper>(), pm);
  std::vector<Index> perm(k.ncols);
  for (Index i = 0; i < k.ncols; ++i) perm[i] = pm.indices()[i];
  return perm;
}

// Symmetric permutation of an upper-triangular matrix; the result is again
// upper triangular with sorted columns.
inline SparseMatrixCsc symperm_upper(const SparseMatrixCsc& k, const std::vector<Index>& perm_inv) {
  const Index n = k.ncols;
  SparseMatrixCsc out(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index p = k.col_ptr[j]; p < k.col_ptr[j + 1]; ++p) {
      const Index i = k.row_idx[p];
      const Index c = std::max(perm_inv[i], perm_inv[j]);
      out.col_ptr[c + 1]++;
    }
  }
  for (Index j = 0; j < n; ++j) out.col_ptr[j + 1] += out.col_ptr[j];
  out.row_idx.resize(k.nnz());
  out.values.resize(k.nnz());
  std::vector<Index> next(out.col_ptr.begin(), out.col_ptr.end() - 1);
  for (Index j = 0; j < n; ++j) {
    for (Index p = k.col_ptr[j]; p < k.col_ptr[j + 1]; ++p) {
      const Index i = k.row_idx[p];
      Index r = perm_inv[i], c = perm_inv[j];
      if (r > c) std::swap(r, c);
      const Index q = next[c]++;
      out.row_idx[q] = r;
      out.values[q] = k.values[p];
    }
  }
  for (Index j = 0; j < n; ++j) {
    const Index b = out.col_ptr[j], e = out.col_ptr[j + 1];
    std::vector<std::pair<Index, double>> col(e - b);
    for (Index p = b; p < e; ++p) col[p - b] = {out.row_idx[p], out.values[p]};
    std::sort(col.begin(), col.end());
    for (Index p = b; p < e; ++p) {
      out.row_idx[p] = col[p - b].first;
      out.values[p] = col[p - b].second;
    }
  }
  return out;
}

// Elimination tree and per-column nonzero counts of L for an upper CSC
// input, via path compression over previously found ancestors.
inline void etree_counts(const SparseMatrixCsc& k, std::vector<Index>& parent,
                         std::vector<Index>& lnz) {
  const Index n = k.ncols;
  parent.assign(n, -1);
  lnz.assign(n, 0);
  std::vector<Index> work(n, -1);
  for (Index j = 0; j < n; ++j) {
    work[j] = j;
    for (Index p = k.col_ptr[j]; p < k.col_ptr[j + 1]; ++p) {
      Index i = k.row_idx[p];
      if (i > j) throw std::invalid_argument("ldl_factor: input must be upper triangular");
      while (work[i] != j) {
        if (parent[i] == -1) parent[i] = j;
        lnz[i]++;
        work[i] = j;
        i = parent[i];
      }
    }
  }
}

}  // namespace detail

inline LdlFactor ldl_factor(const SparseMatrixCsc& k) {
  if (k.nrows != k.ncols || k.ncols == 0)
    throw std::invalid_argument("ldl_factor: matrix must be square and nonempty");
  const Index n = k.ncols;
  for (Index j = 0; j < n; ++j)
    for (Index p = k.col_ptr[j]; p < k.col_ptr[j + 1]; ++p)
      if (k.row_idx[p] > j)
        throw std::invalid_argument("ldl_factor: input must be upper triangular");

  LdlFactor f;
  f.n = n;
  f.perm.resize(n);
  f.perm_inv.resize(n);
  if (n >= detail::kAmdThreshold) {
    f.perm = detail::amd_ordering(k);
  } else {
    for (Index i = 0; i < n; ++i) f.perm[i] = i;
  }
  for (Index i = 0; i < n; ++i) f.perm_inv[f.perm[i]] = i;
  f.kperm = detail::symperm_upper(k, f.perm_inv);

  std::vector<Index> parent, lnz;
  detail::etree_counts(f.kperm, parent, lnz);

  f.l = SparseMatrixCsc(n, n);
  for (Index j = 0; j < n; ++j) f.l.col_ptr[j + 1] = f.l.col_ptr[j] + lnz[j];
  f.l.row_idx.resize(f.l.col_ptr.back());
  f.l.values.resize(f.l.col_ptr.back());
  f.d.assign(n, 0.0);
  f.d_inv.assign(n, 0.0);

  // Up-looking factorization: for each column k scatter the sparse right
  // hand side, then eliminate along the reach of the elimination tree in
  // topological order.
  std::vector<Index> lnext(f.l.col_ptr.begin(), f.l.col_ptr.end() - 1);
  std::vector<double> yval(n, 0.0);
  std::vector<char> ymark(n, 0);
  std::vector<Index> yidx(n), stack(n);
  const SparseMatrixCsc& kp = f.kperm;

  for (Index col = 0; col < n; ++col) {
    Index nnz_y = 0;
    for (Index p = kp.col_ptr[col]; p < kp.col_ptr[col + 1]; ++p) {
      const Index i = kp.row_idx[p];
      if (i == col) {
        f.d[col] = kp.values[p];
        continue;
      }
      yval[i] = kp.values[p];
      if (ymark[i]) continue;
      Index depth = 0;
      Index node = i;
      ymark[node] = 1;
      stack[depth++] = node;
      node = parent[node];
      while (node != -1 && node < col && !ymark[node]) {
        ymark[node] = 1;
        stack[depth++] = node;
        node = parent[node];
      }
      while (depth > 0) yidx[nnz_y++] = stack[--depth];
    }
    // yidx holds the reach with deeper tree nodes last; walking it backwards
    // eliminates ancestors only after their descendants.
    for (Index t = nnz_y - 1; t >= 0; --t) {
      const Index c = yidx[t];
      const double yc = yval[c];
      const Index pend = lnext[c];
      for (Index p = f.l.col_ptr[c]; p < pend; ++p) yval[f.l.row_idx[p]] -= f.l.values[p] * yc;
      const double lkc = yc * f.d_inv[c];
      f.l.row_idx[pend] = col;
      f.l.values[pend] = lkc;
      f.d[col] -= yc * lkc;
      lnext[c] = pend + 1;
      yval[c] = 0.0;
      ymark[c] = 0;
    }
    if (f.d[col] == 0.0)
      throw std::runtime_error("ldl_factor: zero pivot at column " + std::to_string(col) +
                               " (matrix is not quasi-definite)");
    f.d_inv[col] = 1.0 / f.d[col];
  }
  return f;
}

inline LdlFactor ldl_factor(const KktSystem& sys) { return ldl_factor(sys.kkt); }

namespace detail {

// Solves perm(K) x = b in place, no refinement.
inline void ldl_backsolve(const LdlFactor& f, std::span<double> x) {
  const SparseMatrixCsc& l = f.l;
  for (Index j = 0; j < f.n; ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    for (Index p = l.col_ptr[j]; p < l.col_ptr[j + 1]; ++p) x[l.row_idx[p]] -= l.values[p] * xj;
  }
  for (Index j = 0; j < f.n; ++j) x[j] *= f.d_inv[j];
  for (Index j = f.n - 1; j >= 0; --j) {
    double s = x[j];
    for (Index p = l.col_ptr[j]; p < l.col_ptr[j + 1]; ++p) s -= l.values[p] * x[l.row_idx[p]];
    x[j] = s;
  }
}

}  // namespace detail

/// Solves K x = b using the factors, with one iterative refinement pass to
/// recover accuracy lost to the regularization-friendly no-pivot scheme.
inline std::vector<double> ldl_solve(const LdlFactor& f, std::span<const double> b) {
  if (b.size() != static_cast<std::size_t>(f.n))
    throw std::invalid_argument("ldl_solve: right hand side length mismatch");
  std::vector<double> xp(f.n), bp(f.n), r(f.n);
  for (Index i = 0; i < f.n; ++i) bp[i] = b[f.perm[i]];
  xp = bp;
  detail::ldl_backsolve(f, xp);
  symv_upper(f.kperm, xp, r);
  for (Index i = 0; i < f.n; ++i) r[i] = bp[i] - r[i];
  detail::ldl_backsolve(f, r);
  for (Index i = 0; i < f.n; ++i) xp[i] += r[i];
  std::vector<double> x(f.n);
  for (Index i = 0; i < f.n; ++i) x[f.perm[i]] = xp[i];
  return x;
}

}  // namespace rlqp
