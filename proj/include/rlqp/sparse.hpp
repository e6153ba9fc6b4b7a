#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlqp {

using Index = std::int32_t;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Triplet {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/// Compressed sparse column matrix. Row indices are strictly increasing
/// within each column and duplicate-free; col_ptr has ncols + 1 entries.
struct SparseMatrixCsc {
  Index nrows = 0;
  Index ncols = 0;
  std::vector<Index> col_ptr;
  std::vector<Index> row_idx;
  std::vector<double> values;

  SparseMatrixCsc() : col_ptr{0} {}
  SparseMatrixCsc(Index rows, Index cols) : nrows(rows), ncols(cols), col_ptr(cols + 1, 0) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("SparseMatrixCsc: negative dimension");
  }

  Index nnz() const { return col_ptr.empty() ? 0 : col_ptr.back(); }

  static SparseMatrixCsc identity(Index n) {
    SparseMatrixCsc a(n, n);
    a.row_idx.resize(n);
    a.values.assign(n, 1.0);
    for (Index j = 0; j < n; ++j) {
      a.col_ptr[j + 1] = j + 1;
      a.row_idx[j] = j;
    }
    return a;
  }

  /// Builds from an unordered triplet list; duplicate entries are summed.
  static SparseMatrixCsc from_triplets(Index rows, Index cols, std::vector<Triplet> entries) {
    for (const Triplet& t : entries) {
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
        throw std::invalid_argument("from_triplets: entry (" + std::to_string(t.row) + "," +
                                    std::to_string(t.col) + ") outside " + std::to_string(rows) +
                                    "x" + std::to_string(cols));
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    SparseMatrixCsc a(rows, cols);
    a.row_idx.reserve(entries.size());
    a.values.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size();) {
      const Index r = entries[k].row;
      const Index c = entries[k].col;
      double sum = 0.0;
      for (; k < entries.size() && entries[k].row == r && entries[k].col == c; ++k)
        sum += entries[k].value;
      a.row_idx.push_back(r);
      a.values.push_back(sum);
      a.col_ptr[c + 1]++;
    }
    for (Index j = 0; j < cols; ++j) a.col_ptr[j + 1] += a.col_ptr[j];
    return a;
  }

  /// Throws std::invalid_argument when a CSC invariant is violated.
  void validate() const {
    if (nrows < 0 || ncols < 0) throw std::invalid_argument("csc: negative dimension");
    if (col_ptr.size() != static_cast<std::size_t>(ncols) + 1)
      throw std::invalid_argument("csc: col_ptr length mismatch");
    if (col_ptr.front() != 0) throw std::invalid_argument("csc: col_ptr[0] != 0");
    for (Index j = 0; j < ncols; ++j) {
      if (col_ptr[j] > col_ptr[j + 1]) throw std::invalid_argument("csc: col_ptr not monotone");
      for (Index p = col_ptr[j]; p < col_ptr[j + 1]; ++p) {
        if (row_idx[p] < 0 || row_idx[p] >= nrows)
          throw std::invalid_argument("csc: row index out of range");
        if (p > col_ptr[j] && row_idx[p - 1] >= row_idx[p])
          throw std::invalid_argument("csc: rows not strictly increasing in column " +
                                      std::to_string(j));
      }
    }
    if (row_idx.size() != values.size() ||
        row_idx.size() != static_cast<std::size_t>(col_ptr.back()))
      throw std::invalid_argument("csc: nnz arrays inconsistent");
  }
};

inline SparseMatrixCsc transpose(const SparseMatrixCsc& a) {
  SparseMatrixCsc at(a.ncols, a.nrows);
  at.row_idx.resize(a.nnz());
  at.values.resize(a.nnz());
  for (Index p = 0; p < a.nnz(); ++p) at.col_ptr[a.row_idx[p] + 1]++;
  for (Index i = 0; i < a.nrows; ++i) at.col_ptr[i + 1] += at.col_ptr[i];
  std::vector<Index> next(at.col_ptr.begin(), at.col_ptr.end() - 1);
  for (Index j = 0; j < a.ncols; ++j) {
    for (Index p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) {
      const Index q = next[a.row_idx[p]]++;
      at.row_idx[q] = j;
      at.values[q] = a.values[p];
    }
  }
  return at;
}

/// y = A x.
inline void gemv(const SparseMatrixCsc& a, std::span<const double> x, std::span<double> y) {
  if (x.size() != static_cast<std::size_t>(a.ncols) ||
      y.size() != static_cast<std::size_t>(a.nrows))
    throw std::invalid_argument("gemv: size mismatch");
  std::fill(y.begin(), y.end(), 0.0);
  for (Index j = 0; j < a.ncols; ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    for (Index p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) y[a.row_idx[p]] += a.values[p] * xj;
  }
}

/// y = A^T x.
inline void gemv_transpose(const SparseMatrixCsc& a, std::span<const double> x,
                           std::span<double> y) {
  if (x.size() != static_cast<std::size_t>(a.nrows) ||
      y.size() != static_cast<std::size_t>(a.ncols))
    throw std::invalid_argument("gemv_transpose: size mismatch");
  for (Index j = 0; j < a.ncols; ++j) {
    double s = 0.0;
    for (Index p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) s += a.values[p] * x[a.row_idx[p]];
    y[j] = s;
  }
}

/// y = S x for a symmetric S given by its upper triangle.
inline void symv_upper(const SparseMatrixCsc& s, std::span<const double> x, std::span<double> y) {
  if (s.nrows != s.ncols) throw std::invalid_argument("symv_upper: matrix not square");
  if (x.size() != static_cast<std::size_t>(s.ncols) || y.size() != x.size())
    throw std::invalid_argument("symv_upper: size mismatch");
  std::fill(y.begin(), y.end(), 0.0);
  for (Index j = 0; j < s.ncols; ++j) {
    const double xj = x[j];
    for (Index p = s.col_ptr[j]; p < s.col_ptr[j + 1]; ++p) {
      const Index i = s.row_idx[p];
      if (i > j) throw std::invalid_argument("symv_upper: entry below the diagonal");
      y[i] += s.values[p] * xj;
      if (i != j) y[j] += s.values[p] * x[i];
    }
  }
}

inline double norm_inf(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Row-major dense copy, mainly for tests and debugging.
inline std::vector<double> to_dense(const SparseMatrixCsc& a) {
  std::vector<double> d(static_cast<std::size_t>(a.nrows) * a.ncols, 0.0);
  for (Index j = 0; j < a.ncols; ++j)
    for (Index p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p)
      d[static_cast<std::size_t>(a.row_idx[p]) * a.ncols + j] = a.values[p];
  return d;
}

}  // namespace rlqp
