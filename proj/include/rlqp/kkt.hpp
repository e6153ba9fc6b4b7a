#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "rlqp/sparse.hpp"

namespace rlqp {

/// Regularized KKT system for the splitting iteration,
///
///   [ P + sigma*I      A^T        ]
///   [ A            -diag(rho)^-1  ]
///
/// stored as the upper triangle of the (n+m) x (n+m) symmetric matrix.
/// The positions of the -1/rho_i diagonal entries are recorded so a step
/// size change rewrites values in place without reassembling.
struct KktSystem {
  SparseMatrixCsc kkt;
  Index n = 0;
  Index m = 0;
  double sigma = 0.0;
  std::vector<Index> rho_inv_diag_positions;
};

inline KktSystem assemble_kkt(const SparseMatrixCsc& p, const SparseMatrixCsc& a, double sigma,
                              std::span<const double> rho) {
  if (p.nrows != p.ncols) throw std::invalid_argument("assemble_kkt: P must be square");
  const Index n = p.ncols;
  const Index m = a.nrows;
  if (a.ncols != n) throw std::invalid_argument("assemble_kkt: A column count does not match P");
  if (rho.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("assemble_kkt: rho length does not match row count of A");
  if (!(sigma > 0.0)) throw std::invalid_argument("assemble_kkt: sigma must be positive");
  for (double r : rho)
    if (!(r > 0.0) || !std::isfinite(r))
      throw std::invalid_argument("assemble_kkt: rho entries must be positive and finite");

  KktSystem sys;
  sys.n = n;
  sys.m = m;
  sys.sigma = sigma;
  sys.rho_inv_diag_positions.resize(m);

  const SparseMatrixCsc at = transpose(a);

  SparseMatrixCsc& k = sys.kkt;
  k = SparseMatrixCsc(n + m, n + m);
  // Count entries per column first: P columns gain a diagonal entry when
  // missing, A^T columns gain the -1/rho diagonal.
  for (Index j = 0; j < n; ++j) {
    Index cnt = p.col_ptr[j + 1] - p.col_ptr[j];
    bool has_diag = false;
    for (Index q = p.col_ptr[j]; q < p.col_ptr[j + 1]; ++q) {
      if (p.row_idx[q] > j)
        throw std::invalid_argument("assemble_kkt: P must be given as its upper triangle");
      if (p.row_idx[q] == j) has_diag = true;
    }
    if (!has_diag) cnt++;
    k.col_ptr[j + 1] = cnt;
  }
  for (Index i = 0; i < m; ++i) k.col_ptr[n + i + 1] = at.col_ptr[i + 1] - at.col_ptr[i] + 1;
  for (Index j = 0; j < n + m; ++j) k.col_ptr[j + 1] += k.col_ptr[j];
  k.row_idx.resize(k.col_ptr.back());
  k.values.resize(k.col_ptr.back());

  for (Index j = 0; j < n; ++j) {
    Index w = k.col_ptr[j];
    bool wrote_diag = false;
    for (Index q = p.col_ptr[j]; q < p.col_ptr[j + 1]; ++q) {
      k.row_idx[w] = p.row_idx[q];
      k.values[w] = p.values[q] + (p.row_idx[q] == j ? sigma : 0.0);
      wrote_diag = wrote_diag || p.row_idx[q] == j;
      ++w;
    }
    if (!wrote_diag) {
      k.row_idx[w] = j;
      k.values[w] = sigma;
      ++w;
    }
  }
  for (Index i = 0; i < m; ++i) {
    Index w = k.col_ptr[n + i];
    for (Index q = at.col_ptr[i]; q < at.col_ptr[i + 1]; ++q) {
      k.row_idx[w] = at.row_idx[q];
      k.values[w] = at.values[q];
      ++w;
    }
    k.row_idx[w] = n + i;
    k.values[w] = -1.0 / rho[i];
    sys.rho_inv_diag_positions[i] = w;
  }
  return sys;
}

/// Rewrites the -1/rho_i diagonal entries in place.
inline void update_rho_entries(KktSystem& sys, std::span<const double> rho) {
  if (rho.size() != static_cast<std::size_t>(sys.m))
    throw std::invalid_argument("update_rho_entries: rho length does not match");
  for (Index i = 0; i < sys.m; ++i) {
    if (!(rho[i] > 0.0) || !std::isfinite(rho[i]))
      throw std::invalid_argument("update_rho_entries: rho entries must be positive and finite");
    sys.kkt.values[sys.rho_inv_diag_positions[i]] = -1.0 / rho[i];
  }
}

}  // namespace rlqp
