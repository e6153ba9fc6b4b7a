#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlqp/kkt.hpp"
#include "rlqp/ldl.hpp"
#include "rlqp/problem.hpp"

namespace rlqp {

enum class SolveStatus { Running, Solved, IterationLimit, TimeLimit, NonConvergent };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Running: return "Running";
    case SolveStatus::Solved: return "Solved";
    case SolveStatus::IterationLimit: return "IterationLimit";
    case SolveStatus::TimeLimit: return "TimeLimit";
    case SolveStatus::NonConvergent: return "NonConvergent";
  }
  return "?";
}

struct SolverSettings {
  double sigma = 1e-6;
  double eps_abs = 1e-3;
  double eps_rel = 1e-3;
  Index max_iter = 200000;
  Index check_termination = 25;   // residual check cadence, in iterations
  Index adapt_interval = 100;     // step size adaptation cadence
  double rho_min = 1e-6;
  double rho_max = 1e6;
  double rho_bar_init = 0.1;
  double equality_rho_scale = 1e3;
  double time_limit = 0.0;        // seconds; 0 disables

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("settings: sigma must be positive");
    if (!(eps_abs >= 0.0) || !(eps_rel >= 0.0) || eps_abs + eps_rel == 0.0)
      throw std::invalid_argument("settings: eps_abs/eps_rel must be nonnegative, not both zero");
    if (max_iter <= 0) throw std::invalid_argument("settings: max_iter must be positive");
    if (check_termination <= 0 || adapt_interval <= 0)
      throw std::invalid_argument("settings: intervals must be positive");
    if (adapt_interval % check_termination != 0)
      throw std::invalid_argument(
          "settings: adapt_interval must be a multiple of check_termination");
    if (!(rho_min > 0.0) || !(rho_max >= rho_min))
      throw std::invalid_argument("settings: need 0 < rho_min <= rho_max");
    if (!(rho_bar_init >= rho_min) || !(rho_bar_init <= rho_max))
      throw std::invalid_argument("settings: rho_bar_init outside [rho_min, rho_max]");
    if (!(equality_rho_scale > 0.0))
      throw std::invalid_argument("settings: equality_rho_scale must be positive");
    if (time_limit < 0.0) throw std::invalid_argument("settings: negative time limit");
  }
};

/// Per-constraint step sizes from a scalar: equality rows (l_i == u_i) get
/// rho_bar * equality_scale, inequality rows get rho_bar, all clamped to
/// [rho_min, rho_max].
inline std::vector<double> rho_from_scalar(double rho_bar, std::span<const double> l,
                                           std::span<const double> u, double equality_scale,
                                           double rho_min, double rho_max) {
  if (!(rho_bar > 0.0) || !std::isfinite(rho_bar))
    throw std::invalid_argument("rho_from_scalar: rho_bar must be positive and finite");
  if (l.size() != u.size()) throw std::invalid_argument("rho_from_scalar: bound length mismatch");
  std::vector<double> rho(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double r = l[i] == u[i] ? rho_bar * equality_scale : rho_bar;
    rho[i] = std::clamp(r, rho_min, rho_max);
  }
  return rho;
}

/// Residual-balancing step size rule: scale rho_bar by sqrt(primal/dual),
/// with floors guarding against zero residuals.
inline double heuristic_rho_update(double rho_bar, double xi_primal, double xi_dual,
                                   double rho_min, double rho_max) {
  const double p = std::max(xi_primal, 1e-12);
  const double d = std::max(xi_dual, 1e-12);
  return std::clamp(rho_bar * std::sqrt(p / d), rho_min, rho_max);
}

struct SolverState {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> z;
  std::vector<double> ax;      // A x, refreshed by compute_residuals
  std::vector<double> rho;
  double rho_bar = 0.0;
  Index iter = 0;
  double xi_primal = kInf;
  double xi_dual = kInf;
  SolveStatus status = SolveStatus::Running;
};

struct RhoProposal {
  std::vector<double> rho;
  std::optional<double> rho_bar;  // set when the proposal came from a scalar rule
};

/// Step size adaptation strategy consulted by solve() every adapt_interval
/// iterations, right after a residual refresh.
class RhoPolicy {
 public:
  virtual ~RhoPolicy() = default;
  virtual RhoProposal propose(const SolverState& state, const QpProblem& problem,
                              const SolverSettings& settings) = 0;
  virtual std::string name() const = 0;
};

struct SolveResult {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> z;
  SolveStatus status = SolveStatus::Running;
  Index iterations = 0;
  double solve_time = 0.0;  // seconds
  Index adapt_count = 0;    // accepted step size changes (refactorizations)
  double objective = 0.0;
  double xi_primal = kInf;
  double xi_dual = kInf;
  std::string diagnostic;   // set when a policy failure ended the solve
};

// Step size changes within this factor of the current value are not worth a
// refactorization and are skipped by solve().
inline constexpr double kRhoRefactorTol = 5.0;

/// Operator splitting solver. Each iteration solves one regularized KKT
/// system with the current step sizes and applies the projection and dual
/// updates; the factorization is reused until the step sizes change.
class AdmmSolver {
 public:
  AdmmSolver(QpProblem problem, SolverSettings settings)
      : prob_(std::move(problem)), settings_(settings) {
    prob_.validate();
    settings_.validate();
    n_ = prob_.num_vars();
    m_ = prob_.num_constraints();
    st_.x.assign(n_, 0.0);
    st_.y.assign(m_, 0.0);
    st_.z.assign(m_, 0.0);
    st_.ax.assign(m_, 0.0);
    st_.rho_bar = settings_.rho_bar_init;
    st_.rho = rho_from_scalar(st_.rho_bar, prob_.l, prob_.u, settings_.equality_rho_scale,
                              settings_.rho_min, settings_.rho_max);
    kkt_ = assemble_kkt(prob_.p, prob_.a, settings_.sigma, st_.rho);
    factor_ = ldl_factor(kkt_);
    reset();
    rhs_.resize(n_ + m_);
  }

  const QpProblem& problem() const { return prob_; }
  const SolverSettings& settings() const { return settings_; }
  const SolverState& state() const { return st_; }
  Index adapt_count() const { return adapt_count_; }

  /// Returns to the cold start iterates; step sizes are kept.
  void reset() {
    std::fill(st_.x.begin(), st_.x.end(), 0.0);
    std::fill(st_.y.begin(), st_.y.end(), 0.0);
    gemv(prob_.a, st_.x, st_.ax);
    for (Index i = 0; i < m_; ++i) st_.z[i] = std::clamp(st_.ax[i], prob_.l[i], prob_.u[i]);
    st_.iter = 0;
    st_.xi_primal = kInf;
    st_.xi_dual = kInf;
    st_.status = SolveStatus::Running;
    adapt_count_ = 0;
  }

  /// Sets the primal/dual starting point; z starts at the projection of A x.
  void warm_start(std::span<const double> x0, std::span<const double> y0) {
    if (x0.size() != static_cast<std::size_t>(n_) || y0.size() != static_cast<std::size_t>(m_))
      throw std::invalid_argument("warm_start: size mismatch");
    std::copy(x0.begin(), x0.end(), st_.x.begin());
    std::copy(y0.begin(), y0.end(), st_.y.begin());
    gemv(prob_.a, st_.x, st_.ax);
    for (Index i = 0; i < m_; ++i) st_.z[i] = std::clamp(st_.ax[i], prob_.l[i], prob_.u[i]);
  }

  /// One splitting iteration.
  void iterate() {
    for (Index j = 0; j < n_; ++j) rhs_[j] = settings_.sigma * st_.x[j] - prob_.q[j];
    for (Index i = 0; i < m_; ++i) rhs_[n_ + i] = st_.z[i] - st_.y[i] / st_.rho[i];
    const std::vector<double> sol = ldl_solve(factor_, rhs_);
    // x step is the first block; the second block is the equality multiplier
    // nu, from which A x_new is recovered without another matrix product.
    for (Index j = 0; j < n_; ++j) st_.x[j] = sol[j];
    for (Index i = 0; i < m_; ++i) {
      const double nu = sol[n_ + i];
      const double z_tilde = st_.z[i] + (nu - st_.y[i]) / st_.rho[i];
      const double z_new = std::clamp(z_tilde + st_.y[i] / st_.rho[i], prob_.l[i], prob_.u[i]);
      st_.y[i] += st_.rho[i] * (z_tilde - z_new);
      st_.z[i] = z_new;
    }
    st_.iter++;
  }

  /// Refreshes A x and both residuals along with the termination scales.
  void compute_residuals() {
    gemv(prob_.a, st_.x, st_.ax);
    double prim = 0.0;
    for (Index i = 0; i < m_; ++i) prim = std::max(prim, std::abs(st_.ax[i] - st_.z[i]));
    st_.xi_primal = prim;
    prim_scale_ = std::max(norm_inf(st_.ax), norm_inf(st_.z));

    px_.assign(n_, 0.0);
    aty_.assign(n_, 0.0);
    symv_upper(prob_.p, st_.x, px_);
    gemv_transpose(prob_.a, st_.y, aty_);
    double dual = 0.0;
    for (Index j = 0; j < n_; ++j) dual = std::max(dual, std::abs(px_[j] + prob_.q[j] + aty_[j]));
    st_.xi_dual = dual;
    dual_scale_ = std::max({norm_inf(px_), norm_inf(prob_.q), norm_inf(aty_)});
  }

  /// Classifies the current iterate; call compute_residuals first.
  SolveStatus check_termination(double elapsed_seconds) {
    if (!std::isfinite(st_.xi_primal) || !std::isfinite(st_.xi_dual)) {
      st_.status = SolveStatus::NonConvergent;
      return st_.status;
    }
    const double eps_prim = settings_.eps_abs + settings_.eps_rel * prim_scale_;
    const double eps_dual = settings_.eps_abs + settings_.eps_rel * dual_scale_;
    if (st_.xi_primal <= eps_prim && st_.xi_dual <= eps_dual) {
      st_.status = SolveStatus::Solved;
    } else if (settings_.time_limit > 0.0 && elapsed_seconds > settings_.time_limit) {
      st_.status = SolveStatus::TimeLimit;
    } else if (st_.iter >= settings_.max_iter) {
      st_.status = SolveStatus::IterationLimit;
    }
    return st_.status;
  }

  /// Replaces the step sizes, rewrites the KKT diagonal and refactorizes.
  void set_rho(std::span<const double> rho, std::optional<double> rho_bar = std::nullopt) {
    if (rho.size() != static_cast<std::size_t>(m_))
      throw std::invalid_argument("set_rho: length mismatch");
    for (double r : rho)
      if (!(r > 0.0) || !std::isfinite(r))
        throw std::invalid_argument("set_rho: step sizes must be positive and finite");
    std::copy(rho.begin(), rho.end(), st_.rho.begin());
    if (rho_bar) st_.rho_bar = *rho_bar;
    update_rho_entries(kkt_, st_.rho);
    factor_ = ldl_factor(kkt_);
  }

  /// Runs up to num_iters iterations with periodic residual checks; stops
  /// early on a terminal status. No step size adaptation happens here.
  SolveStatus run(Index num_iters, double elapsed_seconds = 0.0) {
    for (Index k = 0; k < num_iters && st_.status == SolveStatus::Running; ++k) {
      iterate();
      if (st_.iter % settings_.check_termination == 0 || st_.iter >= settings_.max_iter) {
        compute_residuals();
        check_termination(elapsed_seconds);
      }
    }
    return st_.status;
  }

  /// Full solve loop with step size adaptation driven by the policy.
  SolveResult solve(RhoPolicy& policy) { return solve_impl(policy, nullptr, nullptr); }

  SolveResult solve(RhoPolicy& policy, std::span<const double> x0, std::span<const double> y0) {
    return solve_impl(policy, &x0, &y0);
  }

 private:
  SolveResult solve_impl(RhoPolicy& policy, const std::span<const double>* x0,
                         const std::span<const double>* y0) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    reset();
    if (x0 != nullptr) warm_start(*x0, *y0);

    std::string diagnostic;
    while (st_.status == SolveStatus::Running) {
      iterate();
      const bool at_check = st_.iter % settings_.check_termination == 0 ||
                            st_.iter >= settings_.max_iter;
      if (at_check) {
        compute_residuals();
        if (check_termination(elapsed()) != SolveStatus::Running) break;
      }
      if (st_.iter % settings_.adapt_interval == 0 && st_.iter < settings_.max_iter) {
        RhoProposal prop;
        try {
          prop = policy.propose(st_, prob_, settings_);
        } catch (const std::exception& e) {
          st_.status = SolveStatus::NonConvergent;
          diagnostic = "policy '" + policy.name() + "' failed: " + e.what();
          break;
        }
        if (prop.rho.size() != static_cast<std::size_t>(m_)) {
          st_.status = SolveStatus::NonConvergent;
          diagnostic = "policy '" + policy.name() + "' returned " +
                       std::to_string(prop.rho.size()) + " step sizes for " + std::to_string(m_) +
                       " rows";
          break;
        }
        if (needs_refactor(prop.rho)) {
          set_rho(prop.rho, prop.rho_bar);
          adapt_count_++;
        }
      }
    }

    SolveResult res;
    res.x = st_.x;
    res.y = st_.y;
    res.z = st_.z;
    res.status = st_.status;
    res.iterations = st_.iter;
    res.solve_time = elapsed();
    res.adapt_count = adapt_count_;
    res.objective = prob_.objective(st_.x);
    res.xi_primal = st_.xi_primal;
    res.xi_dual = st_.xi_dual;
    res.diagnostic = std::move(diagnostic);
    return res;
  }

  bool needs_refactor(const std::vector<double>& rho_new) const {
    for (Index i = 0; i < m_; ++i) {
      const double ratio = rho_new[i] / st_.rho[i];
      if (ratio > kRhoRefactorTol || ratio < 1.0 / kRhoRefactorTol) return true;
    }
    return false;
  }

  QpProblem prob_;
  SolverSettings settings_;
  Index n_ = 0, m_ = 0;
  SolverState st_;
  KktSystem kkt_;
  LdlFactor factor_;
  std::vector<double> rhs_, px_, aty_;
  double prim_scale_ = 0.0, dual_scale_ = 0.0;
  Index adapt_count_ = 0;
};

}  // namespace rlqp
