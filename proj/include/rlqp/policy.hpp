#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rlqp/nn.hpp"
#include "rlqp/problem.hpp"
#include "rlqp/solver.hpp"

namespace rlqp {

inline constexpr Index kScalarObsWidth = 2;
inline constexpr Index kVectorObsWidth = 6;

/// Observation for the scalar step size policy: log residuals, already
/// normalized to roughly [-1, 1] for the network.
inline std::array<double, 2> featurize_scalar(const SolverState& state) {
  auto f = [](double xi) { return std::log10(std::clamp(xi, 1e-10, 1e10)) / 10.0; };
  return {f(state.xi_primal), f(state.xi_dual)};
}

/// Per-constraint observation rows (m x 6, row-major), normalized to roughly
/// [-1, 1]. Inputs per row i:
///   0: log distance of z_i to its nearest bound
///   1: row infeasibility z_i - (A x)_i
///   2: dual iterate y_i
///   3: log of the current step size rho_i
///   4: log primal residual (shared across rows)
///   5: log dual residual (shared across rows)
/// Requires fresh residuals and A x (compute_residuals).
inline void featurize_vector(const SolverState& state, const QpProblem& problem,
                             std::vector<double>& out) {
  const Index m = problem.num_constraints();
  out.resize(static_cast<std::size_t>(m) * kVectorObsWidth);
  const double c5 = std::log10(std::clamp(state.xi_primal, 1e-6, 1e6)) / 6.0;
  const double c6 = std::log10(std::clamp(state.xi_dual, 1e-6, 1e6)) / 6.0;
  for (Index i = 0; i < m; ++i) {
    const double slack = std::min(state.z[i] - problem.l[i], problem.u[i] - state.z[i]);
    double* row = out.data() + static_cast<std::size_t>(i) * kVectorObsWidth;
    row[0] = (std::log10(std::clamp(slack, 1e-8, 1e6)) + 1.0) / 7.0;
    row[1] = std::clamp(state.z[i] - state.ax[i], -1e6, 1e6) / 1e6;
    row[2] = std::clamp(state.y[i], -1e6, 1e6) / 1e6;
    row[3] = std::log10(std::clamp(state.rho[i], 1e-6, 1e6)) / 6.0;
    row[4] = c5;
    row[5] = c6;
  }
}

/// Maps a network action in [-1, 1] to a step size: a = 0 gives 1, the ends
/// of the range reach the step size bounds.
inline double decode_rho_action(double a, double rho_min, double rho_max) {
  return std::clamp(std::pow(10.0, 6.0 * a), rho_min, rho_max);
}

/// Keeps whatever step sizes the solver currently has.
class FixedPolicy : public RhoPolicy {
 public:
  RhoProposal propose(const SolverState& state, const QpProblem&, const SolverSettings&) override {
    return {state.rho, std::nullopt};
  }
  std::string name() const override { return "fixed"; }
};

/// Scalar residual-balancing rule expanded per row.
class HeuristicPolicy : public RhoPolicy {
 public:
  RhoProposal propose(const SolverState& state, const QpProblem& problem,
                      const SolverSettings& settings) override {
    const double nb = heuristic_rho_update(state.rho_bar, state.xi_primal, state.xi_dual,
                                           settings.rho_min, settings.rho_max);
    return {rho_from_scalar(nb, problem.l, problem.u, settings.equality_rho_scale,
                            settings.rho_min, settings.rho_max),
            nb};
  }
  std::string name() const override { return "heuristic"; }
};

/// Learned scalar policy: one network evaluation on the residual observation
/// yields rho_bar, expanded per row like the heuristic.
class ScalarNetPolicy : public RhoPolicy {
 public:
  ScalarNetPolicy(MlpSpec spec, MlpParams params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (spec_.input_width != kScalarObsWidth || spec_.output_width != 1 ||
        spec_.output_activation != Activation::Tanh)
      throw std::invalid_argument("scalar policy: network must map 2 inputs to 1 tanh output");
  }

  RhoProposal propose(const SolverState& state, const QpProblem& problem,
                      const SolverSettings& settings) override {
    const auto obs = featurize_scalar(state);
    const auto out = forward(spec_, params_, obs, tape_);
    const double rho_bar = decode_rho_action(out[0], settings.rho_min, settings.rho_max);
    return {rho_from_scalar(rho_bar, problem.l, problem.u, settings.equality_rho_scale,
                            settings.rho_min, settings.rho_max),
            rho_bar};
  }
  std::string name() const override { return "scalar"; }

  const MlpSpec& spec() const { return spec_; }
  const MlpParams& params() const { return params_; }

 private:
  MlpSpec spec_;
  MlpParams params_;
  ForwardTape tape_;
};

/// Learned per-constraint policy: the network maps each row observation to
/// that row's step size independently (so constraint order cannot matter).
class VectorNetPolicy : public RhoPolicy {
 public:
  VectorNetPolicy(MlpSpec spec, MlpParams params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (spec_.input_width != kVectorObsWidth || spec_.output_width != 1 ||
        spec_.output_activation != Activation::Tanh)
      throw std::invalid_argument("vector policy: network must map 6 inputs to 1 tanh output");
  }

  RhoProposal propose(const SolverState& state, const QpProblem& problem,
                      const SolverSettings& settings) override {
    featurize_vector(state, problem, obs_);
    const Index m = problem.num_constraints();
    RhoProposal prop;
    prop.rho.resize(m);
    for (Index i = 0; i < m; ++i) {
      std::span<const double> row(obs_.data() + static_cast<std::size_t>(i) * kVectorObsWidth,
                                  kVectorObsWidth);
      const auto out = forward(spec_, params_, row, tape_);
      prop.rho[i] = decode_rho_action(out[0], settings.rho_min, settings.rho_max);
    }
    return prop;
  }
  std::string name() const override { return "vector"; }

  const MlpSpec& spec() const { return spec_; }
  const MlpParams& params() const { return params_; }

 private:
  MlpSpec spec_;
  MlpParams params_;
  std::vector<double> obs_;
  ForwardTape tape_;
};

}  // namespace rlqp
