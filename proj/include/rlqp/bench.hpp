#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "rlqp/problems.hpp"
#include "rlqp/solver.hpp"

namespace rlqp {

/// Zero blanks the recorded times so repeated runs produce identical bytes.
enum class TimeMode { Wall, Zero };

struct BenchRecord {
  std::string problem;
  std::string cls;
  Index n = 0;
  Index m = 0;
  Index nonzeros = 0;
  std::string policy;
  SolveStatus status = SolveStatus::Running;
  Index iterations = 0;
  double solve_time = 0.0;  // seconds
  Index adapt_count = 0;
  std::uint64_t seed = 0;
};

/// Named policy factory; every grid cell gets a fresh instance so cells
/// stay independent under parallel execution.
struct BenchPolicy {
  std::string name;
  std::function<std::unique_ptr<RhoPolicy>()> make;
};

struct BenchSummary {
  struct PolicyStats {
    std::string policy;
    Index total = 0;
    Index solved = 0;
    double geomean_iterations = 0.0;  // over this policy's solved runs
    double geomean_time = 0.0;
  };
  // iteration_ratio = geomean(a) / geomean(b) over runs both policies solved,
  // so a value above 1 means b needed fewer iterations
  struct PairRatio {
    std::string policy_a;
    std::string policy_b;
    Index mutual = 0;
    double iteration_ratio = 0.0;
  };
  std::vector<PolicyStats> policies;
  std::vector<PairRatio> ratios;
};

inline double shifted_geomean(std::span<const double> values, double shift = 10.0) {
  if (values.empty()) throw std::invalid_argument("shifted_geomean: empty input");
  double acc = 0.0;
  for (double v : values) acc += std::log(std::max(1.0, v + shift));
  return std::exp(acc / static_cast<double>(values.size())) - shift;
}

/// Entries of a symmetric matrix held as its upper triangle, counting each
/// off-diagonal entry and its mirror image.
inline Index symmetric_nnz(const SparseMatrixCsc& upper) {
  Index count = 0;
  for (Index j = 0; j < upper.ncols; ++j)
    for (Index p = upper.col_ptr[j]; p < upper.col_ptr[j + 1]; ++p)
      count += upper.row_idx[p] == j ? 1 : 2;
  return count;
}

/// Solves every (problem, policy, repeat) cell. Repeat r redraws the
/// instance with seed spec.seed + r, recorded in the result. Slots are
/// preassigned in (problem, policy, repeat) order, so the output is
/// identical for any job count.
inline std::vector<BenchRecord> run_grid(const std::vector<GeneratorSpec>& problems,
                                         const std::vector<BenchPolicy>& policies,
                                         const SolverSettings& settings, Index repeats,
                                         TimeMode time_mode = TimeMode::Wall, int jobs = 1) {
  if (problems.empty() || policies.empty())
    throw std::invalid_argument("run_grid: empty problem or policy list");
  if (repeats < 1) throw std::invalid_argument("run_grid: repeats must be at least 1");
  if (jobs < 1) throw std::invalid_argument("run_grid: jobs must be at least 1");

  const std::size_t num_policies = policies.size();
  const std::size_t per_problem = num_policies * static_cast<std::size_t>(repeats);
  const std::size_t total = problems.size() * per_problem;
  std::vector<BenchRecord> records(total);

  auto run_cell = [&](std::size_t cell) {
    const std::size_t p = cell / per_problem;
    const std::size_t q = cell % per_problem / repeats;
    const std::size_t r = cell % static_cast<std::size_t>(repeats);

    GeneratorSpec spec = problems[p];
    spec.seed = problems[p].seed + r;
    QpProblem qp = generate(spec);

    BenchRecord& rec = records[cell];
    rec.problem = qp.name;
    rec.cls = to_string(spec.cls);
    rec.n = qp.num_vars();
    rec.m = qp.num_constraints();
    rec.nonzeros = qp.a.nnz() + symmetric_nnz(qp.p);
    rec.policy = policies[q].name;
    rec.seed = spec.seed;

    AdmmSolver solver(std::move(qp), settings);
    const std::unique_ptr<RhoPolicy> policy = policies[q].make();
    const SolveResult result = solver.solve(*policy);
    rec.status = result.status;
    rec.iterations = result.iterations;
    rec.solve_time = time_mode == TimeMode::Zero ? 0.0 : result.solve_time;
    rec.adapt_count = result.adapt_count;
  };

  if (jobs == 1) {
    for (std::size_t cell = 0; cell < total; ++cell) run_cell(cell);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t cell = next.fetch_add(1); cell < total; cell = next.fetch_add(1))
        run_cell(cell);
    });
  }
  for (auto& t : workers) t.join();
  return records;
}

inline BenchSummary summarize(std::span<const BenchRecord> records) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");

  std::vector<std::string> policy_names;
  std::unordered_map<std::string, std::size_t> policy_index;
  std::vector<std::string> instance_keys;
  std::unordered_map<std::string, std::size_t> instance_index;
  for (const BenchRecord& rec : records) {
    if (policy_index.emplace(rec.policy, policy_names.size()).second)
      policy_names.push_back(rec.policy);
    const std::string key = rec.problem + "#" + std::to_string(rec.seed);
    if (instance_index.emplace(key, instance_keys.size()).second) instance_keys.push_back(key);
  }

  struct Cell {
    bool present = false;
    bool solved = false;
    double iterations = 0.0;
  };
  std::vector<std::vector<Cell>> table(policy_names.size(),
                                       std::vector<Cell>(instance_keys.size()));

  BenchSummary summary;
  summary.policies.resize(policy_names.size());
  for (std::size_t q = 0; q < policy_names.size(); ++q)
    summary.policies[q].policy = policy_names[q];

  std::vector<std::vector<double>> iters(policy_names.size());
  std::vector<std::vector<double>> times(policy_names.size());
  for (const BenchRecord& rec : records) {
    const std::size_t q = policy_index.at(rec.policy);
    auto& stats = summary.policies[q];
    stats.total++;
    Cell& cell = table[q][instance_index.at(rec.problem + "#" + std::to_string(rec.seed))];
    cell.present = true;
    cell.solved = rec.status == SolveStatus::Solved;
    cell.iterations = rec.iterations;
    if (cell.solved) {
      stats.solved++;
      iters[q].push_back(rec.iterations);
      times[q].push_back(rec.solve_time);
    }
  }
  for (std::size_t q = 0; q < policy_names.size(); ++q) {
    if (iters[q].empty()) continue;
    summary.policies[q].geomean_iterations = shifted_geomean(iters[q]);
    summary.policies[q].geomean_time = shifted_geomean(times[q]);
  }

  for (std::size_t a = 0; a < policy_names.size(); ++a) {
    for (std::size_t b = 0; b < policy_names.size(); ++b) {
      if (a == b) continue;
      std::vector<double> va, vb;
      for (std::size_t i = 0; i < instance_keys.size(); ++i) {
        const Cell& ca = table[a][i];
        const Cell& cb = table[b][i];
        if (!ca.present || !cb.present || !ca.solved || !cb.solved) continue;
        va.push_back(ca.iterations);
        vb.push_back(cb.iterations);
      }
      BenchSummary::PairRatio ratio;
      ratio.policy_a = policy_names[a];
      ratio.policy_b = policy_names[b];
      ratio.mutual = static_cast<Index>(va.size());
      if (!va.empty()) ratio.iteration_ratio = shifted_geomean(va) / shifted_geomean(vb);
      summary.ratios.push_back(std::move(ratio));
    }
  }
  return summary;
}

/// One header comment with a format version, one column line, one line per
/// record. Times are printed with fixed precision so zeroed runs reproduce
/// byte for byte.
inline std::string write_bench_csv(std::span<const BenchRecord> records) {
  std::string out = "# rlqp-bench-csv v1\n";
  out += "problem,class,n,m,nonzeros,policy,status,iterations,solve_time,adapt_count,seed\n";
  char buf[64];
  for (const BenchRecord& rec : records) {
    out += rec.problem + "," + rec.cls + ",";
    out += std::to_string(rec.n) + "," + std::to_string(rec.m) + ",";
    out += std::to_string(rec.nonzeros) + "," + rec.policy + ",";
    out += to_string(rec.status);
    out += "," + std::to_string(rec.iterations) + ",";
    std::snprintf(buf, sizeof buf, "%.6f", rec.solve_time);
    out += buf;
    out += "," + std::to_string(rec.adapt_count) + "," + std::to_string(rec.seed) + "\n";
  }
  return out;
}

}  // namespace rlqp
