#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rlqp/bench.hpp"
#include "rlqp/policy.hpp"
#include "rlqp/problems.hpp"
#include "rlqp/qps.hpp"
#include "rlqp/rl.hpp"
#include "rlqp/rng.hpp"
#include "rlqp/solver.hpp"

namespace {

using namespace rlqp;

std::uint64_t env_seed_default() {
  const char* value = std::getenv("RLQP_SEED");
  if (value == nullptr || *value == '\0') return 0;
  return std::strtoull(value, nullptr, 10);
}

GeneratorSpec parse_gen(const std::string& text) {
  std::istringstream is(text);
  std::string cls, dim, seed;
  if (!std::getline(is, cls, ':') || !std::getline(is, dim, ':') || !std::getline(is, seed))
    throw std::runtime_error("--gen expects class:dim:seed, got '" + text + "'");
  GeneratorSpec g;
  g.cls = problem_class_from_string(cls);
  g.dim = static_cast<Index>(std::stol(dim));
  g.seed = std::stoull(seed);
  return g;
}

// fixed | heuristic | scalar:weights | vector:weights
BenchPolicy parse_policy(const std::string& text) {
  if (text == "fixed") return {"fixed", [] { return std::make_unique<FixedPolicy>(); }};
  if (text == "heuristic")
    return {"heuristic", [] { return std::make_unique<HeuristicPolicy>(); }};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string kind = text.substr(0, colon);
    const std::string path = text.substr(colon + 1);
    if (kind == "scalar") {
      auto net = load_net(path);
      return {"scalar", [net] { return std::make_unique<ScalarNetPolicy>(net.first, net.second); }};
    }
    if (kind == "vector") {
      auto net = load_net(path);
      return {"vector", [net] { return std::make_unique<VectorNetPolicy>(net.first, net.second); }};
    }
  }
  throw std::runtime_error("unknown policy '" + text +
                           "' (expected fixed, heuristic, scalar:<weights> or vector:<weights>)");
}

std::pair<Index, Index> parse_dims(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    const Index d = static_cast<Index>(std::stol(text));
    return {d, d};
  }
  const Index lo = static_cast<Index>(std::stol(text.substr(0, dots)));
  const Index hi = static_cast<Index>(std::stol(text.substr(dots + 2)));
  if (lo < 1 || hi < lo) throw std::runtime_error("--dims expects lo..hi with 1 <= lo <= hi");
  return {lo, hi};
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::function<QpProblem(std::uint64_t)> problem_source(ProblemClass cls, Index dim_lo,
                                                       Index dim_hi) {
  return [cls, dim_lo, dim_hi](std::uint64_t seed) {
    Rng rng(seed);
    GeneratorSpec g;
    g.cls = cls;
    g.dim = static_cast<Index>(dim_lo + rng.uniform_int(0, dim_hi - dim_lo));
    g.seed = rng.next_u64();
    return generate(g);
  };
}

int cmd_solve(const std::string& file, const std::string& gen, const std::string& policy_text,
              const std::string& warm_start, double eps, Index max_iter, Index adapt_interval) {
  if (file.empty() == gen.empty()) {
    std::fprintf(stderr, "solve: give either a .qps file or --gen class:dim:seed\n");
    return 1;
  }
  QpProblem qp = file.empty() ? generate(parse_gen(gen)) : to_qp(parse_qps(read_text_file(file)));

  SolverSettings settings;
  settings.eps_abs = eps;
  settings.eps_rel = eps;
  settings.max_iter = max_iter;
  settings.adapt_interval = adapt_interval;

  const Index n = qp.num_vars();
  const Index m = qp.num_constraints();
  AdmmSolver solver(std::move(qp), settings);
  const auto policy = parse_policy(policy_text);
  const auto instance = policy.make();

  SolveResult result;
  if (warm_start.empty()) {
    result = solver.solve(*instance);
  } else {
    std::ifstream is(warm_start);
    std::vector<double> x0(n), y0(m);
    for (double& v : x0) is >> v;
    for (double& v : y0) is >> v;
    if (!is) throw std::runtime_error("warm start file needs n + m numbers");
    result = solver.solve(*instance, x0, y0);
  }

  std::printf("problem:    %s (n=%d, m=%d)\n", solver.problem().name.c_str(), n, m);
  std::printf("policy:     %s\n", policy.name.c_str());
  std::printf("status:     %s\n", to_string(result.status));
  std::printf("iterations: %d\n", result.iterations);
  std::printf("time:       %.6f s\n", result.solve_time);
  std::printf("objective:  %.10g\n", result.objective);
  if (!result.diagnostic.empty()) std::printf("diagnostic: %s\n", result.diagnostic.c_str());

  switch (result.status) {
    case SolveStatus::Solved: return 0;
    case SolveStatus::IterationLimit:
    case SolveStatus::TimeLimit: return 2;
    default: return 3;
  }
}

int cmd_train(const std::string& mode_text, const std::string& class_text,
              const std::string& dims_text, Index epochs, const std::string& preset,
              std::uint64_t seed, const std::string& out, const std::string& log_path,
              Index rollout_workers) {
  const PolicyMode mode = mode_text == "scalar" ? PolicyMode::Scalar : PolicyMode::Vector;
  const auto [dim_lo, dim_hi] = parse_dims(dims_text);
  Td3Config cfg = preset == "paper" ? Td3Config::paper() : Td3Config::desk();
  cfg.rollout_workers = rollout_workers;

  Td3Trainer trainer(mode, problem_source(problem_class_from_string(class_text), dim_lo, dim_hi),
                     SolverSettings{}, cfg, seed);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw std::runtime_error("cannot open " + log_path);
  }
  for (Index e = 0; e < epochs; ++e) {
    const EpochStats stats = trainer.run_epoch();
    std::printf("epoch %3d  pi_loss %9.4f  q_loss %9.4f  avg_q %9.4f  train_len %6.2f  "
                "test_len %6.2f\n",
                stats.epoch, stats.pi_loss, stats.q_loss, stats.avg_q, stats.train_ep_len_avg,
                stats.test_ep_len_avg);
    std::fflush(stdout);
    if (log.is_open()) {
      nlohmann::json line;
      line["epoch"] = stats.epoch;
      line["pi_loss"] = stats.pi_loss;
      line["q_loss"] = stats.q_loss;
      line["avg_q"] = stats.avg_q;
      line["train_ep_len_avg"] = stats.train_ep_len_avg;
      line["train_ep_len_max"] = stats.train_ep_len_max;
      line["train_ep_len_std"] = stats.train_ep_len_std;
      line["test_ep_len_avg"] = stats.test_ep_len_avg;
      log << line.dump() << "\n";
      log.flush();
    }
    save_net(out, trainer.nets().actor_spec, trainer.nets().actor);
  }
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_bench(const std::string& classes_text, const std::string& dims_text,
              const std::string& policies_text, Index repeats, const std::string& out,
              const std::string& summary_path, int jobs, std::uint64_t seed, double eps,
              Index max_iter, double time_limit, const std::string& time_mode) {
  std::vector<GeneratorSpec> problems;
  std::uint64_t next_base = seed;
  for (const std::string& cls_name : split_commas(classes_text)) {
    const ProblemClass cls = problem_class_from_string(cls_name);
    std::vector<Index> dims;
    if (dims_text.empty()) {
      dims = schedule_default(cls);
    } else {
      for (const std::string& d : split_commas(dims_text))
        dims.push_back(static_cast<Index>(std::stol(d)));
    }
    for (Index dim : dims) {
      GeneratorSpec g;
      g.cls = cls;
      g.dim = dim;
      g.seed = next_base;
      next_base += 1000003;  // distinct seed block per (class, dim) cell
      problems.push_back(g);
    }
  }

  std::vector<BenchPolicy> policies;
  for (const std::string& p : split_commas(policies_text)) policies.push_back(parse_policy(p));

  SolverSettings settings;
  settings.eps_abs = eps;
  settings.eps_rel = eps;
  settings.max_iter = max_iter;
  settings.time_limit = time_limit;

  const TimeMode tm = time_mode == "zero" ? TimeMode::Zero : TimeMode::Wall;
  const auto records = run_grid(problems, policies, settings, repeats, tm, jobs);

  std::ofstream csv(out);
  if (!csv) throw std::runtime_error("cannot open " + out);
  csv << write_bench_csv(records);
  csv.close();

  const BenchSummary summary = summarize(records);
  if (!summary_path.empty()) {
    nlohmann::json j;
    j["format"] = "rlqp-bench-summary";
    j["version"] = 1;
    j["policies"] = nlohmann::json::array();
    for (const auto& p : summary.policies) {
      j["policies"].push_back({{"policy", p.policy},
                               {"total", p.total},
                               {"solved", p.solved},
                               {"geomean_iterations", p.geomean_iterations},
                               {"geomean_time", p.geomean_time}});
    }
    j["ratios"] = nlohmann::json::array();
    for (const auto& r : summary.ratios) {
      j["ratios"].push_back({{"policy_a", r.policy_a},
                             {"policy_b", r.policy_b},
                             {"mutual", r.mutual},
                             {"iteration_ratio", r.iteration_ratio}});
    }
    std::ofstream js(summary_path);
    if (!js) throw std::runtime_error("cannot open " + summary_path);
    js << j.dump(2) << "\n";
  }

  for (const auto& p : summary.policies)
    std::printf("%-12s solved %d/%d  geomean iters %.2f\n", p.policy.c_str(), p.solved, p.total,
                p.geomean_iterations);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_convert(const std::string& gen, const std::string& out, const std::string& check) {
  if (gen.empty() == check.empty()) {
    std::fprintf(stderr, "convert: give either --gen with --out, or --check file.qps\n");
    return 1;
  }
  if (!check.empty()) {
    const QpProblem qp = to_qp(parse_qps(read_text_file(check)));
    std::printf("name=%s n=%d m=%d nonzeros=%d\n", qp.name.c_str(), qp.num_vars(),
                qp.num_constraints(), qp.a.nnz() + symmetric_nnz(qp.p));
    return 0;
  }
  if (out.empty()) {
    std::fprintf(stderr, "convert: --gen needs --out file.qps\n");
    return 1;
  }
  const QpProblem qp = generate(parse_gen(gen));
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open " + out);
  os << write_qps(qp);
  std::printf("wrote %s (n=%d, m=%d)\n", out.c_str(), qp.num_vars(), qp.num_constraints());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADMM quadratic program solver with learned step size policies"};
  app.require_subcommand(1);
  int code = 0;

  auto* solve = app.add_subcommand("solve", "solve one problem and report the outcome");
  static std::string s_file, s_gen, s_policy = "heuristic", s_warm;
  static double s_eps = 1e-3;
  static Index s_max_iter = 200000, s_adapt = 100;
  solve->add_option("file", s_file, "QPS problem file");
  solve->add_option("--gen", s_gen, "generated problem as class:dim:seed");
  solve->add_option("--policy", s_policy, "fixed|heuristic|scalar:<weights>|vector:<weights>");
  solve->add_option("--warm-start", s_warm, "text file with n primal then m dual values");
  solve->add_option("--eps", s_eps, "absolute and relative tolerance");
  solve->add_option("--max-iter", s_max_iter, "iteration limit");
  solve->add_option("--adapt-interval", s_adapt, "iterations between step size updates");
  solve->callback(
      [&] { code = cmd_solve(s_file, s_gen, s_policy, s_warm, s_eps, s_max_iter, s_adapt); });

  auto* train = app.add_subcommand("train", "train a step size policy");
  static std::string t_mode, t_class = "random", t_dims = "10..50", t_preset = "desk";
  static std::string t_out, t_log;
  static Index t_epochs = 10, t_workers = 1;
  static std::uint64_t t_seed = env_seed_default();
  train->add_option("--mode", t_mode, "scalar|vector")
      ->required()
      ->check(CLI::IsMember({"scalar", "vector"}));
  train->add_option("--class", t_class, "problem class to train on");
  train->add_option("--dims", t_dims, "dimension range lo..hi sampled per episode");
  train->add_option("--epochs", t_epochs, "training epochs");
  train->add_option("--preset", t_preset, "desk|paper hyperparameter profile")
      ->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--seed", t_seed, "master seed (default RLQP_SEED or 0)");
  train->add_option("--out", t_out, "weight file to write")->required();
  train->add_option("--log", t_log, "JSONL file appending one line per epoch");
  train->add_option("--rollout-workers", t_workers, "parallel episode workers");
  train->callback([&] {
    code = cmd_train(t_mode, t_class, t_dims, t_epochs, t_preset, t_seed, t_out, t_log, t_workers);
  });

  auto* bench = app.add_subcommand("bench", "run a policy comparison grid");
  static std::string b_classes = "random,eq", b_dims, b_policies = "fixed,heuristic";
  static std::string b_out, b_summary, b_time_mode = "wall";
  static Index b_repeats = 10, b_max_iter = 200000;
  static int b_jobs = 1;
  static std::uint64_t b_seed = env_seed_default();
  static double b_eps = 1e-3, b_time_limit = 300.0;
  bench->add_option("--classes", b_classes, "comma separated problem classes");
  bench->add_option("--dims", b_dims, "comma separated dimensions (default: built-in ladder)");
  bench->add_option("--policies", b_policies, "comma separated policy specs");
  bench->add_option("--repeats", b_repeats, "instances per class and dimension");
  bench->add_option("--out", b_out, "CSV output file")->required();
  bench->add_option("--summary", b_summary, "JSON summary file");
  bench->add_option("--jobs", b_jobs, "parallel grid cells");
  bench->add_option("--seed", b_seed, "base seed (default RLQP_SEED or 0)");
  bench->add_option("--eps", b_eps, "solver tolerance");
  bench->add_option("--max-iter", b_max_iter, "iteration limit");
  bench->add_option("--time-limit", b_time_limit, "per solve time limit in seconds");
  bench->add_option("--time-mode", b_time_mode, "wall|zero (zero makes output reproducible)")
      ->check(CLI::IsMember({"wall", "zero"}));
  bench->callback([&] {
    code = cmd_bench(b_classes, b_dims, b_policies, b_repeats, b_out, b_summary, b_jobs, b_seed,
                     b_eps, b_max_iter, b_time_limit, b_time_mode);
  });

  auto* convert = app.add_subcommand("convert", "generate or inspect QPS files");
  static std::string c_gen, c_out, c_check;
  convert->add_option("--gen", c_gen, "generated problem as class:dim:seed");
  convert->add_option("--out", c_out, "QPS file to write");
  convert->add_option("--check", c_check, "QPS file to parse and validate");
  convert->callback([&] { code = cmd_convert(c_gen, c_out, c_check); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return code;
}
