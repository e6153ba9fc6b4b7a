#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rlqp/nn.hpp"
#include "rlqp/policy.hpp"
#include "rlqp/problem.hpp"
#include "rlqp/rng.hpp"
#include "rlqp/solver.hpp"

namespace rlqp {

enum class PolicyMode { Scalar, Vector };

namespace detail {

// splitmix64 step; used to derive independent seed streams from one master
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// stream tags: the low bits separate purposes so counters never collide
enum class SeedStream : std::uint64_t {
  NetInit = 1,
  Updates = 2,
  Problem = 3,
  Explore = 4,
  Test = 5,
};

inline std::uint64_t stream_seed(std::uint64_t master, SeedStream stream,
                                 std::uint64_t counter = 0) {
  return mix_seed(master, (counter << 3) | static_cast<std::uint64_t>(stream));
}

}  // namespace detail

/// Ring of (s, a, r, s', done) rows with a fixed observation width. Storage
/// is chunked and chunks are allocated on first touch, so a large nominal
/// capacity costs memory only as it actually fills.
class ReplayBuffer {
 public:
  ReplayBuffer(Index obs_width, std::int64_t capacity)
      : obs_width_(obs_width), stride_(2 * obs_width + 3), capacity_(capacity) {
    if (obs_width < 1)
      throw std::invalid_argument("replay buffer: observation width must be positive");
    if (capacity < 1) throw std::invalid_argument("replay buffer: capacity must be positive");
    blocks_.resize((capacity + kBlockRows - 1) / kBlockRows);
  }

  Index obs_width() const { return obs_width_; }
  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return fill_; }

  void push(std::span<const double> s, double a, double r, std::span<const double> s_next,
            bool done) {
    if (s.size() != static_cast<std::size_t>(obs_width_) || s_next.size() != s.size())
      throw std::invalid_argument("replay buffer: observation width mismatch");
    double* row = row_ptr(cursor_);
    std::copy(s.begin(), s.end(), row);
    std::copy(s_next.begin(), s_next.end(), row + obs_width_);
    row[2 * obs_width_] = a;
    row[2 * obs_width_ + 1] = r;
    row[2 * obs_width_ + 2] = done ? 1.0 : 0.0;
    cursor_ = (cursor_ + 1) % capacity_;
    fill_ = std::min(fill_ + 1, capacity_);
  }

  std::span<const double> s(std::int64_t i) const {
    return {row_at(i), static_cast<std::size_t>(obs_width_)};
  }
  std::span<const double> s_next(std::int64_t i) const {
    return {row_at(i) + obs_width_, static_cast<std::size_t>(obs_width_)};
  }
  double a(std::int64_t i) const { return row_at(i)[2 * obs_width_]; }
  double r(std::int64_t i) const { return row_at(i)[2 * obs_width_ + 1]; }
  bool done(std::int64_t i) const { return row_at(i)[2 * obs_width_ + 2] != 0.0; }

  /// Draws count distinct indices, uniformly over subsets, in a deterministic
  /// order given the stream state.
  void sample_indices(Rng& rng, std::int64_t count, std::vector<std::int64_t>& out) const {
    if (count < 1 || count > fill_)
      throw std::invalid_argument("replay buffer: bad sample count");
    out.clear();
    std::unordered_set<std::int64_t> seen;
    for (std::int64_t j = fill_ - count; j < fill_; ++j) {
      const std::int64_t t = rng.uniform_int(0, j);
      if (seen.insert(t).second) {
        out.push_back(t);
      } else {
        seen.insert(j);
        out.push_back(j);
      }
    }
  }

 private:
  static constexpr std::int64_t kBlockRows = 65536;

  double* row_ptr(std::int64_t i) {
    const std::int64_t blk = i / kBlockRows;
    auto& block = blocks_[blk];
    if (block.empty()) {
      const std::int64_t rows = std::min(kBlockRows, capacity_ - blk * kBlockRows);
      block.assign(static_cast<std::size_t>(rows * stride_), 0.0);
    }
    return block.data() + (i % kBlockRows) * stride_;
  }

  const double* row_at(std::int64_t i) const {
    if (i < 0 || i >= fill_) throw std::out_of_range("replay buffer: index out of range");
    return blocks_[i / kBlockRows].data() + (i % kBlockRows) * stride_;
  }

  Index obs_width_;
  std::int64_t stride_;
  std::int64_t capacity_;
  std::int64_t cursor_ = 0;
  std::int64_t fill_ = 0;
  std::vector<std::vector<double>> blocks_;
};

/// One QP being solved a fixed number of splitting iterations per step, with
/// the step sizes rewritten from the incoming actions at every step (no
/// change-magnitude guard here). Reward is -1 per step until solved.
class QpEnv {
 public:
  QpEnv(QpProblem problem, SolverSettings settings, PolicyMode mode, Index inner_iters = 100,
        Index step_limit = 50)
      : mode_(mode),
        inner_iters_(inner_iters),
        step_limit_(step_limit),
        solver_(std::move(problem), settings) {
    if (inner_iters < 1 || step_limit < 1)
      throw std::invalid_argument("env: iteration and step limits must be positive");
    solver_.compute_residuals();
    refresh_observations();
  }

  PolicyMode mode() const { return mode_; }
  Index num_rows() const {
    return mode_ == PolicyMode::Scalar ? 1 : solver_.problem().num_constraints();
  }
  Index obs_width() const {
    return mode_ == PolicyMode::Scalar ? kScalarObsWidth : kVectorObsWidth;
  }
  const std::vector<double>& observations() const { return obs_; }
  std::span<const double> observation_row(Index i) const {
    return {obs_.data() + static_cast<std::size_t>(i) * obs_width(),
            static_cast<std::size_t>(obs_width())};
  }
  bool done() const { return done_; }
  Index steps_taken() const { return steps_; }
  const AdmmSolver& solver() const { return solver_; }

  struct StepResult {
    double reward;
    bool done;
  };

  /// Applies one action per observation row, advances the solver, and scores
  /// the step. Terminal on solve, any solver failure, or the step limit.
  StepResult step(std::span<const double> actions) {
    if (done_) throw std::logic_error("env: episode is finished");
    if (actions.size() != static_cast<std::size_t>(num_rows()))
      throw std::invalid_argument("env: one action per observation row required");
    const SolverSettings& s = solver_.settings();
    const QpProblem& qp = solver_.problem();
    if (mode_ == PolicyMode::Scalar) {
      const double rho_bar = decode_rho_action(actions[0], s.rho_min, s.rho_max);
      rho_ = rho_from_scalar(rho_bar, qp.l, qp.u, s.equality_rho_scale, s.rho_min, s.rho_max);
      solver_.set_rho(rho_, rho_bar);
    } else {
      rho_.resize(qp.num_constraints());
      for (Index i = 0; i < qp.num_constraints(); ++i)
        rho_[i] = decode_rho_action(actions[i], s.rho_min, s.rho_max);
      solver_.set_rho(rho_);
    }
    const SolveStatus status = solver_.run(inner_iters_);
    solver_.compute_residuals();
    steps_++;
    const bool solved = status == SolveStatus::Solved;
    done_ = status != SolveStatus::Running || steps_ >= step_limit_;
    refresh_observations();
    return {solved ? 0.0 : -1.0, done_};
  }

 private:
  void refresh_observations() {
    if (mode_ == PolicyMode::Scalar) {
      const auto o = featurize_scalar(solver_.state());
      obs_.assign(o.begin(), o.end());
    } else {
      featurize_vector(solver_.state(), solver_.problem(), obs_);
    }
  }

  PolicyMode mode_;
  Index inner_iters_;
  Index step_limit_;
  AdmmSolver solver_;
  std::vector<double> obs_;
  std::vector<double> rho_;
  Index steps_ = 0;
  bool done_ = false;
};

/// Training hyperparameters. The defaults are the full-scale profile; desk()
/// is sized to finish on one core in minutes.
struct Td3Config {
  double exploration_noise_sigma = 1.0;
  double noise_clip = 2.5;
  double polyak = 0.995;
  double gamma = 0.99;
  double lr = 1e-5;
  Index batch_size = 5000;
  std::int64_t replay_capacity = 400000000;
  std::int64_t initial_random_steps = 100000;
  Index update_every = 10000;
  Index steps_per_epoch = 20000;
  Index actor_delay = 2;
  Index inner_iters = 100;
  Index step_limit = 50;
  Index test_episodes = 10;
  Index rollout_workers = 1;
  std::vector<Index> hidden = {48, 48, 48};

  void validate() const {
    if (!(exploration_noise_sigma >= 0.0) || !(noise_clip > 0.0))
      throw std::invalid_argument("td3 config: noise parameters must be nonnegative");
    if (!(polyak >= 0.0 && polyak < 1.0))
      throw std::invalid_argument("td3 config: polyak must lie in [0, 1)");
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("td3 config: gamma must lie in [0, 1)");
    if (!(lr > 0.0)) throw std::invalid_argument("td3 config: learning rate must be positive");
    if (batch_size < 1 || replay_capacity < batch_size)
      throw std::invalid_argument("td3 config: batch size must fit the replay capacity");
    if (initial_random_steps < 0 || update_every < 1 || steps_per_epoch < 1)
      throw std::invalid_argument("td3 config: step counts must be positive");
    if (actor_delay < 1) throw std::invalid_argument("td3 config: actor delay must be at least 1");
    if (inner_iters < 1 || step_limit < 1 || test_episodes < 0 || rollout_workers < 1)
      throw std::invalid_argument("td3 config: episode parameters must be positive");
  }

  static Td3Config paper() { return {}; }

  static Td3Config desk() {
    Td3Config c;
    c.lr = 1e-4;
    // full-scale noise of 1.0 spans the whole decoded range and floods a
    // small buffer with diverging episodes; a tenth of the range explores
    // plenty at this scale
    c.exploration_noise_sigma = 0.2;
    c.batch_size = 256;
    c.replay_capacity = 1000000;
    c.initial_random_steps = 1000;
    c.update_every = 500;
    c.steps_per_epoch = 2000;
    // one env step per termination check, so the return counts iterations at
    // the same resolution the solver reports them
    c.inner_iters = 25;
    return c;
  }
};

/// The six networks of one training run: the policy, twin critics, and their
/// target copies. Critics score a concatenated (observation, action) row.
struct Td3Nets {
  MlpSpec actor_spec;
  MlpSpec critic_spec;
  MlpParams actor, critic1, critic2;
  MlpParams actor_t, critic1_t, critic2_t;
};

inline Td3Nets make_td3_nets(Index obs_width, std::span<const Index> hidden, Rng& rng) {
  Td3Nets nets;
  nets.actor_spec.input_width = obs_width;
  nets.actor_spec.hidden.assign(hidden.begin(), hidden.end());
  nets.actor_spec.output_width = 1;
  nets.actor_spec.output_activation = Activation::Tanh;
  nets.critic_spec = nets.actor_spec;
  nets.critic_spec.input_width = obs_width + 1;
  nets.critic_spec.output_activation = Activation::Identity;
  nets.actor = glorot_init(nets.actor_spec, rng);
  nets.critic1 = glorot_init(nets.critic_spec, rng);
  nets.critic2 = glorot_init(nets.critic_spec, rng);
  nets.actor_t = nets.actor;
  nets.critic1_t = nets.critic1;
  nets.critic2_t = nets.critic2;
  return nets;
}

/// Bellman target r + gamma (1-done) min over the target critics, evaluated
/// at the target policy's action plus the clipped smoothing noise.
inline double td3_target(const Td3Nets& nets, std::span<const double> s_next, double r, bool done,
                         double gamma, double smoothing_noise, double noise_clip) {
  if (done) return r;
  const auto pi = forward(nets.actor_spec, nets.actor_t, s_next);
  const double eps = std::clamp(smoothing_noise, -noise_clip, noise_clip);
  const double a = std::clamp(pi[0] + eps, -1.0, 1.0);
  std::vector<double> sa(s_next.begin(), s_next.end());
  sa.push_back(a);
  const double q1 = forward(nets.critic_spec, nets.critic1_t, sa)[0];
  const double q2 = forward(nets.critic_spec, nets.critic2_t, sa)[0];
  return r + gamma * std::min(q1, q2);
}

/// Epoch summary, one JSONL record each. Loss fields are zero until the
/// buffer has grown past the first batch.
struct EpochStats {
  Index epoch = 0;
  double pi_loss = 0.0;
  double q_loss = 0.0;
  double avg_q = 0.0;
  double train_ep_len_avg = 0.0;
  double train_ep_len_max = 0.0;
  double train_ep_len_std = 0.0;
  double test_ep_len_avg = 0.0;
};

/// Off-policy training of the step size policy on generated problems. The
/// problem source maps a seed to a fresh QP; exploration, problem draws, and
/// batch sampling run on independent seed streams, so a fixed master seed
/// reproduces the run exactly in single-worker mode.
class Td3Trainer {
 public:
  Td3Trainer(PolicyMode mode, std::function<QpProblem(std::uint64_t)> make_problem,
             SolverSettings solver_settings, Td3Config config, std::uint64_t seed)
      : mode_(mode),
        make_problem_(std::move(make_problem)),
        solver_settings_(solver_settings),
        cfg_(config),
        seed_(seed),
        obs_width_(mode == PolicyMode::Scalar ? kScalarObsWidth : kVectorObsWidth),
        buffer_(obs_width_, config.replay_capacity),
        update_rng_(detail::stream_seed(seed, detail::SeedStream::Updates)) {
    cfg_.validate();
    solver_settings_.validate();
    if (!make_problem_) throw std::invalid_argument("trainer: problem source required");
    Rng init_rng(detail::stream_seed(seed, detail::SeedStream::NetInit));
    nets_ = make_td3_nets(obs_width_, cfg_.hidden, init_rng);
    actor_grads_ = make_grads(nets_.actor_spec);
    critic1_grads_ = make_grads(nets_.critic_spec);
    critic2_grads_ = make_grads(nets_.critic_spec);
    chain_grads_ = make_grads(nets_.critic_spec);
    actor_adam_ = make_adam(nets_.actor_spec);
    critic1_adam_ = make_adam(nets_.critic_spec);
    critic2_adam_ = make_adam(nets_.critic_spec);
  }

  const Td3Nets& nets() const { return nets_; }
  Td3Nets& nets() { return nets_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t total_env_steps() const { return total_env_steps_; }
  PolicyMode mode() const { return mode_; }
  const Td3Config& config() const { return cfg_; }

  /// One optimization step on both critics over the given batch. Returns the
  /// mean squared error and the mean first-critic prediction.
  std::pair<double, double> critic_update(const ReplayBuffer& buffer,
                                          std::span<const std::int64_t> batch, Rng& noise_rng) {
    if (batch.empty()) throw std::invalid_argument("critic update: empty batch");
    critic1_grads_.zero();
    critic2_grads_.zero();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0, sum_q = 0.0;
    std::vector<double> sa;
    for (const std::int64_t idx : batch) {
      const double noise = noise_rng.normal(0.0, cfg_.exploration_noise_sigma);
      const double y = td3_target(nets_, buffer.s_next(idx), buffer.r(idx), buffer.done(idx),
                                  cfg_.gamma, noise, cfg_.noise_clip);
      const auto s = buffer.s(idx);
      sa.assign(s.begin(), s.end());
      sa.push_back(buffer.a(idx));
      const double q1 = forward(nets_.critic_spec, nets_.critic1, sa, tape_)[0];
      backward(nets_.critic_spec, nets_.critic1, tape_, std::vector<double>{2.0 * (q1 - y) * scale},
               critic1_grads_);
      const double q2 = forward(nets_.critic_spec, nets_.critic2, sa, tape_)[0];
      backward(nets_.critic_spec, nets_.critic2, tape_, std::vector<double>{2.0 * (q2 - y) * scale},
               critic2_grads_);
      loss += ((q1 - y) * (q1 - y) + (q2 - y) * (q2 - y)) * scale;
      sum_q += q1 * scale;
    }
    adam_step(nets_.critic1, critic1_grads_, critic1_adam_, cfg_.lr);
    adam_step(nets_.critic2, critic2_grads_, critic2_adam_, cfg_.lr);
    return {loss, sum_q};
  }

  /// Objective -mean Q1(s, pi(s)) over the batch and its gradient in the
  /// policy parameters: through the first critic to its action input, then
  /// through the policy network.
  double actor_objective(const ReplayBuffer& buffer, std::span<const std::int64_t> batch,
                         MlpGrads& grads) {
    if (batch.empty()) throw std::invalid_argument("actor update: empty batch");
    grads.zero();
    chain_grads_.zero();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double pi_loss = 0.0;
    std::vector<double> sa;
    for (const std::int64_t idx : batch) {
      const auto s = buffer.s(idx);
      const double a = forward(nets_.actor_spec, nets_.actor, s, actor_tape_)[0];
      sa.assign(s.begin(), s.end());
      sa.push_back(a);
      const double q = forward(nets_.critic_spec, nets_.critic1, sa, tape_)[0];
      pi_loss -= q * scale;
      backward(nets_.critic_spec, nets_.critic1, tape_, std::vector<double>{-scale}, chain_grads_);
      backward(nets_.actor_spec, nets_.actor, actor_tape_,
               std::vector<double>{chain_grads_.input[obs_width_]}, grads);
    }
    return pi_loss;
  }

  /// One ascent step on the policy through the first critic, then the polyak
  /// refresh of all three target networks. Returns -mean Q.
  double actor_update(const ReplayBuffer& buffer, std::span<const std::int64_t> batch) {
    const double pi_loss = actor_objective(buffer, batch, actor_grads_);
    adam_step(nets_.actor, actor_grads_, actor_adam_, cfg_.lr);
    polyak_update(nets_.actor_t, nets_.actor, cfg_.polyak);
    polyak_update(nets_.critic1_t, nets_.critic1, cfg_.polyak);
    polyak_update(nets_.critic2_t, nets_.critic2, cfg_.polyak);
    return pi_loss;
  }

  /// Rolls out steps_per_epoch environment steps with interleaved updates,
  /// then scores the greedy policy on fresh test problems.
  EpochStats run_epoch() {
    EpochStats stats;
    stats.epoch = epoch_;
    ep_lengths_.clear();
    update_accum_ = {};
    if (cfg_.rollout_workers == 1) {
      rollout_serial();
    } else {
      rollout_concurrent();
    }
    if (update_accum_.count > 0) {
      stats.q_loss = update_accum_.q_loss / update_accum_.count;
      stats.avg_q = update_accum_.avg_q / update_accum_.count;
    }
    if (update_accum_.actor_count > 0)
      stats.pi_loss = update_accum_.pi_loss / update_accum_.actor_count;
    if (!ep_lengths_.empty()) {
      double sum = 0.0, sum_sq = 0.0, mx = 0.0;
      for (double len : ep_lengths_) {
        sum += len;
        sum_sq += len * len;
        mx = std::max(mx, len);
      }
      const double mean = sum / ep_lengths_.size();
      stats.train_ep_len_avg = mean;
      stats.train_ep_len_max = mx;
      stats.train_ep_len_std = std::sqrt(std::max(0.0, sum_sq / ep_lengths_.size() - mean * mean));
    }
    double test_sum = 0.0;
    for (Index t = 0; t < cfg_.test_episodes; ++t) {
      const std::uint64_t counter =
          static_cast<std::uint64_t>(epoch_) * cfg_.test_episodes + t;
      test_sum += greedy_episode_length(
          make_problem_(detail::stream_seed(seed_, detail::SeedStream::Test, counter)));
    }
    if (cfg_.test_episodes > 0) stats.test_ep_len_avg = test_sum / cfg_.test_episodes;
    epoch_++;
    return stats;
  }

  /// Episode length of the noise-free policy on one problem.
  Index greedy_episode_length(QpProblem problem) {
    QpEnv env(std::move(problem), solver_settings_, mode_, cfg_.inner_iters, cfg_.step_limit);
    std::vector<double> actions;
    while (!env.done()) {
      actions.resize(env.num_rows());
      for (Index i = 0; i < env.num_rows(); ++i)
        actions[i] = forward(nets_.actor_spec, nets_.actor, env.observation_row(i), actor_tape_)[0];
      env.step(actions);
    }
    return env.steps_taken();
  }

  /// The trained policy, ready to plug into the solver.
  std::unique_ptr<RhoPolicy> make_policy() const {
    if (mode_ == PolicyMode::Scalar)
      return std::make_unique<ScalarNetPolicy>(nets_.actor_spec, nets_.actor);
    return std::make_unique<VectorNetPolicy>(nets_.actor_spec, nets_.actor);
  }

 private:
  struct UpdateAccum {
    double q_loss = 0.0;
    double avg_q = 0.0;
    double pi_loss = 0.0;
    std::int64_t count = 0;
    std::int64_t actor_count = 0;
  };

  struct PendingTransition {
    std::vector<double> s;
    double a;
    double r;
    std::vector<double> s_next;
    bool done;
  };

  void act(QpEnv& env, Rng& ep_rng, std::vector<double>& actions, const MlpParams& actor) {
    actions.resize(env.num_rows());
    for (Index i = 0; i < env.num_rows(); ++i) {
      if (total_env_steps_ < cfg_.initial_random_steps) {
        actions[i] = ep_rng.uniform(-1.0, 1.0);
      } else {
        const double a = forward(nets_.actor_spec, actor, env.observation_row(i), actor_tape_)[0];
        const double eps = std::clamp(ep_rng.normal(0.0, cfg_.exploration_noise_sigma),
                                      -cfg_.noise_clip, cfg_.noise_clip);
        actions[i] = std::clamp(a + eps, -1.0, 1.0);
      }
    }
  }

  void push_step(const std::vector<double>& prev_obs, const std::vector<double>& actions,
                 double reward, const QpEnv& env, bool done) {
    const std::size_t w = static_cast<std::size_t>(obs_width_);
    for (std::size_t i = 0; i < actions.size(); ++i) {
      buffer_.push({prev_obs.data() + i * w, w}, actions[i], reward,
                   env.observation_row(static_cast<Index>(i)), done);
    }
  }

  void maybe_update() {
    if (total_env_steps_ % cfg_.update_every != 0) return;
    if (buffer_.size() < cfg_.batch_size) return;
    for (Index u = 0; u < cfg_.update_every; ++u) {
      buffer_.sample_indices(update_rng_, cfg_.batch_size, batch_);
      const auto [loss, q] = critic_update(buffer_, batch_, update_rng_);
      update_accum_.q_loss += loss;
      update_accum_.avg_q += q;
      update_accum_.count++;
      critic_updates_++;
      if (critic_updates_ % cfg_.actor_delay == 0) {
        update_accum_.pi_loss += actor_update(buffer_, batch_);
        update_accum_.actor_count++;
      }
    }
  }

  void start_episode() {
    const std::uint64_t ps = detail::stream_seed(seed_, detail::SeedStream::Problem, episode_index_);
    env_.emplace(make_problem_(ps), solver_settings_, mode_, cfg_.inner_iters, cfg_.step_limit);
    ep_rng_.emplace(detail::stream_seed(seed_, detail::SeedStream::Explore, episode_index_));
    episode_index_++;
    ep_len_ = 0;
  }

  void rollout_serial() {
    std::vector<double> actions, prev_obs;
    for (Index step = 0; step < cfg_.steps_per_epoch; ++step) {
      if (!env_ || env_->done()) start_episode();
      act(*env_, *ep_rng_, actions, nets_.actor);
      prev_obs = env_->observations();
      const auto result = env_->step(actions);
      push_step(prev_obs, actions, result.reward, *env_, result.done);
      total_env_steps_++;
      ep_len_++;
      if (result.done) ep_lengths_.push_back(ep_len_);
      maybe_update();
    }
  }

  // Whole episodes run in parallel against a snapshot of the policy taken at
  // dispatch; transitions enter the buffer in completion order, so repeat
  // runs are reproducible per episode but not step for step.
  void rollout_concurrent() {
    Index steps_done = 0;
    while (steps_done < cfg_.steps_per_epoch) {
      const Index workers = cfg_.rollout_workers;
      std::vector<std::vector<PendingTransition>> results(workers);
      std::vector<Index> lengths(workers, 0);
      std::vector<Index> rows(workers, 1);
      const MlpParams actor_snapshot = nets_.actor;
      const bool random_phase = total_env_steps_ < cfg_.initial_random_steps;
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (Index wkr = 0; wkr < workers; ++wkr) {
        const std::uint64_t ps =
            detail::stream_seed(seed_, detail::SeedStream::Problem, episode_index_);
        const std::uint64_t es =
            detail::stream_seed(seed_, detail::SeedStream::Explore, episode_index_);
        episode_index_++;
        pool.emplace_back([this, ps, es, random_phase, &actor_snapshot, &results, &lengths, &rows,
                           wkr] {
          run_episode_detached(ps, es, random_phase, actor_snapshot, results[wkr], lengths[wkr],
                               rows[wkr]);
        });
      }
      for (auto& t : pool) t.join();
      for (Index wkr = 0; wkr < workers; ++wkr) {
        Index in_step = 0;
        for (const auto& tr : results[wkr]) {
          buffer_.push(tr.s, tr.a, tr.r, tr.s_next, tr.done);
          if (++in_step == rows[wkr]) {
            in_step = 0;
            total_env_steps_++;
            maybe_update();
          }
        }
        steps_done += lengths[wkr];
        ep_lengths_.push_back(lengths[wkr]);
      }
    }
  }

  void run_episode_detached(std::uint64_t problem_seed, std::uint64_t ep_seed, bool random_phase,
                            const MlpParams& actor, std::vector<PendingTransition>& out,
                            Index& length, Index& rows) {
    QpEnv env(make_problem_(problem_seed), solver_settings_, mode_, cfg_.inner_iters,
              cfg_.step_limit);
    Rng ep_rng(ep_seed);
    std::vector<double> actions;
    ForwardTape tape;
    rows = env.num_rows();
    while (!env.done()) {
      actions.resize(env.num_rows());
      for (Index i = 0; i < env.num_rows(); ++i) {
        if (random_phase) {
          actions[i] = ep_rng.uniform(-1.0, 1.0);
        } else {
          const double a = forward(nets_.actor_spec, actor, env.observation_row(i), tape)[0];
          const double eps = std::clamp(ep_rng.normal(0.0, cfg_.exploration_noise_sigma),
                                        -cfg_.noise_clip, cfg_.noise_clip);
          actions[i] = std::clamp(a + eps, -1.0, 1.0);
        }
      }
      std::vector<double> prev_obs = env.observations();
      const auto result = env.step(actions);
      const Index w = obs_width_;
      for (Index i = 0; i < env.num_rows(); ++i) {
        PendingTransition tr;
        tr.s.assign(prev_obs.begin() + static_cast<std::ptrdiff_t>(i) * w,
                    prev_obs.begin() + static_cast<std::ptrdiff_t>(i + 1) * w);
        tr.a = actions[i];
        tr.r = result.reward;
        const auto next = env.observation_row(i);
        tr.s_next.assign(next.begin(), next.end());
        tr.done = result.done;
        out.push_back(std::move(tr));
      }
      length++;
    }
  }

  PolicyMode mode_;
  std::function<QpProblem(std::uint64_t)> make_problem_;
  SolverSettings solver_settings_;
  Td3Config cfg_;
  std::uint64_t seed_;
  Index obs_width_;
  ReplayBuffer buffer_;
  Rng update_rng_;
  Td3Nets nets_;

  MlpGrads actor_grads_, critic1_grads_, critic2_grads_, chain_grads_;
  AdamState actor_adam_, critic1_adam_, critic2_adam_;
  ForwardTape tape_, actor_tape_;
  std::vector<std::int64_t> batch_;

  std::optional<QpEnv> env_;
  std::optional<Rng> ep_rng_;
  std::uint64_t episode_index_ = 0;
  Index ep_len_ = 0;
  std::int64_t total_env_steps_ = 0;
  std::int64_t critic_updates_ = 0;
  Index epoch_ = 0;
  std::vector<double> ep_lengths_;
  UpdateAccum update_accum_;
};

}  // namespace rlqp
