#pragma once

// Double dueling DQN: epsilon-greedy acting, double-Q targets, Huber loss,
// Adam updates every few environment steps and periodic target syncs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "mzi/env.hpp"
#include "mzi/nn.hpp"
#include "mzi/replay.hpp"

namespace mzi {

using nn::Matrix;
using QNet = nn::QNetwork<float>;

struct TrainConfig {
  double gamma = 0.99;
  std::int64_t total_steps = 5'000'000;
  int update_every = 4;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double adam_epsilon = 1e-8;
  int target_sync_period = 2000;  // in gradient updates
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.1;  // of total_steps
  std::size_t replay_capacity = 30'000;
  std::size_t min_replay = 1000;  // warm-up is max(batch_size, min_replay)
  double huber_delta = 1.0;
  std::uint64_t seed = 0;
  nn::NetworkSpec network;

  void validate() const {
    if (!(gamma > 0 && gamma < 1)) throw contract_violation("train: gamma must be in (0,1)");
    if (update_every < 1) throw contract_violation("train: update_every must be >= 1");
    if (batch_size < 1) throw contract_violation("train: batch_size must be >= 1");
    if (total_steps < 0) throw contract_violation("train: total_steps must be >= 0");
    if (target_sync_period < 1) throw contract_violation("train: target_sync_period must be >= 1");
    if (replay_capacity < std::size_t(batch_size)) throw contract_violation("train: replay smaller than a batch");
  }

  std::size_t warmup() const { return std::max<std::size_t>(std::size_t(batch_size), min_replay); }

  double epsilon_at(std::int64_t step) const {
    const double decay = epsilon_decay_fraction * double(total_steps);
    if (decay <= 0 || double(step) >= decay) return epsilon_end;
    return epsilon_start + double(step) / decay * (epsilon_end - epsilon_start);
  }
};

// Lowest index wins ties.
template <typename Scalar>
int argmax(std::span<const Scalar> q) {
  return int(std::max_element(q.begin(), q.end()) - q.begin());
}

template <typename Scalar, typename Gen>
int select_action(std::span<const Scalar> q, double epsilon, Gen& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon)
    return std::uniform_int_distribution<int>(0, int(q.size()) - 1)(rng);
  return argmax(q);
}

// y = r + gamma * (1 - done) * Q_target(s', argmax_a Q_online(s', a))
template <typename Scalar>
Scalar td_target_double(Scalar reward, bool done, std::span<const Scalar> next_q_online,
                        std::span<const Scalar> next_q_target, Scalar gamma) {
  if (done) return reward;
  return reward + gamma * next_q_target[std::size_t(argmax(next_q_online))];
}

// Batched form: evaluates both networks on the next observations.
template <typename Scalar>
std::vector<Scalar> td_targets_double(std::span<const Scalar> rewards, std::span<const std::uint8_t> dones,
                                      const Matrix<Scalar>& next_inputs, const nn::QNetwork<Scalar>& online,
                                      const nn::QNetwork<Scalar>& target, Scalar gamma,
                                      typename nn::QNetwork<Scalar>::Tape& online_tape,
                                      typename nn::QNetwork<Scalar>::Tape& target_tape) {
  const Matrix<Scalar> qo = online.forward(next_inputs, online_tape);
  const Matrix<Scalar> qt = target.forward(next_inputs, target_tape);
  std::vector<Scalar> y(rewards.size());
  for (std::size_t n = 0; n < y.size(); ++n) {
    std::span<const Scalar> co(qo.col(Eigen::Index(n)).data(), std::size_t(qo.rows()));
    std::span<const Scalar> ct(qt.col(Eigen::Index(n)).data(), std::size_t(qt.rows()));
    y[n] = td_target_double(rewards[n], dones[n] != 0, co, ct, gamma);
  }
  return y;
}

template <typename Scalar>
struct Batch {
  Matrix<Scalar> inputs;       // input_size x N
  Matrix<Scalar> next_inputs;  // input_size x N
  std::vector<int> actions;
  std::vector<Scalar> rewards;
  std::vector<std::uint8_t> dones;
  std::size_t size() const { return actions.size(); }
};

inline void gather_batch(const ReplayBuffer& buffer, std::span<const std::size_t> slots, Batch<float>& b) {
  b.actions.clear();
  b.rewards.clear();
  b.dones.clear();
  const auto n = Eigen::Index(slots.size());
  const auto d = Eigen::Index(buffer.obs_size());
  b.inputs.resize(d, n);
  b.next_inputs.resize(d, n);
  constexpr float scale = 1.0f / 255.0f;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t s = slots[std::size_t(i)];
    auto o = buffer.obs(s);
    auto no = buffer.next_obs(s);
    for (Eigen::Index j = 0; j < d; ++j) {
      b.inputs(j, i) = float(o[std::size_t(j)]) * scale;
      b.next_inputs(j, i) = float(no[std::size_t(j)]) * scale;
    }
    b.actions.push_back(buffer.action(s));
    b.rewards.push_back(buffer.reward(s));
    b.dones.push_back(buffer.done(s) ? 1 : 0);
  }
}

struct training_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
Scalar huber(Scalar x, Scalar delta) {
  const Scalar a = std::abs(x);
  return a <= delta ? Scalar(0.5) * x * x : delta * (a - Scalar(0.5) * delta);
}

template <typename Scalar>
Scalar huber_grad(Scalar x, Scalar delta) {
  return std::clamp(x, -delta, delta);
}

// Mean Huber loss of Q(s,a) against fixed targets y, and its gradient with
// respect to the online parameters.
template <typename Scalar>
Scalar loss_and_gradient(const nn::QNetwork<Scalar>& online, const Matrix<Scalar>& inputs, std::span<const int> actions,
                         std::span<const Scalar> targets, Scalar delta, nn::ParamVector<Scalar>& grad,
                         typename nn::QNetwork<Scalar>::Tape& tape) {
  const Matrix<Scalar> q = online.forward(inputs, tape);
  const auto n = Eigen::Index(actions.size());
  Matrix<Scalar> dq = Matrix<Scalar>::Zero(q.rows(), n);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[std::size_t(i)];
    const Scalar err = q(a, i) - targets[std::size_t(i)];
    loss += huber(err, delta);
    dq(a, i) = huber_grad(err, delta) / Scalar(n);
  }
  loss /= Scalar(n);
  grad.assign(online.parameter_count(), Scalar(0));
  online.backward(tape, dq, grad);
  return loss;
}

struct StepStats {
  double loss = 0;
  double mean_q = 0;
};

template <typename Scalar>
struct TrainWorkspace {
  typename nn::QNetwork<Scalar>::Tape online, next_online, next_target;
  nn::ParamVector<Scalar> grad;
};

// One gradient update on a batch. The target network is only read.
template <typename Scalar>
StepStats train_step(const Batch<Scalar>& batch, nn::QNetwork<Scalar>& online, const nn::QNetwork<Scalar>& target,
                     nn::Adam<Scalar>& optimizer, Scalar gamma, Scalar huber_delta, TrainWorkspace<Scalar>& ws) {
  if (batch.size() == 0) throw contract_violation("train_step: empty batch");
  const std::vector<Scalar> y = td_targets_double<Scalar>(batch.rewards, batch.dones, batch.next_inputs, online, target,
                                                          gamma, ws.next_online, ws.next_target);
  nn::ParamVector<Scalar>& grad = ws.grad;
  const Scalar loss = loss_and_gradient<Scalar>(online, batch.inputs, batch.actions, y, huber_delta, grad, ws.online);
  if (!std::isfinite(double(loss))) {
    std::ostringstream os;
    os << "train_step: non-finite loss " << loss << " (optimizer step " << optimizer.steps() << ", targets";
    for (std::size_t i = 0; i < std::min<std::size_t>(y.size(), 4); ++i) os << ' ' << y[i];
    os << " ...)";
    throw training_error(os.str());
  }
  optimizer.step(online.parameters(), grad);
  double ysum = 0;
  for (Scalar v : y) ysum += double(v);
  return {double(loss), ysum / double(y.size())};
}

template <typename Scalar>
StepStats train_step(const Batch<Scalar>& batch, nn::QNetwork<Scalar>& online, const nn::QNetwork<Scalar>& target,
                     nn::Adam<Scalar>& optimizer, Scalar gamma, Scalar huber_delta = Scalar(1)) {
  TrainWorkspace<Scalar> ws;
  return train_step(batch, online, target, optimizer, gamma, huber_delta, ws);
}

inline Matrix<float> observation_input(const Observation& obs) {
  Matrix<float> x(Eigen::Index(obs.data().size()), 1);
  std::copy(obs.data().begin(), obs.data().end(), x.data());
  return x;
}

struct EpisodeMetrics {
  std::int64_t episode = 0;
  double episode_return = 0;
  double final_visibility = 0;
  double final_distance_mm = 0;
  double final_angle_mrad = 0;
  double epsilon = 0;
  std::int64_t steps = 0;  // environment steps so far
  std::int64_t updates = 0;
  double mean_loss = 0;
};

// Single-owner training loop. Updates happen after environment step t
// (1-based) when t % update_every == 0 and the buffer holds at least
// warmup() transitions.
class Trainer {
 public:
  using MetricsSink = std::function<void(const EpisodeMetrics&)>;

  Trainer(EnvConfig env_cfg, TrainConfig cfg)
      : cfg_(std::move(cfg)),
        env_((cfg_.validate(), std::move(env_cfg))),
        master_(cfg_.seed),
        online_(cfg_.network, master_()),
        target_(online_),
        adam_(online_.parameter_count(), nn::AdamConfig{cfg_.learning_rate, 0.9, 0.999, cfg_.adam_epsilon}),
        replay_(cfg_.replay_capacity, online_.input_size()),
        act_rng_(master_()),
        sample_rng_(master_()) {
    if (online_.input_size() != std::size_t(kFramesPerPeriod) * env_.config().camera.frame_size())
      throw contract_violation("train: network input does not match the camera");
  }

  const QNet& online() const { return online_; }
  const QNet& target() const { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::int64_t steps() const { return steps_; }
  std::int64_t updates() const { return updates_; }
  std::int64_t episodes() const { return episode_; }

  // Runs until total_steps environment steps have been taken (finishing
  // mid-episode if the budget ends there).
  void run(const MetricsSink& sink = {}) {
    while (steps_ < cfg_.total_steps) run_episode(sink);
  }

 private:
  void run_episode(const MetricsSink& sink) {
    Observation obs = env_.reset(master_());
    EpisodeMetrics m;
    m.episode = episode_;
    double loss_sum = 0;
    std::int64_t loss_n = 0;
    StepResult last;
    while (!env_.done() && steps_ < cfg_.total_steps) {
      const double eps = cfg_.epsilon_at(steps_);
      const Matrix<float> q = online_.forward(observation_input(obs), act_tape_);
      const int action = select_action<float>(std::span<const float>(q.data(), std::size_t(q.size())), eps, act_rng_);
      last = env_.step(action);
      replay_.push(obs.data(), action, float(last.reward), last.observation.data(), last.done);
      obs = std::move(last.observation);
      ++steps_;
      m.episode_return += last.reward;
      m.epsilon = eps;

      if (steps_ % cfg_.update_every == 0 && replay_.size() >= cfg_.warmup()) {
        const auto slots = replay_.sample(std::size_t(cfg_.batch_size), sample_rng_);
        gather_batch(replay_, slots, batch_);
        const StepStats st = train_step<float>(batch_, online_, target_, adam_, float(cfg_.gamma), float(cfg_.huber_delta), ws_);
        loss_sum += st.loss;
        ++loss_n;
        ++updates_;
        if (updates_ % cfg_.target_sync_period == 0) target_ = online_;
      }
    }
    m.final_visibility = last.info.visibility;
    m.final_distance_mm = last.info.distance_mm;
    m.final_angle_mrad = last.info.angle_mrad;
    m.steps = steps_;
    m.updates = updates_;
    m.mean_loss = loss_n ? loss_sum / double(loss_n) : 0.0;
    ++episode_;
    if (sink) sink(m);
  }

  TrainConfig cfg_;
  Environment env_;
  Rng master_;
  QNet online_, target_;
  nn::Adam<float> adam_;
  ReplayBuffer replay_;
  Rng act_rng_, sample_rng_;
  QNet::Tape act_tape_;
  Batch<float> batch_;
  TrainWorkspace<float> ws_;
  std::int64_t steps_ = 0, updates_ = 0, episode_ = 0;
};

struct TrainResult {
  QNet network;
  std::vector<EpisodeMetrics> metrics;
  std::int64_t steps = 0;
  std::int64_t updates = 0;
};

inline TrainResult train(const EnvConfig& env_cfg, const TrainConfig& cfg, const Trainer::MetricsSink& sink = {}) {
  Trainer trainer(env_cfg, cfg);
  std::vector<EpisodeMetrics> metrics;
  trainer.run([&](const EpisodeMetrics& m) {
    metrics.push_back(m);
    if (sink) sink(m);
  });
  return {trainer.online(), std::move(metrics), trainer.steps(), trainer.updates()};
}

}  // namespace mzi
