#pragma once

// Episode recording, greedy evaluation, the randomization ablation and the
// renderer benchmark.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mzi/agent.hpp"
#include "mzi/env.hpp"

namespace mzi {

struct StepRecord {
  int t = 0;  // 1-based step index
  int action_id = 0;
  double reward = 0;
  double visibility = 0;
  double distance_mm = 0;
  double angle_mrad = 0;
  double action_magnitude = 0;
};

struct EpisodeRecord {
  std::int64_t episode = 0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;

  double episode_return() const {
    double s = 0;
    for (const auto& r : steps) s += r.reward;
    return s;
  }
  double best_visibility() const {
    double b = 0;
    for (const auto& r : steps) b = std::max(b, r.visibility);
    return b;
  }
  // Mean over the last min(20, steps) steps.
  double last_steps_visibility(std::size_t window = 20) const {
    if (steps.empty()) return 0;
    const std::size_t k = std::min(window, steps.size());
    double s = 0;
    for (std::size_t i = steps.size() - k; i < steps.size(); ++i) s += steps[i].visibility;
    return s / double(k);
  }
};

inline nlohmann::json step_json(const EpisodeRecord& e, const StepRecord& r) {
  return {{"episode", e.episode},       {"seed", e.seed},
          {"t", r.t},                   {"action_id", r.action_id},
          {"reward", r.reward},         {"visibility", r.visibility},
          {"distance_mm", r.distance_mm}, {"angle_mrad", r.angle_mrad},
          {"action_magnitude", r.action_magnitude}};
}

// One JSON object per step.
inline void write_jsonl(std::ostream& out, const EpisodeRecord& e) {
  for (const auto& r : e.steps) out << step_json(e, r).dump() << '\n';
}

inline void write_jsonl(std::ostream& out, const std::vector<EpisodeRecord>& episodes) {
  for (const auto& e : episodes) write_jsonl(out, e);
}

// Groups consecutive lines with the same episode number.
inline std::vector<EpisodeRecord> read_jsonl(std::istream& in) {
  std::vector<EpisodeRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto episode = j.at("episode").get<std::int64_t>();
    if (out.empty() || out.back().episode != episode) {
      out.push_back({episode, j.at("seed").get<std::uint64_t>(), {}});
    }
    out.back().steps.push_back({j.at("t").get<int>(), j.at("action_id").get<int>(), j.at("reward").get<double>(),
                                j.at("visibility").get<double>(), j.at("distance_mm").get<double>(),
                                j.at("angle_mrad").get<double>(), j.at("action_magnitude").get<double>()});
  }
  return out;
}

using Policy = std::function<int(const Observation&)>;

// Episodes always run to the environment's step limit.
inline EpisodeRecord run_episode(const Policy& policy, Environment& env, std::uint64_t seed,
                                 const std::optional<MirrorAngles>& start = std::nullopt) {
  EpisodeRecord rec;
  rec.seed = seed;
  Observation obs = start ? env.reset(seed, *start) : env.reset(seed);
  while (!env.done()) {
    const int a = policy(obs);
    StepResult r = env.step(a);
    rec.steps.push_back({env.state().step_index, a, r.reward, r.info.visibility, r.info.distance_mm, r.info.angle_mrad,
                         r.info.action_magnitude});
    obs = std::move(r.observation);
  }
  return rec;
}

inline Policy constant_policy(int action_id) {
  action_spec(action_id);
  return [action_id](const Observation&) { return action_id; };
}

inline Policy random_policy(std::uint64_t seed) {
  return [rng = std::make_shared<Rng>(seed)](const Observation&) {
    return std::uniform_int_distribution<int>(0, kActionCount - 1)(*rng);
  };
}

// epsilon = 0 action selection; the network is shared, not copied.
inline Policy greedy_policy(std::shared_ptr<const QNet> net) {
  auto tape = std::make_shared<QNet::Tape>();
  return [net = std::move(net), tape](const Observation& obs) {
    const Matrix<float> q = net->forward(observation_input(obs), *tape);
    return argmax<float>(std::span<const float>(q.data(), std::size_t(q.size())));
  };
}

// Episode i of an evaluation starting at base seed s uses env seed s + i.
inline std::uint64_t episode_seed(std::uint64_t base, std::int64_t i) { return base + std::uint64_t(i); }

inline std::vector<EpisodeRecord> run_episodes(const Policy& policy, const EnvConfig& cfg, int n_episodes,
                                               std::uint64_t base_seed) {
  if (n_episodes < 1) throw contract_violation("evaluate: n_episodes must be >= 1");
  Environment env(cfg);
  std::vector<EpisodeRecord> out;
  out.reserve(std::size_t(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    out.push_back(run_episode(policy, env, episode_seed(base_seed, i)));
    out.back().episode = i;
  }
  return out;
}

struct MeanStd {
  double mean = 0, std = 0;
};

// Population standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(v.size()))};
}

struct EvalSummary {
  int episodes = 0;
  std::vector<double> best_visibility;        // per episode
  std::vector<double> last20_visibility;      // per episode
  std::vector<double> returns;                // per episode
  std::vector<double> final_visibility;       // per episode
  MeanStd best, last20, episode_return;
  double mean_final_visibility = 0;
  std::vector<double> visibility_curve;       // mean over episodes, per step
  std::vector<double> action_magnitude_curve; // mean over episodes, per step
  double mean_final_distance_mm = 0;
  double mean_final_angle_mrad = 0;
};

inline EvalSummary summarize(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw contract_violation("summarize: no episodes");
  EvalSummary s;
  s.episodes = int(episodes.size());
  s.visibility_curve.assign(kEpisodeLength, 0.0);
  s.action_magnitude_curve.assign(kEpisodeLength, 0.0);
  double dist = 0, ang = 0;
  for (const auto& e : episodes) {
    if (e.steps.size() != std::size_t(kEpisodeLength)) throw contract_violation("summarize: episode is not 100 steps long");
    s.best_visibility.push_back(e.best_visibility());
    s.last20_visibility.push_back(e.last_steps_visibility(20));
    s.returns.push_back(e.episode_return());
    s.final_visibility.push_back(e.steps.back().visibility);
    dist += e.steps.back().distance_mm;
    ang += e.steps.back().angle_mrad;
    for (std::size_t t = 0; t < e.steps.size(); ++t) {
      s.visibility_curve[t] += e.steps[t].visibility;
      s.action_magnitude_curve[t] += e.steps[t].action_magnitude;
    }
  }
  const double n = double(episodes.size());
  for (auto& v : s.visibility_curve) v /= n;
  for (auto& v : s.action_magnitude_curve) v /= n;
  s.best = mean_std(s.best_visibility);
  s.last20 = mean_std(s.last20_visibility);
  s.episode_return = mean_std(s.returns);
  s.mean_final_visibility = mean_std(s.final_visibility).mean;
  s.mean_final_distance_mm = dist / n;
  s.mean_final_angle_mrad = ang / n;
  return s;
}

inline nlohmann::json to_json(const EvalSummary& s) {
  return {{"episodes", s.episodes},
          {"mean_best_visibility", s.best.mean},
          {"std_best_visibility", s.best.std},
          {"mean_last20_visibility", s.last20.mean},
          {"std_last20_visibility", s.last20.std},
          {"mean_return", s.episode_return.mean},
          {"std_return", s.episode_return.std},
          {"mean_final_visibility", s.mean_final_visibility},
          {"mean_final_distance_mm", s.mean_final_distance_mm},
          {"mean_final_angle_mrad", s.mean_final_angle_mrad},
          {"best_visibility", s.best_visibility},
          {"last20_visibility", s.last20_visibility},
          {"returns", s.returns},
          {"visibility_curve", s.visibility_curve},
          {"action_magnitude_curve", s.action_magnitude_curve}};
}

inline nlohmann::json to_json(const EpisodeMetrics& m) {
  return {{"episode", m.episode},
          {"return", m.episode_return},
          {"final_visibility", m.final_visibility},
          {"final_distance_mm", m.final_distance_mm},
          {"final_angle_mrad", m.final_angle_mrad},
          {"epsilon", m.epsilon},
          {"steps", m.steps},
          {"updates", m.updates},
          {"mean_loss", m.mean_loss}};
}

struct AblationVariant {
  std::string name;
  RandomizationConfig randomization;
};

// Everything on, then each randomization switched off in turn.
inline std::vector<AblationVariant> ablation_variants(const RandomizationConfig& all_on = {}) {
  std::vector<AblationVariant> v{{"all", all_on},
                                 {"no_radius", all_on},
                                 {"no_brightness", all_on},
                                 {"no_noise", all_on},
                                 {"no_phase_timing", all_on}};
  v[1].randomization.radius_enabled = false;
  v[2].randomization.brightness_enabled = false;
  v[3].randomization.noise_enabled = false;
  v[4].randomization.phase_timing_enabled = false;
  return v;
}

struct AblationRow {
  std::string variant;
  MeanStd visibility;  // last-20-step mean visibility
  MeanStd episode_return;
  EvalSummary summary;
};

struct AblationSettings {
  EnvConfig env;  // geometry/camera; its randomization is the all-on set
  TrainConfig train;
  int eval_episodes = 100;
  std::uint64_t eval_seed = 1'000'000;
};

// Every row trains with the same seed and is evaluated on the same episode
// seeds in the all-on environment, so rows differ only in what the agent saw
// during training.
inline std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants, const AblationSettings& s,
                                       const std::function<void(const std::string&, const EpisodeMetrics&)>& progress = {}) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    EnvConfig train_env = s.env;
    train_env.randomization = v.randomization;
    TrainResult tr = train(train_env, s.train, [&](const EpisodeMetrics& m) {
      if (progress) progress(v.name, m);
    });
    auto net = std::make_shared<const QNet>(std::move(tr.network));
    const auto records = run_episodes(greedy_policy(net), s.env, s.eval_episodes, s.eval_seed);
    EvalSummary sum = summarize(records);
    rows.push_back({v.name, sum.last20, sum.episode_return, std::move(sum)});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,visibility_mean,visibility_std,return_mean,return_std\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", r.variant.c_str(), r.visibility.mean, r.visibility.std,
                  r.episode_return.mean, r.episode_return.std);
    out << buf;
  }
}

struct BenchResult {
  std::int64_t observations = 0;
  double seconds = 0;
  double rate() const { return seconds > 0 ? double(observations) / seconds : 0.0; }
};

// Steps the environment with random actions for at least `seconds`; every
// step renders and randomizes one full observation.
inline BenchResult bench_throughput(double seconds, const EnvConfig& cfg = {}, std::uint64_t seed = 0) {
  if (!(seconds >= 1.0)) throw contract_violation("bench: duration must be at least 1 s");
  using clock = std::chrono::steady_clock;
  Environment env(cfg);
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, kActionCount - 1);
  env.reset(rng());
  BenchResult r;
  const auto t0 = clock::now();
  const auto budget = std::chrono::duration<double>(seconds);
  while (clock::now() - t0 < budget) {
    if (env.done()) {
      env.reset(rng());
    } else {
      env.step(pick(rng));
    }
    ++r.observations;
  }
  r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return r;
}

}  // namespace mzi
