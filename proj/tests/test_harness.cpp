#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mzi/harness.hpp"
#include "support.hpp"

using namespace mzi;

namespace {

// Overlap of two Gaussians with a relative tilt, written out directly.
double gaussian_visibility(double x0, double y0, double kx, double ky, double r) {
  return std::exp(-(x0 * x0 + y0 * y0) / (2 * r * r)) * std::exp(-(kx * kx + ky * ky) * r * r / 8);
}

EpisodeRecord synthetic_episode(std::int64_t id, std::uint64_t seed, int steps, double v0) {
  EpisodeRecord e{id, seed, {}};
  for (int t = 1; t <= steps; ++t) {
    const double v = std::fmod(v0 + 0.013 * t, 1.0);
    e.steps.push_back({t, t % 25, reward_from_visibility(v), v, 0.1 * t, 0.01 * t, (t % 3) * 0.05});
  }
  return e;
}

}  // namespace

TEST(RunEpisode, NoOpFromAlignedStartStaysAtFullVisibility) {
  Environment env;
  const auto rec = run_episode(constant_policy(0), env, 5, MirrorAngles{});
  ASSERT_EQ(rec.steps.size(), 100u);
  for (std::size_t i = 0; i < rec.steps.size(); ++i) {
    EXPECT_EQ(rec.steps[i].t, int(i) + 1);
    EXPECT_EQ(rec.steps[i].visibility, 1.0);
    EXPECT_EQ(rec.steps[i].action_magnitude, 0.0);
  }
  EXPECT_EQ(rec.best_visibility(), 1.0);
  EXPECT_EQ(rec.last_steps_visibility(), 1.0);
}

TEST(RunEpisode, RecordsMatchTheEnvironment) {
  Environment env;
  const auto rec = run_episode(random_policy(3), env, 77);
  Environment replay;
  replay.reset(77);
  for (const auto& s : rec.steps) {
    const auto r = replay.step(s.action_id);
    EXPECT_EQ(r.reward, s.reward);
    EXPECT_EQ(r.info.visibility, s.visibility);
    EXPECT_EQ(r.info.distance_mm, s.distance_mm);
    EXPECT_EQ(r.info.angle_mrad, s.angle_mrad);
    EXPECT_EQ(r.info.action_magnitude, s.action_magnitude);
  }
  EXPECT_THROW(constant_policy(25), std::out_of_range);
}

TEST(RunEpisode, GreedyPolicyIsReproducible) {
  auto net = std::make_shared<const QNet>(mzi::test::small_net(), 4);
  const auto cfg = mzi::test::small_env();
  const auto a = run_episodes(greedy_policy(net), cfg, 3, 21);
  const auto b = run_episodes(greedy_policy(net), cfg, 3, 21);
  std::ostringstream sa, sb;
  write_jsonl(sa, a);
  write_jsonl(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a[2].seed, episode_seed(21, 2));
}

TEST(RunEpisode, AlwaysMaxActionPinsTheClampedState) {
  // id 3 pushes mirror 1 in x by a tenth of its range each step.
  ASSERT_EQ(action_spec(3).magnitude_fraction, 0.1);
  const EnvConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    Environment env(cfg);
    env.reset(seed);
    MirrorAngles pinned = env.state().angles;
    const double radius = env.state().radius;
    pinned.a1x = cfg.limits[0];
    const auto rec = run_episode(constant_policy(3), env, seed);
    const BeamState b = beam_state_from_angles(pinned, cfg.geometry, radius);
    const double expected = gaussian_visibility(b.x0, b.y0, b.kx, b.ky, radius);
    EXPECT_EQ(env.state().angles, pinned);
    EXPECT_NEAR(rec.steps.back().visibility, expected, 1e-12);
    // Pinned after at most 20 pushes; the trace is flat from there on.
    for (std::size_t t = 20; t < rec.steps.size(); ++t) EXPECT_EQ(rec.steps[t].visibility, rec.steps.back().visibility);
  }
}

TEST(Summary, SingleEpisodeEqualsItsRecord) {
  const auto e = synthetic_episode(0, 9, 100, 0.2);
  const auto s = summarize({e});
  EXPECT_EQ(s.episodes, 1);
  EXPECT_EQ(s.best.mean, e.best_visibility());
  EXPECT_EQ(s.best.std, 0.0);
  EXPECT_EQ(s.last20.mean, e.last_steps_visibility(20));
  EXPECT_EQ(s.episode_return.mean, e.episode_return());
  EXPECT_EQ(s.mean_final_visibility, e.steps.back().visibility);
  EXPECT_EQ(s.mean_final_distance_mm, e.steps.back().distance_mm);
  ASSERT_EQ(s.visibility_curve.size(), 100u);
  ASSERT_EQ(s.action_magnitude_curve.size(), 100u);
  for (std::size_t t = 0; t < 100; ++t) {
    EXPECT_EQ(s.visibility_curve[t], e.steps[t].visibility);
    EXPECT_EQ(s.action_magnitude_curve[t], e.steps[t].action_magnitude);
  }
}

TEST(Summary, StatisticsOracle) {
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 4; ++i) eps.push_back(synthetic_episode(i, 100 + i, 100, 0.1 * i));
  const auto s = summarize(eps);
  double m = 0;
  for (const auto& e : eps) m += e.best_visibility();
  m /= 4;
  double ss = 0;
  for (const auto& e : eps) ss += (e.best_visibility() - m) * (e.best_visibility() - m);
  EXPECT_NEAR(s.best.mean, m, 1e-15);
  EXPECT_NEAR(s.best.std, std::sqrt(ss / 4), 1e-15);
  EXPECT_EQ(s.best_visibility.size(), 4u);

  const auto ms = mean_std({1.0, 3.0});
  EXPECT_EQ(ms.mean, 2.0);
  EXPECT_EQ(ms.std, 1.0);
  EXPECT_THROW(summarize({}), contract_violation);
  EXPECT_THROW(summarize({synthetic_episode(0, 0, 99, 0.0)}), contract_violation);
}

TEST(Summary, RecomputedFromJsonlIsExact) {
  const auto cfg = mzi::test::small_env();
  const auto records = run_episodes(random_policy(8), cfg, 5, 300);
  std::stringstream io;
  write_jsonl(io, records);
  const auto back = read_jsonl(io);
  ASSERT_EQ(back.size(), records.size());
  EXPECT_EQ(to_json(summarize(back)), to_json(summarize(records)));
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i].seed, records[i].seed);
}

TEST(Summary, JsonlLineSchema) {
  std::ostringstream out;
  write_jsonl(out, synthetic_episode(3, 42, 2, 0.5));
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"episode", "seed", "t", "action_id", "reward", "visibility", "distance_mm", "angle_mrad",
                          "action_magnitude"})
      EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["episode"], 3);
    EXPECT_EQ(j["seed"], 42);
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Summary, EvaluateRejectsZeroEpisodes) {
  EXPECT_THROW(run_episodes(random_policy(1), EnvConfig{}, 0, 1), contract_violation);
}

TEST(Ablation, ExactlyFiveVariants) {
  const auto v = ablation_variants();
  ASSERT_EQ(v.size(), 5u);
  const std::vector<std::string> names{"all", "no_radius", "no_brightness", "no_noise", "no_phase_timing"};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(v[i].name, names[i]);
  auto on = [](const RandomizationConfig& r) {
    return std::vector<bool>{r.radius_enabled, r.brightness_enabled, r.noise_enabled, r.phase_timing_enabled};
  };
  EXPECT_EQ(on(v[0].randomization), (std::vector<bool>{true, true, true, true}));
  for (std::size_t i = 1; i < 5; ++i) {
    auto flags = on(v[i].randomization);
    EXPECT_FALSE(flags[i - 1]);
    flags[i - 1] = true;
    EXPECT_EQ(flags, (std::vector<bool>{true, true, true, true})) << v[i].name;
  }
}

TEST(Ablation, TinyRunProducesTableShapedOutput) {
  AblationSettings s;
  s.env = mzi::test::small_env();
  s.train = mzi::test::small_train(200, 2);
  s.eval_episodes = 2;
  s.eval_seed = 55;
  const auto rows = ablate(ablation_variants(), s);
  ASSERT_EQ(rows.size(), 5u);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,visibility_mean,visibility_std,return_mean,return_std");
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind(rows[std::size_t(n)].variant + ",", 0), 0u);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
    ++n;
  }
  EXPECT_EQ(n, 5);
  for (const auto& r : rows) {
    EXPECT_EQ(r.summary.episodes, 2);
    EXPECT_EQ(r.visibility.mean, r.summary.last20.mean);
  }
}

TEST(Ablation, SingleRowIsTrainThenEvaluate) {
  AblationSettings s;
  s.env = mzi::test::small_env();
  s.train = mzi::test::small_train(200, 3);
  s.eval_episodes = 2;
  s.eval_seed = 8;
  const auto rows = ablate({ablation_variants()[0]}, s);
  ASSERT_EQ(rows.size(), 1u);
  auto net = std::make_shared<const QNet>(train(s.env, s.train).network);
  const auto direct = summarize(run_episodes(greedy_policy(net), s.env, 2, 8));
  EXPECT_EQ(to_json(rows[0].summary), to_json(direct));
}

TEST(Bench, RunsForTheRequestedTime) {
  const auto r = bench_throughput(1.0, mzi::test::small_env(), 1);
  EXPECT_GE(r.seconds, 1.0);
  EXPECT_GT(r.observations, 0);
  EXPECT_NEAR(r.rate(), double(r.observations) / r.seconds, 1e-9);
  EXPECT_THROW(bench_throughput(0.5), contract_violation);
}

TEST(Bench, HalvingThePixelSideIsAtLeastThreeTimesFaster) {
  EnvConfig small, full;
  small.camera.n_pixels = 32;
  const double r64 = bench_throughput(1.5, full, 1).rate();
  const double r32 = bench_throughput(1.5, small, 1).rate();
  EXPECT_GE(r32, 3.0 * r64) << r32 << " vs " << r64;
}

TEST(Bench, ConsecutiveRunsAgreeWithinTwentyPercent) {
  const double a = bench_throughput(1.5).rate();
  const double b = bench_throughput(1.5).rate();
  EXPECT_LE(std::fabs(a - b), 0.2 * std::max(a, b)) << a << " vs " << b;
}
