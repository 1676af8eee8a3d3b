#pragma once

// Shared fixtures: a loop-based reference Q-network, small configurations
// that keep training tests fast, and scratch directories.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mzi/agent.hpp"
#include "mzi/env.hpp"
#include "mzi/nn.hpp"

namespace mzi::test {

// Direct evaluation of the dueling network from its parameter blocks, one
// sample at a time, with no im2col or matrix products.
template <typename Scalar>
std::vector<double> reference_q(const nn::QNetwork<Scalar>& net, const std::vector<double>& input) {
  const auto& spec = net.spec();
  const auto& p = net.parameters();
  auto block = [&](const std::string& name) -> const nn::ParamBlock& {
    for (const auto& b : net.blocks())
      if (b.name == name) return b;
    throw std::runtime_error("no block " + name);
  };

  int c = spec.in_channels, h = spec.in_size;
  std::vector<double> act = input;  // c x h x h
  for (std::size_t l = 0; l < spec.convs.size(); ++l) {
    const auto& cs = spec.convs[l];
    const auto& w = block("conv" + std::to_string(l + 1) + ".weight");
    const auto& b = block("conv" + std::to_string(l + 1) + ".bias");
    const int oh = (h - cs.kernel) / cs.stride + 1;
    std::vector<double> out(std::size_t(cs.out_channels) * oh * oh);
    for (int o = 0; o < cs.out_channels; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < oh; ++x) {
          double s = double(p[b.offset + std::size_t(o)]);
          for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < cs.kernel; ++ky)
              for (int kx = 0; kx < cs.kernel; ++kx) {
                const std::size_t wi = ((std::size_t(o) * c + ci) * cs.kernel + ky) * cs.kernel + kx;
                const std::size_t ii = (std::size_t(ci) * h + (y * cs.stride + ky)) * h + (x * cs.stride + kx);
                s += double(p[w.offset + wi]) * act[ii];
              }
          out[(std::size_t(o) * oh + y) * oh + x] = std::max(0.0, s);
        }
    act = std::move(out);
    c = cs.out_channels;
    h = oh;
  }

  auto dense = [&](const std::string& name, const std::vector<double>& in, int units, bool relu) {
    const auto& w = block(name + ".weight");
    const auto& b = block(name + ".bias");
    std::vector<double> out(static_cast<std::size_t>(units));
    for (int u = 0; u < units; ++u) {
      double s = double(p[b.offset + std::size_t(u)]);
      for (std::size_t i = 0; i < in.size(); ++i) s += double(p[w.offset + std::size_t(u) * in.size() + i]) * in[i];
      out[std::size_t(u)] = relu ? std::max(0.0, s) : s;
    }
    return out;
  };
  const auto hidden = dense("dense", act, spec.dense_units, true);
  const double value = dense("value", hidden, 1, false)[0];
  const auto adv = dense("advantage", hidden, spec.n_actions, false);
  double mean = 0;
  for (double a : adv) mean += a;
  mean /= double(adv.size());
  std::vector<double> q(adv.size());
  for (std::size_t a = 0; a < q.size(); ++a) q[a] = value + adv[a] - mean;
  return q;
}

inline nn::NetworkSpec tiny_spec(int in_channels = 2, int in_size = 6, int n_actions = 3) {
  nn::NetworkSpec s;
  s.in_channels = in_channels;
  s.in_size = in_size;
  s.convs = {{2, 3, 2}, {2, 2, 1}};
  s.dense_units = 4;
  s.n_actions = n_actions;
  return s;
}

// 16 frames of 12x12 pixels and a network sized for it.
inline EnvConfig small_env(bool randomized = true) {
  EnvConfig c;
  c.camera.n_pixels = 12;
  c.camera.side_length = 3.8;
  if (!randomized) c.randomization = RandomizationConfig::none();
  return c;
}

inline nn::NetworkSpec small_net() {
  nn::NetworkSpec s;
  s.in_channels = 16;
  s.in_size = 12;
  s.convs = {{4, 4, 4}};
  s.dense_units = 16;
  s.n_actions = kActionCount;
  return s;
}

inline TrainConfig small_train(std::int64_t steps, std::uint64_t seed = 1) {
  TrainConfig t;
  t.total_steps = steps;
  t.seed = seed;
  t.network = small_net();
  t.replay_capacity = 2000;
  t.min_replay = 100;
  t.target_sync_period = 50;
  return t;
}

template <typename Scalar>
Matrix<Scalar> random_inputs(std::size_t rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<Scalar> x(Eigen::Index(rows), cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = Scalar(u(rng));
  return x;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("mzi-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace mzi::test
