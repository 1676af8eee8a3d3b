#pragma once

// JSON forms of the environment, training and evaluation settings. Missing
// keys keep their defaults so config files only need the overrides.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mzi/agent.hpp"
#include "mzi/checkpoint.hpp"
#include "mzi/env.hpp"

namespace mzi {

using nlohmann::json;

namespace detail {
template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}
}  // namespace detail

inline json to_json(const EnvConfig& c) {
  return {
      {"geometry",
       {{"a", c.geometry.a}, {"b", c.geometry.b}, {"c", c.geometry.c},
        {"wavelength", c.geometry.wavelength}, {"beam_radius", c.geometry.beam_radius}}},
      {"camera",
       {{"n_pixels", c.camera.n_pixels}, {"side_length", c.camera.side_length}, {"phase_count", c.camera.phase_count}}},
      {"angle_limits", c.limits.max},
      {"randomization",
       {{"radius", c.randomization.radius_enabled},
        {"brightness", c.randomization.brightness_enabled},
        {"noise", c.randomization.noise_enabled},
        {"phase_timing", c.randomization.phase_timing_enabled},
        {"radius_span", c.randomization.radius_span},
        {"brightness_span", c.randomization.brightness_span},
        {"noise_level", c.randomization.noise_level},
        {"min_forward_frames", c.randomization.min_forward_frames}}},
  };
}

inline EnvConfig env_config_from_json(const json& j, EnvConfig c = {}) {
  using detail::read;
  if (j.contains("geometry")) {
    const json& g = j["geometry"];
    read(g, "a", c.geometry.a);
    read(g, "b", c.geometry.b);
    read(g, "c", c.geometry.c);
    read(g, "wavelength", c.geometry.wavelength);
    read(g, "beam_radius", c.geometry.beam_radius);
  }
  if (j.contains("camera")) {
    const json& k = j["camera"];
    read(k, "n_pixels", c.camera.n_pixels);
    read(k, "side_length", c.camera.side_length);
    read(k, "phase_count", c.camera.phase_count);
  }
  read(j, "angle_limits", c.limits.max);
  if (j.contains("randomization")) {
    const json& r = j["randomization"];
    read(r, "radius", c.randomization.radius_enabled);
    read(r, "brightness", c.randomization.brightness_enabled);
    read(r, "noise", c.randomization.noise_enabled);
    read(r, "phase_timing", c.randomization.phase_timing_enabled);
    read(r, "radius_span", c.randomization.radius_span);
    read(r, "brightness_span", c.randomization.brightness_span);
    read(r, "noise_level", c.randomization.noise_level);
    read(r, "min_forward_frames", c.randomization.min_forward_frames);
  }
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"total_steps", c.total_steps},
          {"update_every", c.update_every},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_epsilon", c.adam_epsilon},
          {"target_sync_period", c.target_sync_period},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_fraction", c.epsilon_decay_fraction},
          {"replay_capacity", c.replay_capacity},
          {"min_replay", c.min_replay},
          {"huber_delta", c.huber_delta},
          {"seed", c.seed},
          {"network", network_spec_to_json(c.network)}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  using detail::read;
  read(j, "gamma", c.gamma);
  read(j, "total_steps", c.total_steps);
  read(j, "update_every", c.update_every);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "adam_epsilon", c.adam_epsilon);
  read(j, "target_sync_period", c.target_sync_period);
  read(j, "epsilon_start", c.epsilon_start);
  read(j, "epsilon_end", c.epsilon_end);
  read(j, "epsilon_decay_fraction", c.epsilon_decay_fraction);
  read(j, "replay_capacity", c.replay_capacity);
  read(j, "min_replay", c.min_replay);
  read(j, "huber_delta", c.huber_delta);
  read(j, "seed", c.seed);
  if (j.contains("network")) c.network = network_spec_from_json(j["network"]);
  c.validate();
  return c;
}

// Top-level document: {"env": {...}, "train": {...}, "eval": {...}, "seed": n}
struct RunConfig {
  EnvConfig env;
  TrainConfig train;
  EnvConfig eval_env;  // defaults to env
  int eval_episodes = 100;
  std::uint64_t eval_seed = 1'000'000;
};

inline RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  if (j.contains("env")) rc.env = env_config_from_json(j["env"]);
  if (j.contains("train")) rc.train = train_config_from_json(j["train"]);
  if (j.contains("seed")) rc.train.seed = j["seed"].get<std::uint64_t>();
  rc.eval_env = rc.env;
  if (j.contains("eval")) {
    const json& e = j["eval"];
    if (e.contains("env")) rc.eval_env = env_config_from_json(e["env"], rc.env);
    detail::read(e, "episodes", rc.eval_episodes);
    detail::read(e, "seed", rc.eval_seed);
  }
  return rc;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace mzi
