#pragma once

// Alignment task as an episodic environment: 25 discrete mount commands,
// visibility-shaped reward, 100-step episodes and the observation
// randomizations used to bridge the gap to a real camera.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mzi/optics.hpp"

namespace mzi {

constexpr int kEpisodeLength = 100;
constexpr int kFramesPerPeriod = 16;
constexpr int kActionCount = 25;

enum class Mount { none, mirror1, bs2 };
enum class Axis { none, x, y };

struct ActionSpec {
  int id = 0;
  Mount target = Mount::none;
  Axis axis = Axis::none;
  int sign = 0;                     // +1, -1, or 0 for the no-op
  double magnitude_fraction = 0.0;  // of the control's angle limit

  bool is_noop() const { return target == Mount::none; }

  // Index into MirrorAngles, or -1 for the no-op.
  int control() const {
    if (is_noop()) return -1;
    return (target == Mount::mirror1 ? 0 : 2) + (axis == Axis::x ? 0 : 1);
  }

  MirrorAngles delta(const AngleLimits& limits) const {
    MirrorAngles d;
    if (!is_noop()) d[std::size_t(control())] = sign * magnitude_fraction * limits[std::size_t(control())];
    return d;
  }
};

inline constexpr std::array<double, 3> kActionMagnitudes{0.01, 0.05, 0.1};

// id 0 is the no-op; the rest are ordered by mount, axis, sign, magnitude.
inline const std::array<ActionSpec, kActionCount>& action_table() {
  static const auto table = [] {
    std::array<ActionSpec, kActionCount> t{};
    int id = 1;
    for (Mount m : {Mount::mirror1, Mount::bs2})
      for (Axis ax : {Axis::x, Axis::y})
        for (int sign : {+1, -1})
          for (double mag : kActionMagnitudes) t[std::size_t(id)] = ActionSpec{id, m, ax, sign, mag}, ++id;
    return t;
  }();
  return table;
}

inline const ActionSpec& action_spec(int id) {
  if (id < 0 || id >= kActionCount) throw std::out_of_range("action id " + std::to_string(id) + " not in [0, 25)");
  return action_table()[std::size_t(id)];
}

// R = V - ln(1 - V) - 1, with V capped just below 1.
inline double reward_from_visibility(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw contract_violation("reward_from_visibility: visibility outside [0,1]");
  v = std::min(v, 1.0 - 1e-6);
  return v - std::log1p(-v) - 1.0;
}

// Piezo phases for one period: a forward ramp of n_forward frames, a
// backward ramp with the remainder, then a cyclic left rotation by shift.
inline std::vector<double> phase_schedule(int n_forward, int shift) {
  if (n_forward < 9 || n_forward > kFramesPerPeriod - 1)
    throw std::invalid_argument("phase_schedule: n_forward must be in [9, 15]");
  if (shift < 0 || shift >= kFramesPerPeriod) throw std::invalid_argument("phase_schedule: shift must be in [0, 15]");
  const int n_backward = kFramesPerPeriod - n_forward;
  std::vector<double> phases;
  phases.reserve(kFramesPerPeriod);
  for (int j = 0; j < n_forward; ++j) phases.push_back(2.0 * kPi * j / n_forward);
  for (int m = 0; m < n_backward; ++m) phases.push_back(2.0 * kPi * (1.0 - double(m + 1) / n_backward));
  std::rotate(phases.begin(), phases.begin() + shift, phases.end());
  return phases;
}

struct RandomizationConfig {
  bool radius_enabled = true;
  bool brightness_enabled = true;
  bool noise_enabled = true;
  bool phase_timing_enabled = true;
  double radius_span = 0.2;
  double brightness_span = 0.3;
  double noise_level = 0.2;  // peak-to-peak, fraction of full scale
  int min_forward_frames = 9;

  static RandomizationConfig none() { return {false, false, false, false}; }

  void validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v < 1.0; };
    if (!in_unit(radius_span) || !in_unit(brightness_span) || !in_unit(noise_level))
      throw contract_violation("randomization: spans must be in [0, 1)");
    if (min_forward_frames < 9 || min_forward_frames > 15)
      throw contract_violation("randomization: min_forward_frames must be in [9, 15]");
  }
};

enum class DrawScope { episode, step };

struct RandomizationDraws {
  double radius_factor = 1.0;
  double brightness = 1.0;
  double noise_level = 0.0;
  std::uint64_t noise_seed = 0;
  int n_forward = 9;
  int shift = 0;
};

using Rng = std::mt19937_64;

inline RandomizationDraws sample_randomizations(Rng& rng, const RandomizationConfig& cfg, DrawScope scope) {
  RandomizationDraws d;
  if (scope == DrawScope::episode) {
    if (cfg.radius_enabled)
      d.radius_factor = std::uniform_real_distribution<double>(1.0 - cfg.radius_span, 1.0 + cfg.radius_span)(rng);
    return d;
  }
  if (cfg.brightness_enabled)
    d.brightness = std::uniform_real_distribution<double>(1.0 - cfg.brightness_span, 1.0 + cfg.brightness_span)(rng);
  if (cfg.noise_enabled) {
    d.noise_level = cfg.noise_level;
    d.noise_seed = rng();
  }
  if (cfg.phase_timing_enabled) {
    d.n_forward = std::uniform_int_distribution<int>(cfg.min_forward_frames, kFramesPerPeriod - 1)(rng);
    d.shift = std::uniform_int_distribution<int>(0, kFramesPerPeriod - 1)(rng);
  }
  return d;
}

// Per-pixel noise stream; mt19937_64 is several times slower here.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t operator()() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

// pixel <- clip(brightness * pixel + eta, 0, 1), eta ~ U[-level/2, level/2].
inline void apply_image_randomizations(Observation& obs, const RandomizationDraws& d) {
  auto data = obs.data();
  const auto gain = float(d.brightness);
  if (d.noise_level > 0.0) {
    // Two 24-bit uniforms per 64-bit draw.
    SplitMix64 noise_rng{d.noise_seed};
    const auto span = float(d.noise_level) * 0x1p-24f;
    const auto offset = -0.5f * float(d.noise_level);
    auto noisy = [&](float p, std::uint64_t bits24) {
      return std::clamp(gain * p + (float(bits24) * span + offset), 0.0f, 1.0f);
    };
    std::size_t i = 0;
    for (; i + 1 < data.size(); i += 2) {
      const std::uint64_t bits = noise_rng();
      data[i] = noisy(data[i], bits >> 40);
      data[i + 1] = noisy(data[i + 1], (bits >> 8) & 0xFFFFFF);
    }
    if (i < data.size()) data[i] = noisy(data[i], noise_rng() >> 40);
  } else if (d.brightness != 1.0) {
    for (float& p : data) p = std::clamp(gain * p, 0.0f, 1.0f);
  }
}

struct EnvConfig {
  Geometry geometry;
  Camera camera;
  AngleLimits limits;
  RandomizationConfig randomization;

  void validate() const {
    geometry.validate();
    camera.validate();
    randomization.validate();
    if (camera.phase_count != kFramesPerPeriod) throw contract_violation("env: camera must take 16 frames per period");
  }
};

struct EnvState {
  MirrorAngles angles;
  double radius = 0.95;
  int step_index = 0;
  Rng rng;

  BeamState beam(const Geometry& g) const { return beam_state_from_angles(angles, g, radius); }
};

struct StepInfo {
  double visibility = 0;           // analytic, from the hidden state
  double measured_visibility = 0;  // from the delivered frames, diagnostic only
  double distance_mm = 0;
  double angle_mrad = 0;
  double action_magnitude = 0;  // fraction of the control's angle limit
};

struct StepResult {
  Observation observation;
  double reward = 0;
  bool done = false;
  StepInfo info;
};

class Environment {
 public:
  explicit Environment(EnvConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }
  const EnvState& state() const { return state_; }
  BeamState beam() const { return state_.beam(cfg_.geometry); }
  bool done() const { return state_.step_index >= kEpisodeLength; }

  // Angles uniform within the limits; radius drawn once per episode.
  Observation reset(std::uint64_t seed) {
    state_ = EnvState{};
    state_.rng.seed(seed);
    for (std::size_t i = 0; i < 4; ++i)
      state_.angles[i] = std::uniform_real_distribution<double>(-cfg_.limits[i], cfg_.limits[i])(state_.rng);
    draw_radius();
    return observe();
  }

  // Same as reset(seed) but starting from the given angles.
  Observation reset(std::uint64_t seed, const MirrorAngles& angles) {
    state_ = EnvState{};
    state_.rng.seed(seed);
    state_.angles = cfg_.limits.clamp(angles);
    draw_radius();
    return observe();
  }

  StepResult step(int action_id) {
    if (done()) throw contract_violation("step: episode is done, call reset");
    const ActionSpec& a = action_spec(action_id);
    const MirrorAngles d = a.delta(cfg_.limits);
    for (std::size_t i = 0; i < 4; ++i) state_.angles[i] += d[i];
    state_.angles = cfg_.limits.clamp(state_.angles);
    ++state_.step_index;

    StepResult r;
    r.observation = observe();
    const BeamState b = beam();
    const Misalignment m = misalignment_metrics(b, cfg_.geometry);
    r.info.visibility = visibility_analytic(b);
    r.info.distance_mm = m.distance_mm;
    r.info.angle_mrad = m.angle_mrad;
    r.info.action_magnitude = a.magnitude_fraction;
    try {
      r.info.measured_visibility = visibility_numeric(r.observation);
    } catch (const undefined_visibility&) {
      r.info.measured_visibility = 0.0;
    }
    r.reward = reward_from_visibility(r.info.visibility);
    r.done = done();
    return r;
  }

 private:
  void draw_radius() {
    const auto d = sample_randomizations(state_.rng, cfg_.randomization, DrawScope::episode);
    state_.radius = cfg_.geometry.beam_radius * d.radius_factor;
  }

  Observation observe() {
    const auto d = sample_randomizations(state_.rng, cfg_.randomization, DrawScope::step);
    const auto phases = phase_schedule(d.n_forward, d.shift);
    Observation obs = render_observation(beam(), phases, cfg_.camera);
    apply_image_randomizations(obs, d);
    return obs;
  }

  EnvConfig cfg_;
  EnvState state_;
};

}  // namespace mzi
