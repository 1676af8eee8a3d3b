#pragma once

// Two-beam interference model of a Mach-Zehnder interferometer: geometry,
// mount angles, beam state at the camera, frame rendering and visibility.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace mzi {

constexpr double kPi = std::numbers::pi;

// Raised when a caller breaks an operation's precondition.
struct contract_violation : std::logic_error {
  using std::logic_error::logic_error;
};

// Setup dimensions in millimetres.
struct Geometry {
  double a = 200.0;
  double b = 300.0;
  double c = 100.0;
  double wavelength = 6.35e-4;  // 635 nm
  double beam_radius = 0.95;

  double wavenumber() const { return 2.0 * kPi / wavelength; }

  void validate() const {
    if (!(a > 0 && b > 0 && c > 0 && wavelength > 0 && beam_radius > 0))
      throw contract_violation("geometry: all dimensions must be positive");
    if (!(wavelength < 1e-2 * beam_radius))
      throw contract_violation("geometry: wavelength must be much smaller than the beam radius");
  }
};

// Deflections of mirror 1 and beam splitter 2 (rad), relative to the nominal
// 90 degree reflection.
struct MirrorAngles {
  double a1x = 0, a1y = 0, a2x = 0, a2y = 0;

  static constexpr std::size_t size() { return 4; }
  double& operator[](std::size_t i) { return i == 0 ? a1x : i == 1 ? a1y : i == 2 ? a2x : a2y; }
  double operator[](std::size_t i) const { return i == 0 ? a1x : i == 1 ? a1y : i == 2 ? a2x : a2y; }
  bool operator==(const MirrorAngles&) const = default;
};

// Per-control angle limits, indexed like MirrorAngles.
struct AngleLimits {
  std::array<double, 4> max{5.2e-3, 3.7e-3, 2.6e-3, 1.8e-3};

  double operator[](std::size_t i) const { return max[i]; }

  MirrorAngles clamp(MirrorAngles angles) const {
    for (std::size_t i = 0; i < 4; ++i) angles[i] = std::clamp(angles[i], -max[i], max[i]);
    return angles;
  }
};

// Lower beam at the camera plane. The upper beam is centred, on axis.
struct BeamState {
  double x0 = 0, y0 = 0;  // mm
  double kx = 0, ky = 0;  // rad/mm
  double radius = 0.95;   // mm
  bool operator==(const BeamState&) const = default;
};

struct Camera {
  int n_pixels = 64;
  double side_length = 3.8;  // mm, 4 nominal radii
  int phase_count = 16;

  void validate() const {
    if (n_pixels < 2) throw contract_violation("camera: n_pixels must be >= 2");
    if (!(side_length > 0)) throw contract_violation("camera: side_length must be positive");
    if (phase_count < 1) throw contract_violation("camera: phase_count must be >= 1");
  }
  std::size_t frame_size() const { return std::size_t(n_pixels) * std::size_t(n_pixels); }
  double pitch() const { return side_length / n_pixels; }
  // Centre of pixel column (or row) i.
  double coordinate(int i) const { return -0.5 * side_length + (i + 0.5) * pitch(); }
};

// Peak constructive intensity of two unit-amplitude beams.
constexpr double kSaturationIntensity = 4.0;

// Row-major n x n intensities normalised to [0,1]; row index follows y.
struct Frame {
  int n = 0;
  std::vector<float> pixels;

  float at(int row, int col) const { return pixels[std::size_t(row) * n + col]; }
  double total() const {
    double s = 0;
    for (float p : pixels) s += p;
    return s;
  }
};

// Frames in acquisition order, stored contiguously frame-major.
class Observation {
 public:
  Observation() = default;
  Observation(int frames, int n) : frames_(frames), n_(n), data_(std::size_t(frames) * n * n, 0.0f) {}

  int frame_count() const { return frames_; }
  int n_pixels() const { return n_; }
  std::size_t frame_size() const { return std::size_t(n_) * n_; }

  std::span<float> frame(int t) { return {data_.data() + t * frame_size(), frame_size()}; }
  std::span<const float> frame(int t) const { return {data_.data() + t * frame_size(), frame_size()}; }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  Frame to_frame(int t) const {
    auto f = frame(t);
    return Frame{n_, std::vector<float>(f.begin(), f.end())};
  }

  bool operator==(const Observation&) const = default;

 private:
  int frames_ = 0;
  int n_ = 0;
  std::vector<float> data_;
};

// k_{x,y}/k = a1 + a2 and {x,y}0 = a2 c + a1 (a + c).
inline BeamState beam_state_from_angles(const MirrorAngles& angles, const Geometry& geom, double radius) {
  const double k = geom.wavenumber();
  BeamState s;
  s.kx = k * (angles.a1x + angles.a2x);
  s.ky = k * (angles.a1y + angles.a2y);
  s.x0 = angles.a2x * geom.c + angles.a1x * (geom.a + geom.c);
  s.y0 = angles.a2y * geom.c + angles.a1y * (geom.a + geom.c);
  s.radius = radius;
  return s;
}

// Closed-form visibility of the two Gaussian beams.
inline double visibility_analytic(const BeamState& s) {
  if (!(s.radius > 0)) throw contract_violation("visibility_analytic: radius must be positive");
  const double r2 = s.radius * s.radius;
  return std::exp(-(s.x0 * s.x0 + s.y0 * s.y0) / (2.0 * r2)) *
         std::exp(-(s.kx * s.kx + s.ky * s.ky) * r2 / 8.0);
}

struct Misalignment {
  double distance_mm = 0;
  double angle_mrad = 0;
};

inline Misalignment misalignment_metrics(const BeamState& s, const Geometry& geom) {
  return {std::hypot(s.x0, s.y0), 1e3 * std::hypot(s.kx, s.ky) / geom.wavenumber()};
}

// Phase-independent part of the interference pattern. With E1 the upper
// beam (carrying the piezo phase) and E2 the lower beam,
//   I(phi) = |E1|^2 + |E2|^2 + 2 E1 E2 cos(phi - theta)
//          = base + cos(phi) * in_phase + sin(phi) * quadrature.
class InterferencePattern {
 public:
  InterferencePattern(const BeamState& s, const Camera& cam) : n_(cam.n_pixels) {
    cam.validate();
    if (!(s.radius > 0)) throw contract_violation("render: radius must be positive");
    const auto n = std::size_t(n_);
    const double inv_r2 = 1.0 / (s.radius * s.radius);

    std::vector<double> gx1(n), gx2(n), gy1(n), gy2(n);
    std::vector<std::complex<double>> ex(n), ey(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = cam.coordinate(int(i));
      gx1[i] = std::exp(-u * u * inv_r2);
      gy1[i] = gx1[i];
      gx2[i] = std::exp(-(u - s.x0) * (u - s.x0) * inv_r2);
      gy2[i] = std::exp(-(u - s.y0) * (u - s.y0) * inv_r2);
      ex[i] = std::polar(1.0, s.kx * u);
      ey[i] = std::polar(1.0, s.ky * u);
    }

    base_.resize(n * n);
    in_phase_.resize(n * n);
    quadrature_.resize(n * n);
    for (std::size_t row = 0; row < n; ++row) {
      for (std::size_t col = 0; col < n; ++col) {
        const double e1 = gx1[col] * gy1[row];
        const double e2 = gx2[col] * gy2[row];
        const std::complex<double> carrier = ex[col] * ey[row];
        const std::size_t p = row * n + col;
        base_[p] = float(e1 * e1 + e2 * e2);
        in_phase_[p] = float(2.0 * e1 * e2 * carrier.real());
        quadrature_[p] = float(2.0 * e1 * e2 * carrier.imag());
      }
    }
  }

  int n_pixels() const { return n_; }

  // Unnormalised intensity at pixel p for the given piezo phase.
  float intensity(std::size_t p, float cos_phi, float sin_phi) const {
    return base_[p] + cos_phi * in_phase_[p] + sin_phi * quadrature_[p];
  }

  void render_into(double phase, std::span<float> out) const {
    const auto cp = float(std::cos(phase)), sp = float(std::sin(phase));
    constexpr auto scale = float(1.0 / kSaturationIntensity);
    const float* base = base_.data();
    const float* ip = in_phase_.data();
    const float* qd = quadrature_.data();
    float* dst = out.data();
    const std::size_t n = base_.size();
    for (std::size_t p = 0; p < n; ++p) {
      const float v = (base[p] + cp * ip[p] + sp * qd[p]) * scale;
      dst[p] = std::min(std::max(v, 0.0f), 1.0f);
    }
  }

  // Total power for the given phase without clipping or normalisation.
  double total_intensity(double phase) const {
    const auto cp = float(std::cos(phase)), sp = float(std::sin(phase));
    double s = 0;
    for (std::size_t p = 0; p < base_.size(); ++p) s += intensity(p, cp, sp);
    return s;
  }

  double single_beam_totals() const {
    double s = 0;
    for (double b : base_) s += b;
    return s;
  }

 private:
  int n_;
  std::vector<float> base_, in_phase_, quadrature_;
};

inline Frame render_frame(const BeamState& s, double phase, const Camera& cam) {
  InterferencePattern pattern(s, cam);
  Frame f{cam.n_pixels, std::vector<float>(cam.frame_size())};
  pattern.render_into(phase, f.pixels);
  return f;
}

inline Observation render_observation(const BeamState& s, std::span<const double> phases, const Camera& cam) {
  if (phases.size() != std::size_t(cam.phase_count))
    throw contract_violation("render_observation: expected " + std::to_string(cam.phase_count) +
                             " phases, got " + std::to_string(phases.size()));
  InterferencePattern pattern(s, cam);
  Observation obs(cam.phase_count, cam.n_pixels);
  for (int t = 0; t < cam.phase_count; ++t) pattern.render_into(phases[t], obs.frame(t));
  return obs;
}

struct undefined_visibility : std::domain_error {
  using std::domain_error::domain_error;
};

// (max - min) / (max + min) over per-frame total power.
inline double visibility_from_totals(std::span<const double> totals) {
  if (totals.size() < 2) throw contract_violation("visibility_numeric: need at least 2 frames");
  const auto [lo, hi] = std::minmax_element(totals.begin(), totals.end());
  if (!(*hi > 0)) throw undefined_visibility("visibility_numeric: all frames are dark");
  return std::clamp((*hi - *lo) / (*hi + *lo), 0.0, 1.0);
}

inline double visibility_numeric(std::span<const Frame> frames) {
  std::vector<double> totals;
  totals.reserve(frames.size());
  for (const auto& f : frames) totals.push_back(f.total());
  return visibility_from_totals(totals);
}

inline double visibility_numeric(const Observation& obs) {
  std::vector<double> totals(std::size_t(obs.frame_count()));
  for (int t = 0; t < obs.frame_count(); ++t) {
    double s = 0;
    for (float p : obs.frame(t)) s += p;
    totals[std::size_t(t)] = s;
  }
  return visibility_from_totals(totals);
}

}  // namespace mzi
