#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "taclab/geometry.hpp"

namespace taclab {

/// Row-major so that one frame (one row) is contiguous in memory.
using FrameMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FbgGrating {
  double nominal_wavelength_nm = 0.0;
  NormalizedPoint position;
};

/// Gratings multiplexed on one fiber, ordered by nominal wavelength.
struct FbgLayout {
  std::string fiber_id = "fbg-0";
  std::vector<FbgGrating> gratings;

  int count() const { return static_cast<int>(gratings.size()); }
  Eigen::VectorXd nominal_wavelengths() const;

  /// Wavelengths in [1525, 1565] nm, strictly increasing with >= 1 nm
  /// separation; positions on the band. Throws ConfigError otherwise.
  void validate() const;

  /// Default instrument: 8 gratings in two staggered rings of 4.
  static FbgLayout two_ring_default();
};

/// All physical simulation constants.
struct SimConfig {
  double kernel_sigma_mm = 4.0;
  double force_sensitivity_nm_per_N = 0.1071;
  double noise_sigma_nm = 0.001;
  double rise_tau_ms = 87.0 / 2.302585092994046;   // 90% step rise in 87 ms
  double fall_tau_ms = 92.0 / 2.302585092994046;   // 10% step fall in 92 ms
  double sample_rate_hz = 2000.0;
  double degradation_gain_per_cycle = 2.2076e-5;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// A single point press held at constant force over [start, end).
struct ContactStimulus {
  NormalizedPoint position;
  double force_N = 0.0;
  double start_time_s = 0.0;
  double end_time_s = 0.0;

  void validate() const;
};

/// One interrogator sample: all grating wavelengths at one instant.
struct WavelengthFrame {
  std::uint64_t timestamp_ns = 0;
  Eigen::VectorXd wavelengths_nm;
};

/// A uniformly sampled wavelength stream (frames x gratings).
struct Stream {
  std::uint64_t start_timestamp_ns = 0;
  double sample_rate_hz = 2000.0;
  FrameMatrix data;  // rows = frames, cols = gratings

  std::int64_t frames() const { return data.rows(); }
  int channels() const { return static_cast<int>(data.cols()); }
  std::uint64_t timestamp_ns(std::int64_t i) const;
  WavelengthFrame frame(std::int64_t i) const;
};

/// Steady-state wavelength shift of every grating under one contact:
/// dlambda_i = k_F * F * exp(-g_i^2 / (2 sigma_k^2)) with g_i the chord
/// distance from the contact to grating i.
Eigen::VectorXd steady_state_shift(const FbgLayout& layout, const SimConfig& config,
                                   const SensorGeometry& geom,
                                   const ContactStimulus& contact);

/// Wear model: response gain after `cycles` contact cycles.
double degradation_gain(const SimConfig& config, std::int64_t cycles);

/// Simulate the interrogator output for a set of stimuli. Each grating
/// tracks its steady-state target through an asymmetric first-order filter
/// (rise_tau on the way up, fall_tau on the way down); simultaneous stimuli
/// superpose additively. Output = nominal + filtered * gain(wear_cycles)
/// + N(0, noise_sigma). Bit-identical for identical inputs and seed.
Stream simulate_stream(const FbgLayout& layout, const SimConfig& config,
                       const SensorGeometry& geom,
                       const std::vector<ContactStimulus>& stimuli,
                       double duration_s, std::uint64_t seed,
                       std::int64_t wear_cycles = 0);

/// Jitter grating positions (mm on the surface) and nominal wavelengths to
/// model fabrication spread across sensor instances. Throws DataError when
/// the perturbation breaks the wavelength-ordering invariant (retry with a
/// different seed).
FbgLayout perturb_layout(const FbgLayout& layout, const SensorGeometry& geom,
                         double placement_sigma_mm, double wavelength_sigma_nm,
                         std::uint64_t seed);

}  // namespace taclab
