#include "taclab/fbgsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "taclab/errors.hpp"
#include "taclab/rng.hpp"

namespace taclab {

Eigen::VectorXd FbgLayout::nominal_wavelengths() const {
  Eigen::VectorXd w(count());
  for (int i = 0; i < count(); ++i) w[i] = gratings[i].nominal_wavelength_nm;
  return w;
}

void FbgLayout::validate() const {
  if (gratings.empty()) throw ConfigError("layout: needs at least one grating");
  for (int i = 0; i < count(); ++i) {
    const auto& g = gratings[i];
    if (g.nominal_wavelength_nm < 1525.0 || g.nominal_wavelength_nm > 1565.0) {
      throw ConfigError("layout: nominal wavelength " +
                        std::to_string(g.nominal_wavelength_nm) +
                        " nm outside [1525, 1565]");
    }
    if (g.position.u < 0.0 || g.position.u >= 1.0 || g.position.v < 0.0 ||
        g.position.v > 1.0) {
      throw ConfigError("layout: grating position off the cylindrical band");
    }
    if (i > 0 && g.nominal_wavelength_nm - gratings[i - 1].nominal_wavelength_nm <
                     1.0 - 1e-12) {
      throw ConfigError("layout: wavelengths must increase by at least 1 nm");
    }
  }
}

FbgLayout FbgLayout::two_ring_default() {
  FbgLayout layout;
  layout.fiber_id = "fbg-0";
  const double ring_v[2] = {0.2, 0.6};
  const double ring_u0[2] = {0.0, 0.125};  // second ring staggered
  int idx = 0;
  for (int ring = 0; ring < 2; ++ring) {
    for (int s = 0; s < 4; ++s, ++idx) {
      layout.gratings.push_back(FbgGrating{
          1528.0 + 5.0 * idx,
          NormalizedPoint{wrap_unit(ring_u0[ring] + 0.25 * s), ring_v[ring]}});
    }
  }
  return layout;
}

void SimConfig::validate() const {
  if (kernel_sigma_mm <= 0.0) throw ConfigError("sim: kernel_sigma_mm must be positive");
  if (force_sensitivity_nm_per_N <= 0.0) {
    throw ConfigError("sim: force_sensitivity_nm_per_N must be positive");
  }
  if (noise_sigma_nm < 0.0) throw ConfigError("sim: noise_sigma_nm must be >= 0");
  if (rise_tau_ms <= 0.0 || fall_tau_ms <= 0.0) {
    throw ConfigError("sim: response time constants must be positive");
  }
  if (sample_rate_hz <= 0.0) throw ConfigError("sim: sample_rate_hz must be positive");
  if (degradation_gain_per_cycle < 0.0) {
    throw ConfigError("sim: degradation_gain_per_cycle must be >= 0");
  }
}

void ContactStimulus::validate() const {
  if (force_N < 0.0) throw ConfigError("stimulus: force must be >= 0");
  if (!(end_time_s > start_time_s) || start_time_s < 0.0) {
    throw ConfigError("stimulus: requires 0 <= start < end");
  }
}

std::uint64_t Stream::timestamp_ns(std::int64_t i) const {
  return start_timestamp_ns +
         static_cast<std::uint64_t>(std::llround(i * (1e9 / sample_rate_hz)));
}

WavelengthFrame Stream::frame(std::int64_t i) const {
  return WavelengthFrame{timestamp_ns(i), data.row(i).transpose()};
}

Eigen::VectorXd steady_state_shift(const FbgLayout& layout, const SimConfig& config,
                                   const SensorGeometry& geom,
                                   const ContactStimulus& contact) {
  const int k = layout.count();
  Eigen::VectorXd shift(k);
  const double inv_two_sigma_sq =
      1.0 / (2.0 * config.kernel_sigma_mm * config.kernel_sigma_mm);
  for (int i = 0; i < k; ++i) {
    const double g =
        surface_distance_mm(geom, contact.position, layout.gratings[i].position);
    shift[i] = config.force_sensitivity_nm_per_N * contact.force_N *
               std::exp(-g * g * inv_two_sigma_sq);
  }
  return shift;
}

double degradation_gain(const SimConfig& config, std::int64_t cycles) {
  if (cycles < 0) throw ConfigError("degradation: cycle count must be >= 0");
  return 1.0 + config.degradation_gain_per_cycle * static_cast<double>(cycles);
}

Stream simulate_stream(const FbgLayout& layout, const SimConfig& config,
                       const SensorGeometry& geom,
                       const std::vector<ContactStimulus>& stimuli,
                       double duration_s, std::uint64_t seed,
                       std::int64_t wear_cycles) {
  layout.validate();
  config.validate();
  geom.validate();
  for (const auto& s : stimuli) {
    s.validate();
    if (s.end_time_s > duration_s + 1e-12) {
      throw ConfigError("simulate_stream: stimulus ends after stream duration");
    }
  }

  const int k = layout.count();
  const std::int64_t frames =
      static_cast<std::int64_t>(std::llround(duration_s * config.sample_rate_hz));
  const double dt_ms = 1000.0 / config.sample_rate_hz;
  const double a_rise = std::exp(-dt_ms / config.rise_tau_ms);
  const double a_fall = std::exp(-dt_ms / config.fall_tau_ms);
  const double gain = degradation_gain(config, wear_cycles);

  // Stimulus activation schedule in frame indices ([start, end)).
  struct Edge {
    std::int64_t frame;
    int stimulus;
    bool on;
  };
  std::vector<Edge> edges;
  edges.reserve(2 * stimuli.size());
  std::vector<Eigen::VectorXd> steady(stimuli.size());
  for (std::size_t s = 0; s < stimuli.size(); ++s) {
    steady[s] = steady_state_shift(layout, config, geom, stimuli[s]);
    const auto first = static_cast<std::int64_t>(
        std::ceil(stimuli[s].start_time_s * config.sample_rate_hz - 1e-9));
    const auto last = static_cast<std::int64_t>(
        std::ceil(stimuli[s].end_time_s * config.sample_rate_hz - 1e-9));
    edges.push_back(Edge{std::max<std::int64_t>(first, 0), static_cast<int>(s), true});
    edges.push_back(Edge{std::max<std::int64_t>(last, 0), static_cast<int>(s), false});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    if (a.on != b.on) return !a.on;  // releases before onsets at the same frame
    return a.stimulus < b.stimulus;
  });

  Stream out;
  out.sample_rate_hz = config.sample_rate_hz;
  out.data.resize(frames, k);

  Rng rng(seed);
  Eigen::VectorXd target = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(k);
  const Eigen::VectorXd nominal = layout.nominal_wavelengths();

  std::size_t next_edge = 0;
  for (std::int64_t i = 0; i < frames; ++i) {
    while (next_edge < edges.size() && edges[next_edge].frame <= i) {
      const Edge& e = edges[next_edge++];
      if (e.on) {
        target += steady[e.stimulus];
      } else {
        target -= steady[e.stimulus];
      }
    }
    for (int c = 0; c < k; ++c) {
      const double a = target[c] > state[c] ? a_rise : a_fall;
      state[c] = a * state[c] + (1.0 - a) * target[c];
      double w = nominal[c] + state[c] * gain;
      if (config.noise_sigma_nm > 0.0) w += config.noise_sigma_nm * rng.gaussian();
      out.data(i, c) = w;
    }
  }
  return out;
}

FbgLayout perturb_layout(const FbgLayout& layout, const SensorGeometry& geom,
                         double placement_sigma_mm, double wavelength_sigma_nm,
                         std::uint64_t seed) {
  layout.validate();
  geom.validate();
  Rng rng(seed);
  FbgLayout out = layout;
  const double circumference = kTwoPi * geom.radius_mm;
  for (auto& g : out.gratings) {
    const double du = rng.gaussian(0.0, placement_sigma_mm) / circumference;
    const double dv = rng.gaussian(0.0, placement_sigma_mm) / geom.height_mm;
    g.position.u = wrap_unit(g.position.u + du);
    g.position.v = std::clamp(g.position.v + dv, 0.0, 1.0);
    g.nominal_wavelength_nm += rng.gaussian(0.0, wavelength_sigma_nm);
  }
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("perturb_layout: perturbation broke layout "
                                "invariants (retry with a new seed): ") +
                    e.what());
  }
  return out;
}

}  // namespace taclab
