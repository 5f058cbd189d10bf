#include "taclab/calib.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "taclab/errors.hpp"
#include "taclab/rng.hpp"

namespace taclab {

void ScanPlan::validate() const {
  if (attempts_per_point < 1) throw ConfigError("scan: attempts_per_point must be >= 1");
  if (jitter_sigma_mm < 0.0) throw ConfigError("scan: jitter_sigma_mm must be >= 0");
  if (dwell_s <= 0.0 || gap_s < 0.0) {
    throw ConfigError("scan: dwell must be positive and gap >= 0");
  }
  if (probe_force_N <= 0.0) throw ConfigError("scan: probe force must be positive");
}

ScanResult run_scan(const SensorGeometry& geom, const FbgLayout& layout,
                    const SimConfig& sim, const ScanPlan& plan, std::uint64_t seed) {
  geom.validate();
  layout.validate();
  sim.validate();
  plan.validate();
  if (plan.dwell_s * sim.sample_rate_hz <= 1.0) {
    throw ConfigError("scan: dwell must exceed one sample period");
  }

  Rng base(seed);
  Rng jitter_rng = base.fork(1);
  const std::uint64_t sim_seed = base.fork(2).seed();

  const int rotations = geom.rotation_count();
  const double circumference = kTwoPi * geom.radius_mm;

  std::vector<ContactStimulus> stimuli;
  std::vector<ContactEvent> events;
  double t = plan.gap_s;
  for (int k = 0; k < rotations; ++k) {
    for (int i = 0; i < geom.grid_cols; ++i) {
      for (int j = 0; j < geom.grid_rows; ++j) {
        for (int a = 0; a < plan.attempts_per_point; ++a) {
          NormalizedPoint p = normalize(geom, grid_to_surface(geom, i, j, k));
          const double du = jitter_rng.gaussian(0.0, plan.jitter_sigma_mm) / circumference;
          const double dv = jitter_rng.gaussian(0.0, plan.jitter_sigma_mm) / geom.height_mm;
          p.u = wrap_unit(p.u + du);
          p.v = std::clamp(p.v + dv, 0.0, 1.0);  // clamped to the band

          ContactStimulus stim;
          stim.position = p;
          stim.force_N = plan.probe_force_N;
          stim.start_time_s = t;
          stim.end_time_s = t + plan.dwell_s;
          stimuli.push_back(stim);

          ContactEvent ev;
          ev.idx_mid = static_cast<std::int64_t>(
              std::llround((t + plan.dwell_s / 2.0) * sim.sample_rate_hz));
          ev.truth = p;
          ev.force_N = plan.probe_force_N;
          events.push_back(ev);

          t += plan.dwell_s + plan.gap_s;
        }
      }
    }
  }

  ScanResult result;
  result.stream = simulate_stream(layout, sim, geom, stimuli, t, sim_seed);
  result.events = std::move(events);
  return result;
}

SampleLabels label_stream(std::int64_t frame_count,
                          const std::vector<ContactEvent>& events, int w_p) {
  if (w_p <= 0) throw ConfigError("label_stream: w_p must be positive");
  for (std::size_t e = 1; e < events.size(); ++e) {
    if (events[e].idx_mid < events[e - 1].idx_mid) {
      throw ConfigError("label_stream: events must be sorted by idx_mid");
    }
  }

  SampleLabels labels;
  labels.positive_event.assign(frame_count, -1);
  labels.nearest_event.assign(frame_count, -1);
  if (events.empty()) return labels;

  std::size_t near = 0;
  for (std::int64_t idx = 0; idx < frame_count; ++idx) {
    while (near + 1 < events.size() &&
           std::llabs(events[near + 1].idx_mid - idx) <
               std::llabs(events[near].idx_mid - idx)) {
      ++near;  // strict < keeps the earlier event on ties
    }
    labels.nearest_event[idx] = static_cast<std::int32_t>(near);
    if (std::llabs(events[near].idx_mid - idx) <= w_p) {
      labels.positive_event[idx] = static_cast<std::int32_t>(near);
    }
  }
  return labels;
}

std::vector<Window> make_windows(const SampleLabels& labels,
                                 const std::vector<ContactEvent>& events,
                                 std::int64_t frame_count, int w_d, int stride) {
  if (w_d < 1 || stride < 1) {
    throw ConfigError("make_windows: w_d and stride must be >= 1");
  }
  if (frame_count < w_d) throw ConfigError("make_windows: stream shorter than w_d");
  if (static_cast<std::int64_t>(labels.positive_event.size()) != frame_count) {
    throw ConfigError("make_windows: label array does not match the stream");
  }

  std::vector<Window> windows;
  windows.reserve(static_cast<std::size_t>((frame_count - w_d) / stride + 1));
  for (std::int64_t idx = w_d; idx <= frame_count; idx += stride) {
    const std::int64_t edge = idx - 1;  // prediction instant
    Window w;
    w.start = idx - w_d;
    const std::int32_t pos_ev = labels.positive_event[edge];
    w.contact = pos_ev >= 0;
    w.event_id = w.contact ? pos_ev : labels.nearest_event[edge];
    if (w.contact) w.position = events[pos_ev].truth;
    windows.push_back(w);
  }
  return windows;
}

std::vector<Window> subsample_windows(const std::vector<Window>& windows,
                                      int max_positive_per_event,
                                      double negative_ratio, std::uint64_t seed) {
  if (max_positive_per_event < 1) {
    throw ConfigError("subsample_windows: max_positive_per_event must be >= 1");
  }
  if (negative_ratio <= 0.0) {
    throw ConfigError("subsample_windows: negative_ratio must be positive");
  }

  // Positive windows grouped by event, in stream order.
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    (windows[i].contact ? positives : negatives).push_back(i);
  }

  std::vector<std::size_t> kept;
  std::size_t run_begin = 0;
  const auto flush_event = [&](std::size_t run_end) {
    const std::size_t count = run_end - run_begin;
    const auto cap = static_cast<std::size_t>(max_positive_per_event);
    if (count <= cap) {
      for (std::size_t r = run_begin; r < run_end; ++r) kept.push_back(positives[r]);
    } else {
      for (std::size_t c = 0; c < cap; ++c) {
        kept.push_back(positives[run_begin + c * count / cap]);
      }
    }
  };
  for (std::size_t p = 1; p <= positives.size(); ++p) {
    if (p == positives.size() ||
        windows[positives[p]].event_id != windows[positives[run_begin]].event_id) {
      flush_event(p);
      run_begin = p;
    }
  }

  const auto neg_target = static_cast<std::size_t>(
      std::llround(negative_ratio * static_cast<double>(kept.size())));
  Rng rng(seed);
  if (negatives.size() > neg_target) {
    rng.shuffle(negatives);
    negatives.resize(neg_target);
  }
  kept.insert(kept.end(), negatives.begin(), negatives.end());
  std::sort(kept.begin(), kept.end());

  std::vector<Window> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(windows[i]);
  return out;
}

void Normalization::apply(Eigen::Ref<FrameMatrix> frames) const {
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    frames.col(c) = (frames.col(c).array() - baseline[c]) / scale[c];
  }
}

void Normalization::invert(Eigen::Ref<FrameMatrix> frames) const {
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    frames.col(c) = frames.col(c).array() * scale[c] + baseline[c];
  }
}

Normalization compute_normalization(const Stream& stream, const FbgLayout& layout) {
  if (stream.channels() != layout.count()) {
    throw DataError("normalization: stream channel count does not match layout");
  }
  Normalization norm;
  norm.baseline = layout.nominal_wavelengths();
  norm.scale.resize(stream.channels());
  for (int c = 0; c < stream.channels(); ++c) {
    const double range = stream.data.col(c).maxCoeff() - stream.data.col(c).minCoeff();
    if (range <= 0.0) {
      std::cerr << "warning: channel " << c
                << " has no dynamic range; clamping scale to epsilon\n";
      norm.scale[c] = std::numeric_limits<double>::epsilon();
    } else {
      norm.scale[c] = range;
    }
  }
  return norm;
}

SplitWindows split_windows(const std::vector<Window>& windows,
                           std::int64_t event_count, double test_fraction,
                           std::uint64_t seed) {
  if (event_count < 2) throw DataError("split: needs at least 2 events");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split: test_fraction must lie in (0, 1)");
  }

  std::vector<std::int64_t> order(event_count);
  for (std::int64_t e = 0; e < event_count; ++e) order[e] = e;
  Rng rng(seed);
  rng.shuffle(order);

  auto n_test = static_cast<std::int64_t>(
      std::llround(test_fraction * static_cast<double>(event_count)));
  n_test = std::clamp<std::int64_t>(n_test, 1, event_count - 1);

  std::vector<char> is_test(event_count, 0);
  for (std::int64_t e = 0; e < n_test; ++e) is_test[order[e]] = 1;

  SplitWindows split;
  for (const Window& w : windows) {
    if (w.event_id < 0 || w.event_id >= event_count) {
      throw DataError("split: window references an unknown event");
    }
    (is_test[w.event_id] ? split.test : split.train).push_back(w);
  }
  return split;
}

nn::Dataset make_dataset(const Stream& stream, const Normalization& norm,
                         std::span<const Window> windows, int w_d) {
  nn::Dataset set;
  set.frames = &stream.data;
  set.shift = norm.baseline;
  set.scale = norm.scale;
  set.window_len = w_d;
  set.samples.reserve(windows.size());
  for (const Window& w : windows) {
    nn::Dataset::Sample s;
    s.start = w.start;
    s.positive = w.contact;
    s.has_position = w.contact;
    s.u = w.position.u;
    s.v = w.position.v;
    s.group = w.event_id;
    set.samples.push_back(s);
  }
  set.validate();
  return set;
}

}  // namespace taclab
