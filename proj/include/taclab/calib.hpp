#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "taclab/fbgsim.hpp"
#include "taclab/geometry.hpp"
#include "taclab/nn.hpp"

namespace taclab {

/// Probe schedule of the calibration rig: every grid point is pressed
/// `attempts_per_point` times per rotation step, with a small random
/// placement jitter per attempt.
struct ScanPlan {
  int attempts_per_point = 3;
  double jitter_sigma_mm = 0.5;
  double dwell_s = 0.4;
  double gap_s = 0.5;
  double probe_force_N = 1.0;

  void validate() const;
};

/// Ground truth for one probe press. idx_mid is the stream sample index at
/// the temporal midpoint of the dwell; truth is the jittered (and, near the
/// band edge, clamped) contact position.
struct ContactEvent {
  std::int64_t idx_mid = 0;
  NormalizedPoint truth;
  double force_N = 0.0;
};

struct ScanResult {
  Stream stream;
  std::vector<ContactEvent> events;
};

/// Simulate a full calibration scan: rotations x grid points x attempts
/// contacts, in that order. Deterministic given the seed.
ScanResult run_scan(const SensorGeometry& geom, const FbgLayout& layout,
                    const SimConfig& sim, const ScanPlan& plan, std::uint64_t seed);

/// Per-sample labels. positive_event[i] is the owning event index when
/// sample i lies within w_p of that event's idx_mid (nearest midpoint wins,
/// ties to the earlier event), -1 otherwise. nearest_event[i] is the
/// nearest event regardless of distance.
struct SampleLabels {
  std::vector<std::int32_t> positive_event;
  std::vector<std::int32_t> nearest_event;
};

SampleLabels label_stream(std::int64_t frame_count,
                          const std::vector<ContactEvent>& events, int w_p);

/// One sliding-window example. The window covers frames [start, start+w_d)
/// and carries the label of its right-edge sample (the prediction instant).
struct Window {
  std::int64_t start = 0;
  bool contact = false;
  NormalizedPoint position;   // valid iff contact
  std::int32_t event_id = -1;  // owning event (positive) or nearest event
};

std::vector<Window> make_windows(const SampleLabels& labels,
                                 const std::vector<ContactEvent>& events,
                                 std::int64_t frame_count, int w_d, int stride);

/// Reduce dataset size deterministically: keep at most max_positive_per_event
/// positive windows per event (evenly spaced across the event's span) and
/// subsample negatives to negative_ratio * positives.
std::vector<Window> subsample_windows(const std::vector<Window>& windows,
                                      int max_positive_per_event,
                                      double negative_ratio, std::uint64_t seed);

/// Per-channel affine normalization x' = (x - baseline) / scale.
struct Normalization {
  Eigen::VectorXd baseline;  // nominal wavelengths
  Eigen::VectorXd scale;     // per-channel range over the calibration scan

  void apply(Eigen::Ref<FrameMatrix> frames) const;
  void invert(Eigen::Ref<FrameMatrix> frames) const;
};

/// baseline = nominal wavelengths, scale = per-channel max - min over the
/// scan. Channels with no dynamic range get scale clamped to machine
/// epsilon (with a warning on stderr).
Normalization compute_normalization(const Stream& stream, const FbgLayout& layout);

struct SplitWindows {
  std::vector<Window> train;
  std::vector<Window> test;
};

/// Event-level split: every window's owning event lands entirely on one
/// side, so no contact's samples straddle the split. Requires >= 2 events.
SplitWindows split_windows(const std::vector<Window>& windows,
                           std::int64_t event_count, double test_fraction,
                           std::uint64_t seed);

/// Assemble an nn dataset over the (un-normalized) stream; normalization is
/// applied lazily at gather time.
nn::Dataset make_dataset(const Stream& stream, const Normalization& norm,
                         std::span<const Window> windows, int w_d);

}  // namespace taclab
