#pragma once

// Synthetic image-space UAV trajectories: sample a camera and waypoints inside
// its viewing frustum, fly a minimum-snap trajectory through them, and sample
// its projection at the camera frame rate.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "uavtraj/camera.hpp"
#include "uavtraj/keyvalue.hpp"
#include "uavtraj/polysnap.hpp"

namespace uavtraj::datagen {

using camera::Pixel;
using Rng = std::mt19937_64;

class DatagenError : public std::runtime_error {
 public:
  enum class Kind { kInvalidConfig, kRejectionBudgetExceeded, kFormat };
  DatagenError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct GenConfig {
  camera::Intrinsics intrinsics;
  Range height_m{1.0, 2.0};
  Range inclination_deg{10.0, 20.0};
  double d_near = 10.0;
  double d_far = 30.0;
  int waypoints_min = 3;
  int waypoints_max = 7;
  Range speed_mps{1.0, 8.0};
  Range fps{10.0, 20.0};
  std::size_t count = 1000;
  double noise_sigma_px = 1.5;
  double min_step_px = 0.5;
  double max_step_px = 60.0;
  std::size_t min_track_frames = 20;
  double min_waypoint_spacing_m = 0.5;
  std::size_t waypoint_draw_budget = 100000;
  std::uint64_t seed = 0;
  polysnap::SolverConfig solver;

  void validate() const;
};

GenConfig config_from(const KeyValueFile& file);
GenConfig load_config(const std::string& path);
/// Canonical key = value text of every field except the seed.
std::string serialize_config(const GenConfig& config);
std::uint64_t config_hash(const GenConfig& config);

/// Independent stream for (seed, index); `salt` separates sub-streams of one run.
Rng stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0);

struct Scene {
  camera::CameraRig rig;
  double fps = 0.0;
  double speed_mps = 0.0;
  int waypoint_count = 0;
};

Scene sample_scene(Rng& rng, const GenConfig& config);

std::vector<polysnap::Waypoint> sample_waypoints(Rng& rng, const camera::Frustum& frustum, int count,
                                                 double min_spacing_m = 0.5, std::size_t draw_budget = 100000);

/// t_0 + k / fps for k = 0 .. floor((t_m - t_0) * fps), clamped into the timeline.
std::vector<double> sample_times(const polysnap::SegmentedTimeline& timeline, double fps);

struct ImageTrack {
  std::uint64_t id = 0;
  std::uint64_t attempt = 0;
  double fps = 0.0;
  camera::CameraRig camera{camera::Intrinsics{}, camera::Extrinsics{}};
  std::vector<Pixel> points_px;             // noiseless projections (ground truth)
  std::vector<Pixel> noisy_px;              // observations with noise; empty when noiseless
  std::vector<Eigen::Vector3d> points_world;
  std::size_t first_frame = 0;              // index of points_px[0] in the full sample sequence
  double duration_s = 0.0;                  // t_m of the flown trajectory
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  const std::vector<Pixel>& observed() const { return noisy_px.empty() ? points_px : noisy_px; }
  std::size_t size() const { return points_px.size(); }
};

enum class RejectReason { kOutOfBounds, kBehindCamera, kStepTooSmall, kStepTooLarge, kSolverFailure, kTooShort };
inline constexpr std::size_t kRejectReasonCount = 6;
const char* to_string(RejectReason reason);

struct TrackOutcome {
  std::optional<ImageTrack> track;
  RejectReason reason = RejectReason::kSolverFailure;  // meaningful when !track
  std::string detail;
};

/// Sample, check, and trim the projection of a solved trajectory. The leading
/// and trailing rest phases (steps below min_step_px) are trimmed before the
/// interior step bounds and the minimum length are enforced.
TrackOutcome project_trajectory(const polysnap::PiecewiseTrajectory& trajectory, const camera::CameraRig& rig,
                                double fps, const GenConfig& config);

/// One full pipeline run on `rng`.
TrackOutcome generate_track(Rng& rng, const GenConfig& config);

/// Rebuilds the QP solved by dataset attempt `attempt` (same random stream).
polysnap::QpSystem attempt_qp(const GenConfig& config, std::uint64_t attempt);

/// Re-checks every acceptance rule on a stored track; nullopt when it passes.
std::optional<RejectReason> validate_track(const ImageTrack& track, const GenConfig& config);

/// Adds i.i.d. N(0, sigma^2) to u and v; the clean points stay as ground truth.
ImageTrack add_observation_noise(ImageTrack track, double sigma_px, Rng& rng);

struct RejectionLog {
  std::uint64_t attempt = 0;
  RejectReason reason = RejectReason::kSolverFailure;
  std::string detail;
};

struct Dataset {
  std::vector<ImageTrack> tracks;
  std::uint64_t attempts = 0;
  std::array<std::uint64_t, kRejectReasonCount> rejections{};
  std::vector<RejectionLog> rejection_log;  // filled when requested
};

struct GenerateOptions {
  unsigned threads = 1;
  bool keep_rejection_log = false;
  // Attempts evaluated per round; results are consumed in attempt order.
  std::size_t round_size = 256;
};

Dataset generate_dataset(const GenConfig& config, const GenerateOptions& options = {});

/// Line-delimited JSON, one track per line.
void write_tracks(std::ostream& out, const std::vector<ImageTrack>& tracks);
std::vector<ImageTrack> read_tracks(std::istream& in);
std::string track_to_json(const ImageTrack& track);
ImageTrack track_from_json(const std::string& line);

/// Sidecar metadata: configuration, conventions, rejection statistics.
std::string dataset_metadata(const GenConfig& config, const Dataset& dataset);

}  // namespace uavtraj::datagen
