#include "uavtraj/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <istream>
#include <json.hpp>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

namespace uavtraj::datagen {
namespace {

using Kind = DatagenError::Kind;
using json = nlohmann::ordered_json;

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kReprojectionTolerancePx = 1e-6;

void require(bool condition, const std::string& message) {
  if (!condition) throw DatagenError(Kind::kInvalidConfig, message);
}

bool valid_range(const Range& r) { return std::isfinite(r.min) && std::isfinite(r.max) && r.min <= r.max; }

double uniform(Rng& rng, const Range& range) {
  return std::uniform_real_distribution<double>(range.min, range.max)(rng);
}

std::vector<double> step_lengths(const std::vector<Pixel>& pixels) {
  std::vector<double> steps;
  for (std::size_t i = 0; i + 1 < pixels.size(); ++i)
    steps.push_back(std::hypot(pixels[i + 1].u - pixels[i].u, pixels[i + 1].v - pixels[i].v));
  return steps;
}

TrackOutcome reject(RejectReason reason, std::string detail) {
  TrackOutcome outcome;
  outcome.reason = reason;
  outcome.detail = std::move(detail);
  return outcome;
}

json pixels_to_json(const std::vector<Pixel>& pixels) {
  json out = json::array();
  for (const auto& p : pixels) out.push_back({p.u, p.v});
  return out;
}

std::vector<Pixel> pixels_from_json(const json& array) {
  std::vector<Pixel> out;
  out.reserve(array.size());
  for (const auto& p : array) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

const char* to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::kOutOfBounds: return "out-of-bounds";
    case RejectReason::kBehindCamera: return "behind-camera";
    case RejectReason::kStepTooSmall: return "step-too-small";
    case RejectReason::kStepTooLarge: return "step-too-large";
    case RejectReason::kSolverFailure: return "solver-failure";
    case RejectReason::kTooShort: return "too-short";
  }
  return "unknown";
}

void GenConfig::validate() const {
  require(valid_range(height_m) && height_m.min > 0.0, "height range must be positive and ordered");
  require(valid_range(inclination_deg), "inclination range must be ordered");
  require(d_near > 0.0 && d_near < d_far, "need 0 < d_near < d_far");
  require(waypoints_min >= 2 && waypoints_min <= waypoints_max, "waypoint count range must be ordered and >= 2");
  require(valid_range(speed_mps) && speed_mps.min > 0.0, "speed range must be positive and ordered");
  require(valid_range(fps) && fps.min > 0.0, "frame-rate range must be positive and ordered");
  require(count > 0, "count must be positive");
  require(noise_sigma_px >= 0.0 && std::isfinite(noise_sigma_px), "noise sigma must be >= 0");
  require(min_step_px >= 0.0 && min_step_px <= max_step_px, "step bounds must satisfy 0 <= min <= max");
  require(min_track_frames >= 2, "min_track_frames must be >= 2");
  require(min_waypoint_spacing_m >= 0.0, "waypoint spacing must be >= 0");
  require(waypoint_draw_budget > 0, "waypoint draw budget must be positive");
}

GenConfig config_from(const KeyValueFile& file) {
  GenConfig c;
  c.intrinsics.focal_px = file.get_double("focal_px", c.intrinsics.focal_px);
  c.intrinsics.principal_x = file.get_double("principal_x", c.intrinsics.principal_x);
  c.intrinsics.principal_y = file.get_double("principal_y", c.intrinsics.principal_y);
  c.intrinsics.width = static_cast<int>(file.get_int("image_width", c.intrinsics.width));
  c.intrinsics.height = static_cast<int>(file.get_int("image_height", c.intrinsics.height));
  c.height_m.min = file.get_double("height_min_m", c.height_m.min);
  c.height_m.max = file.get_double("height_max_m", c.height_m.max);
  c.inclination_deg.min = file.get_double("inclination_min_deg", c.inclination_deg.min);
  c.inclination_deg.max = file.get_double("inclination_max_deg", c.inclination_deg.max);
  c.d_near = file.get_double("d_near_m", c.d_near);
  c.d_far = file.get_double("d_far_m", c.d_far);
  c.waypoints_min = static_cast<int>(file.get_int("waypoints_min", c.waypoints_min));
  c.waypoints_max = static_cast<int>(file.get_int("waypoints_max", c.waypoints_max));
  c.speed_mps.min = file.get_double("speed_min_mps", c.speed_mps.min);
  c.speed_mps.max = file.get_double("speed_max_mps", c.speed_mps.max);
  c.fps.min = file.get_double("fps_min", c.fps.min);
  c.fps.max = file.get_double("fps_max", c.fps.max);
  c.count = static_cast<std::size_t>(file.get_u64("count", c.count));
  c.noise_sigma_px = file.get_double("noise_sigma_px", c.noise_sigma_px);
  c.min_step_px = file.get_double("min_step_px", c.min_step_px);
  c.max_step_px = file.get_double("max_step_px", c.max_step_px);
  c.min_track_frames = static_cast<std::size_t>(file.get_u64("min_track_frames", c.min_track_frames));
  c.min_waypoint_spacing_m = file.get_double("min_waypoint_spacing_m", c.min_waypoint_spacing_m);
  c.waypoint_draw_budget = static_cast<std::size_t>(file.get_u64("waypoint_draw_budget", c.waypoint_draw_budget));
  c.seed = file.get_u64("seed", c.seed);
  c.solver.order = static_cast<int>(file.get_int("poly_order", c.solver.order));
  c.solver.position_derivative = static_cast<int>(file.get_int("position_derivative", c.solver.position_derivative));
  c.solver.yaw_derivative = static_cast<int>(file.get_int("yaw_derivative", c.solver.yaw_derivative));
  c.solver.position_weight = file.get_double("position_weight", c.solver.position_weight);
  c.solver.yaw_weight = file.get_double("yaw_weight", c.solver.yaw_weight);
  file.reject_unknown();
  c.validate();
  return c;
}

GenConfig load_config(const std::string& path) { return config_from(KeyValueFile::load(path)); }

std::string serialize_config(const GenConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "focal_px = " << c.intrinsics.focal_px << '\n'
      << "principal_x = " << c.intrinsics.principal_x << '\n'
      << "principal_y = " << c.intrinsics.principal_y << '\n'
      << "image_width = " << c.intrinsics.width << '\n'
      << "image_height = " << c.intrinsics.height << '\n'
      << "height_min_m = " << c.height_m.min << '\n'
      << "height_max_m = " << c.height_m.max << '\n'
      << "inclination_min_deg = " << c.inclination_deg.min << '\n'
      << "inclination_max_deg = " << c.inclination_deg.max << '\n'
      << "d_near_m = " << c.d_near << '\n'
      << "d_far_m = " << c.d_far << '\n'
      << "waypoints_min = " << c.waypoints_min << '\n'
      << "waypoints_max = " << c.waypoints_max << '\n'
      << "speed_min_mps = " << c.speed_mps.min << '\n'
      << "speed_max_mps = " << c.speed_mps.max << '\n'
      << "fps_min = " << c.fps.min << '\n'
      << "fps_max = " << c.fps.max << '\n'
      << "count = " << c.count << '\n'
      << "noise_sigma_px = " << c.noise_sigma_px << '\n'
      << "min_step_px = " << c.min_step_px << '\n'
      << "max_step_px = " << c.max_step_px << '\n'
      << "min_track_frames = " << c.min_track_frames << '\n'
      << "min_waypoint_spacing_m = " << c.min_waypoint_spacing_m << '\n'
      << "waypoint_draw_budget = " << c.waypoint_draw_budget << '\n'
      << "poly_order = " << c.solver.order << '\n'
      << "position_derivative = " << c.solver.position_derivative << '\n'
      << "yaw_derivative = " << c.solver.yaw_derivative << '\n'
      << "position_weight = " << c.solver.position_weight << '\n'
      << "yaw_weight = " << c.solver.yaw_weight << '\n';
  return out.str();
}

std::uint64_t config_hash(const GenConfig& config) { return fnv1a64(serialize_config(config)); }

Rng stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

Scene sample_scene(Rng& rng, const GenConfig& config) {
  const double height = uniform(rng, config.height_m);
  const double inclination = uniform(rng, config.inclination_deg) * kDegToRad;
  const double fps = uniform(rng, config.fps);
  const double speed = uniform(rng, config.speed_mps);
  const int count = std::uniform_int_distribution<int>(config.waypoints_min, config.waypoints_max)(rng);
  return Scene{camera::CameraRig(config.intrinsics, {height, inclination}), fps, speed, count};
}

std::vector<polysnap::Waypoint> sample_waypoints(Rng& rng, const camera::Frustum& frustum, int count,
                                                 double min_spacing_m, std::size_t draw_budget) {
  if (count < 2) throw DatagenError(Kind::kInvalidConfig, "need at least two waypoints");
  const auto box = frustum.bounding_box();
  std::uniform_real_distribution<double> ux(box.lower.x(), box.upper.x());
  std::uniform_real_distribution<double> uy(box.lower.y(), box.upper.y());
  std::uniform_real_distribution<double> uz(box.lower.z(), box.upper.z());

  std::vector<polysnap::Waypoint> waypoints;
  std::size_t draws = 0;
  while (waypoints.size() < static_cast<std::size_t>(count)) {
    if (++draws > draw_budget)
      throw DatagenError(Kind::kRejectionBudgetExceeded,
                         "waypoint rejection sampling exceeded " + std::to_string(draw_budget) + " draws");
    const double x = ux(rng);
    const double y = uy(rng);
    const double z = uz(rng);
    const Eigen::Vector3d p(x, y, z);
    if (!frustum.contains(p)) continue;
    if (!waypoints.empty() && (p - waypoints.back().position).norm() < min_spacing_m) continue;
    waypoints.push_back({p, 0.0});
  }
  return waypoints;
}

std::vector<double> sample_times(const polysnap::SegmentedTimeline& timeline, double fps) {
  const double span = timeline.end() - timeline.start();
  const auto last = static_cast<std::size_t>(std::floor(span * fps + 1e-9));
  std::vector<double> times(last + 1);
  for (std::size_t k = 0; k <= last; ++k)
    times[k] = std::min(timeline.start() + static_cast<double>(k) / fps, timeline.end());
  return times;
}

TrackOutcome project_trajectory(const polysnap::PiecewiseTrajectory& trajectory, const camera::CameraRig& rig,
                                double fps, const GenConfig& config) {
  const camera::Frustum frustum = camera::make_frustum(rig, config.d_near, config.d_far);
  const std::vector<double> times = sample_times(trajectory.timeline(), fps);

  std::vector<Pixel> pixels;
  std::vector<Eigen::Vector3d> world;
  pixels.reserve(times.size());
  world.reserve(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    const Eigen::Vector3d p = trajectory.evaluate(times[k], 0).head<3>();
    const Eigen::Vector3d cam = rig.to_camera(p);
    if (!(cam.z() > 1e-9)) return reject(RejectReason::kBehindCamera, "sample " + std::to_string(k));
    if (!frustum.contains(p)) return reject(RejectReason::kOutOfBounds, "sample " + std::to_string(k));
    const Pixel px = rig.project_camera(cam);
    if (!rig.in_image(px)) return reject(RejectReason::kOutOfBounds, "sample " + std::to_string(k));
    pixels.push_back(px);
    world.push_back(p);
  }

  const std::vector<double> steps = step_lengths(pixels);
  std::size_t first = 0;
  while (first < steps.size() && steps[first] < config.min_step_px) ++first;
  std::size_t last = pixels.size() - 1;
  while (last > first && steps[last - 1] < config.min_step_px) --last;
  for (std::size_t i = first; i < last; ++i) {
    if (steps[i] < config.min_step_px) return reject(RejectReason::kStepTooSmall, "step " + std::to_string(i));
    if (steps[i] > config.max_step_px) return reject(RejectReason::kStepTooLarge, "step " + std::to_string(i));
  }
  const std::size_t kept = last - first + 1;
  if (kept < config.min_track_frames)
    return reject(RejectReason::kTooShort, std::to_string(kept) + " frames");

  ImageTrack track;
  track.fps = fps;
  track.camera = rig;
  track.points_px.assign(pixels.begin() + first, pixels.begin() + last + 1);
  track.points_world.assign(world.begin() + first, world.begin() + last + 1);
  track.first_frame = first;
  track.duration_s = trajectory.timeline().end() - trajectory.timeline().start();
  TrackOutcome outcome;
  outcome.track = std::move(track);
  return outcome;
}

TrackOutcome generate_track(Rng& rng, const GenConfig& config) {
  const Scene scene = sample_scene(rng, config);
  const camera::Frustum frustum = camera::make_frustum(scene.rig, config.d_near, config.d_far);
  const auto waypoints = sample_waypoints(rng, frustum, scene.waypoint_count, config.min_waypoint_spacing_m,
                                          config.waypoint_draw_budget);
  try {
    const auto timeline = polysnap::allocate_times(waypoints, scene.speed_mps);
    const auto trajectory = polysnap::solve_min_snap(waypoints, timeline, config.solver);
    return project_trajectory(trajectory, scene.rig, scene.fps, config);
  } catch (const polysnap::PolysnapError& e) {
    return reject(RejectReason::kSolverFailure, e.what());
  }
}

polysnap::QpSystem attempt_qp(const GenConfig& config, std::uint64_t attempt) {
  Rng rng = stream_rng(config.seed, attempt);
  const Scene scene = sample_scene(rng, config);
  const camera::Frustum frustum = camera::make_frustum(scene.rig, config.d_near, config.d_far);
  const auto waypoints = sample_waypoints(rng, frustum, scene.waypoint_count, config.min_waypoint_spacing_m,
                                          config.waypoint_draw_budget);
  return polysnap::build_qp(waypoints, polysnap::allocate_times(waypoints, scene.speed_mps), config.solver);
}

std::optional<RejectReason> validate_track(const ImageTrack& track, const GenConfig& config) {
  if (track.points_px.size() < config.min_track_frames || track.points_world.size() != track.points_px.size())
    return RejectReason::kTooShort;
  const camera::Frustum frustum = camera::make_frustum(track.camera, config.d_near, config.d_far);
  for (std::size_t i = 0; i < track.size(); ++i) {
    const auto& p = track.points_world[i];
    const Eigen::Vector3d cam = track.camera.to_camera(p);
    if (!(cam.z() > 1e-9)) return RejectReason::kBehindCamera;
    if (!frustum.contains(p)) return RejectReason::kOutOfBounds;
    const Pixel px = track.camera.project_camera(cam);
    if (!track.camera.in_image(track.points_px[i]) || !std::isfinite(track.points_px[i].u) ||
        !std::isfinite(track.points_px[i].v))
      return RejectReason::kOutOfBounds;
    if (std::abs(px.u - track.points_px[i].u) > kReprojectionTolerancePx ||
        std::abs(px.v - track.points_px[i].v) > kReprojectionTolerancePx)
      return RejectReason::kOutOfBounds;
  }
  for (const double step : step_lengths(track.points_px)) {
    if (step < config.min_step_px) return RejectReason::kStepTooSmall;
    if (step > config.max_step_px) return RejectReason::kStepTooLarge;
  }
  return std::nullopt;
}

ImageTrack add_observation_noise(ImageTrack track, double sigma_px, Rng& rng) {
  if (!(sigma_px >= 0.0)) throw DatagenError(Kind::kInvalidConfig, "noise sigma must be >= 0");
  track.noisy_px = track.points_px;
  if (sigma_px == 0.0) return track;
  std::normal_distribution<double> noise(0.0, sigma_px);
  for (auto& p : track.noisy_px) {
    p.u += noise(rng);
    p.v += noise(rng);
  }
  return track;
}

Dataset generate_dataset(const GenConfig& config, const GenerateOptions& options) {
  config.validate();
  const std::uint64_t hash = config_hash(config);
  const unsigned threads = std::max(1u, options.threads);

  const auto run_attempt = [&](std::uint64_t attempt) {
    Rng rng = stream_rng(config.seed, attempt);
    TrackOutcome outcome = generate_track(rng, config);
    if (outcome.track && config.noise_sigma_px > 0.0) {
      Rng noise_rng = stream_rng(config.seed, attempt, 1);
      outcome.track = add_observation_noise(std::move(*outcome.track), config.noise_sigma_px, noise_rng);
    }
    return outcome;
  };

  Dataset dataset;
  std::uint64_t next_attempt = 0;
  while (dataset.tracks.size() < config.count) {
    const std::size_t remaining = config.count - dataset.tracks.size();
    const std::size_t round = std::clamp<std::size_t>(4 * remaining, 8, std::max<std::size_t>(8, options.round_size));
    std::vector<TrackOutcome> results(round);

    if (threads == 1) {
      for (std::size_t i = 0; i < round; ++i) results[i] = run_attempt(next_attempt + i);
    } else {
      std::atomic<std::size_t> cursor{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
          for (std::size_t i = cursor++; i < round; i = cursor++) {
            try {
              results[i] = run_attempt(next_attempt + i);
            } catch (...) {
              const std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
      for (auto& worker : pool) worker.join();
      if (failure) std::rethrow_exception(failure);
    }

    for (std::size_t i = 0; i < round && dataset.tracks.size() < config.count; ++i) {
      const std::uint64_t attempt = next_attempt + i;
      ++dataset.attempts;
      if (results[i].track) {
        ImageTrack& track = *results[i].track;
        track.id = dataset.tracks.size();
        track.attempt = attempt;
        track.seed = config.seed;
        track.config_hash = hash;
        dataset.tracks.push_back(std::move(track));
      } else {
        ++dataset.rejections[static_cast<std::size_t>(results[i].reason)];
        if (options.keep_rejection_log)
          dataset.rejection_log.push_back({attempt, results[i].reason, results[i].detail});
      }
    }
    next_attempt += round;

    if (dataset.attempts >= 1000 && dataset.tracks.size() * 1000 < dataset.attempts)
      throw DatagenError(Kind::kRejectionBudgetExceeded,
                         "acceptance rate below 0.1% after " + std::to_string(dataset.attempts) + " attempts");
  }
  return dataset;
}

std::string track_to_json(const ImageTrack& track) {
  const auto& in = track.camera.intrinsics();
  const auto& ex = track.camera.extrinsics();
  json j;
  j["id"] = track.id;
  j["fps"] = track.fps;
  j["camera"] = {{"f", in.focal_px}, {"px", in.principal_x},   {"py", in.principal_y},
                 {"W", in.width},    {"H", in.height},         {"height", ex.height_m},
                 {"inclination", ex.inclination_rad}};
  j["points_px"] = pixels_to_json(track.points_px);
  json world = json::array();
  for (const auto& p : track.points_world) world.push_back({p.x(), p.y(), p.z()});
  j["points_world"] = std::move(world);
  if (!track.noisy_px.empty()) j["points_px_noisy"] = pixels_to_json(track.noisy_px);
  j["seed"] = track.seed;
  j["config_hash"] = track.config_hash;
  j["attempt"] = track.attempt;
  j["first_frame"] = track.first_frame;
  j["duration_s"] = track.duration_s;
  return j.dump();
}

ImageTrack track_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    ImageTrack track;
    track.id = j.at("id").get<std::uint64_t>();
    track.fps = j.at("fps").get<double>();
    const auto& c = j.at("camera");
    camera::Intrinsics in{c.at("f").get<double>(), c.at("px").get<double>(), c.at("py").get<double>(),
                          c.at("W").get<int>(), c.at("H").get<int>()};
    camera::Extrinsics ex{c.at("height").get<double>(), c.at("inclination").get<double>()};
    track.camera = camera::CameraRig(in, ex);
    track.points_px = pixels_from_json(j.at("points_px"));
    for (const auto& p : j.at("points_world"))
      track.points_world.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    if (j.contains("points_px_noisy")) track.noisy_px = pixels_from_json(j.at("points_px_noisy"));
    track.seed = j.at("seed").get<std::uint64_t>();
    track.config_hash = j.at("config_hash").get<std::uint64_t>();
    track.attempt = j.value("attempt", std::uint64_t{0});
    track.first_frame = j.value("first_frame", std::size_t{0});
    track.duration_s = j.value("duration_s", 0.0);
    if (track.points_px.size() < 2) throw DatagenError(Kind::kFormat, "track needs at least two points");
    if (!track.noisy_px.empty() && track.noisy_px.size() != track.points_px.size())
      throw DatagenError(Kind::kFormat, "noisy and clean point counts differ");
    return track;
  } catch (const nlohmann::json::exception& e) {
    throw DatagenError(Kind::kFormat, std::string("malformed track record: ") + e.what());
  } catch (const camera::CameraError& e) {
    throw DatagenError(Kind::kFormat, std::string("invalid camera in track record: ") + e.what());
  }
}

void write_tracks(std::ostream& out, const std::vector<ImageTrack>& tracks) {
  for (const auto& track : tracks) out << track_to_json(track) << '\n';
}

std::vector<ImageTrack> read_tracks(std::istream& in) {
  std::vector<ImageTrack> tracks;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      tracks.push_back(track_from_json(line));
    } catch (const DatagenError& e) {
      throw DatagenError(Kind::kFormat, "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return tracks;
}

std::string dataset_metadata(const GenConfig& config, const Dataset& dataset) {
  json meta;
  meta["format"] = "uavtraj-dataset";
  meta["version"] = 1;
  meta["seed"] = config.seed;
  meta["config_hash"] = config_hash(config);
  json cfg;
  std::istringstream lines(serialize_config(config));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  meta["config"] = std::move(cfg);
  meta["conventions"] = {
      {"world_frame", "x right, y forward, z up; camera center at (0, 0, height)"},
      {"camera_frame", "X right, Y down (image v), Z optical axis; inclination pitches Z up from horizontal"},
      {"coefficient_convention",
       "order n polynomials with n+1 coefficients per segment and channel over normalized time tau in [0,1]; "
       "decision vector channel-major (x, y, z, yaw)"},
      {"boundary_conditions", "rest-to-rest; continuity of derivatives 1..k-1 at interior knots"},
      {"trimming", "leading and trailing samples with pixel steps below min_step_px are dropped"},
      {"noise", "points_px is noiseless ground truth; points_px_noisy adds i.i.d. N(0, sigma^2) per axis"}};
  meta["tracks"] = dataset.tracks.size();
  meta["attempts"] = dataset.attempts;
  json rejections;
  for (std::size_t r = 0; r < kRejectReasonCount; ++r)
    rejections[to_string(static_cast<RejectReason>(r))] = dataset.rejections[r];
  meta["rejections"] = std::move(rejections);
  return meta.dump(2);
}

}  // namespace uavtraj::datagen
