#pragma once

#include <functional>
#include <optional>

#include "mloam/calib.h"
#include "mloam/config.h"
#include "mloam/mapping.h"
#include "mloam/metrics.h"
#include "mloam/sim.h"
#include "mloam/window.h"

// End-to-end orchestration: scenario presets, the three-phase pipeline
// (extrinsic initialization, odometry with refinement, pure odometry and
// mapping) and the bundled outputs the CLI and the acceptance suite consume.

namespace mloam {

struct Scenario {
  Environment env;
  Rig rig;
  TrajectorySpec traj;
  int frames = 0;
  double frame_period = 0.1;
};

/// Presets: sr-room (rich 6-DoF wander), sr-planar (yaw-only motion),
/// corridor (degenerate geometry, 6-DoF wobble), corridor-room (mixed),
/// fast-room (frame-skipped sr-room). The seed perturbs the trajectory.
Scenario make_scenario(const std::string& preset, const Config& cfg,
                       uint64_t seed, int lidars);

struct RunOptions {
  bool uncertainty_aware = true;
  bool calibrate = true;  // run phases 1-2; otherwise extrinsics are given
  std::optional<std::vector<Pose>> fixed_extrinsics;
  bool calibrate_only = false;
  uint64_t seed = 0;
  Kernel kernel = Kernel::OpenMP;
};

struct FrameLog {
  int frame = 0;
  int phase = 1;
  double sigma_min2 = 0.0;  // rotation-initialization singular value
  double lambda = 0.0;      // degeneracy factor of the first aux extrinsic
};

struct RunResult {
  Trajectory frame_to_frame;  // accumulated single-LiDAR scan-to-scan motion
  Trajectory odometry;        // sliding-window estimate
  Trajectory mapping;         // map-refined estimate
  Trajectory ground_truth;
  std::vector<Pose> extrinsics;
  std::vector<Pose> gt_extrinsics;
  std::vector<Mat6> calib_cov;
  bool rotation_initialized = false;
  bool converged = false;
  std::vector<FrameLog> logs;
  GlobalMap map;
};

/// Frame supplier: either an in-memory scenario or a directory written by
/// the simulate subcommand.
struct FrameSource {
  Manifest manifest;
  std::function<std::vector<Scan>(int)> load;
  Trajectory ground_truth;
};

FrameSource source_from_scenario(const Scenario& scenario, uint64_t seed,
                                 Kernel kernel = Kernel::OpenMP);
FrameSource source_from_directory(const std::string& dir);

RunResult run_pipeline(const FrameSource& source, const Config& cfg,
                       const RunOptions& opts);
RunResult run_pipeline(const Scenario& scenario, const Config& cfg,
                       const RunOptions& opts);

/// Average MME of merged two-LiDAR clouds over a few consecutive frames,
/// with the auxiliary cloud placed by the given extrinsic.
double merged_cloud_mme(const Scenario& scenario, const Pose& extrinsic,
                        int first_frame, int frames, double radius,
                        uint64_t seed);

/// rx ry rz (deg, intrinsic x-y-z) and tx ty tz applied on top of a pose.
Pose apply_perturbation(const Pose& pose, const Vec3& rot_deg,
                        const Vec3& trans);

}  // namespace mloam
