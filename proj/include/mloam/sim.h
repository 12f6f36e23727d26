#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mloam/parallel.h"
#include "mloam/se3.h"

// Synthetic multi-LiDAR scan generator. Rays are fired column-major
// (azimuth is the outer loop) with firing times increasing linearly over one
// scan period, which reproduces the rolling-shutter skew of a spinning
// LiDAR. Each emitted point is expressed in the sensor frame at its own
// firing time and carries the firing-time fraction tau in (0, 1].

namespace mloam {

struct PlanePatch {
  Vec3 corner;   // one rectangle corner
  Vec3 edge_u;   // first edge vector (full length)
  Vec3 edge_v;   // second edge vector, orthogonal to edge_u
  Vec3 normal;   // unit outward normal
};

struct Cylinder {
  Vec3 base;      // center of the bottom disc; axis is +z
  double radius;
  double height;
};

struct Environment {
  std::vector<PlanePatch> patches;
  std::vector<Cylinder> cylinders;

  /// Range of the nearest intersection along o + s*d, or a negative value
  /// when nothing is hit before max_range.
  double cast(const Vec3& o, const Vec3& d, double max_range) const;
};

PlanePatch make_patch(const Vec3& corner, const Vec3& edge_u,
                      const Vec3& edge_v);

/// Closed axis-aligned box [0,size] shifted so that its floor center sits at
/// the origin; all six faces.
Environment make_room(double sx, double sy, double sz);
/// Room plus interior full-height cylinders.
Environment make_room_with_cylinders(double sx, double sy, double sz);
/// Two parallel walls, floor and ceiling along x: nothing constrains motion
/// along the corridor axis.
Environment make_corridor(double length, double width, double height);

struct LidarModel {
  Pose extrinsic;               // T^b_l, primary LiDAR must be identity
  int beams = 16;
  double vfov_min_deg = -15.0;
  double vfov_max_deg = 15.0;
  double horiz_res_deg = 0.2;
  double scan_period = 0.1;     // seconds
  Vec3 noise_sd = Vec3::Constant(0.05);  // per-axis, sensor frame
  double max_range = 60.0;
};

struct Rig {
  std::vector<LidarModel> lidars;
};

/// Two-LiDAR rig mirroring the simulated-robot setup: the auxiliary LiDAR
/// sits at rotation (40, 0, 0) deg (intrinsic x-y-z) and translation
/// (0, -0.477, -0.220) m from the primary.
Rig make_sr_rig(double horiz_res_deg = 1.0, double noise_sd = 0.05);

struct TrajectorySpec {
  std::vector<double> times;   // strictly increasing
  std::vector<Pose> waypoints;

  /// Pose at time t; segments interpolate linearly in the tangent of the
  /// relative motion (constant-twist screws).
  Pose at(double t) const;
};

struct ScanPoint {
  float x, y, z;
  float intensity;  // ring index
  float tau;        // firing-time fraction in (0, 1]
};

struct Scan {
  std::vector<ScanPoint> points;
  int lidar = 0;
  int frame = 0;
  double stamp = 0.0;  // start-of-scan time; the frame reference
};

/// Ray-cast ranges for one LiDAR scan starting at time t0. Slot layout is
/// col * beams + ring; misses are negative. The OpenMP and serial kernels
/// produce identical output.
void render_ranges(const Environment& env, const LidarModel& lidar,
                   const TrajectorySpec& traj, double t0, Kernel kernel,
                   std::vector<double>* ranges);

/// Full per-LiDAR scans for frame k (noise applied serially in ray order;
/// RNG seeded from (seed, frame, lidar)).
std::vector<Scan> simulate_scan(const Environment& env, const Rig& rig,
                                const TrajectorySpec& traj, int frame_k,
                                double frame_period, uint64_t seed,
                                Kernel kernel = Kernel::OpenMP);

/// Ground-truth base pose at the frame reference time (start of scan).
Pose ground_truth(const TrajectorySpec& traj, int frame_k, double frame_period);
std::vector<Pose> ground_truth_extrinsics(const Rig& rig);

// -- Scan and trajectory I/O ------------------------------------------------

void write_scan(const std::string& path, const Scan& scan);
Scan read_scan(const std::string& path);

struct Manifest {
  int num_lidars = 0;
  int num_frames = 0;
  double frame_period = 0.1;
  Rig rig;
  std::vector<double> frame_stamps;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

std::string scan_filename(int frame, int lidar);

}  // namespace mloam
