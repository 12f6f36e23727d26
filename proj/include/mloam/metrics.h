#pragma once

#include <string>
#include <vector>

#include "mloam/se3.h"

// Trajectory I/O (TUM format) and evaluation metrics: EGT, MME, ATE, RPE.

namespace mloam {

struct TrajectoryEntry {
  double stamp = 0.0;
  Pose pose;
};
using Trajectory = std::vector<TrajectoryEntry>;

void write_tum(const std::string& path, const Trajectory& traj);
Trajectory read_tum(const std::string& path);

/// Intrinsic x-y-z Euler angles in degrees <-> rotation matrix; used only
/// for human-readable extrinsic reports.
Mat3 euler_xyz_to_matrix(const Vec3& deg);
Vec3 matrix_to_euler_xyz(const Mat3& R);

/// Error against ground truth: geodesic rotation distance in degrees and
/// Euclidean translation distance in metres.
std::pair<double, double> egt(const Pose& est, const Pose& gt);

struct MmeResult {
  double value = 0.0;
  int used = 0;    // points entering the average
  bool defined = false;
};

/// Mean map entropy: average ln det(2 pi e C) of local sample covariances
/// within `radius`. Points with fewer than five neighbors are skipped.
MmeResult mme(const std::vector<Vec3>& cloud, double radius);

struct AteResult {
  double rmse_t = 0.0;
  double rmse_r_deg = 0.0;
  int pairs = 0;
};

/// ATE after rigid (Umeyama-style, no scale) alignment; yaw_only restricts
/// the alignment rotation to the z axis. Throws when fewer than 10 pairs
/// associate within 10 ms.
AteResult ate(const Trajectory& est, const Trajectory& gt,
              bool yaw_only = false);

struct RpeResult {
  std::vector<double> distances;
  std::vector<double> median_t;       // metres at each distance
  std::vector<double> median_r_deg;
  double overall_median_t_pct = 0.0;  // translation error over distance
};

RpeResult rpe(const Trajectory& est, const Trajectory& gt,
              const std::vector<double>& distances);

}  // namespace mloam
