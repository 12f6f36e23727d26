#pragma once

#include <deque>
#include <memory>
#include <optional>

#include "mloam/odometry.h"

// Tightly coupled sliding-window odometry over the primary-sensor poses and
// the extrinsics, with per-LiDAR local maps in the pivot frame, online
// calibration refinement, convergence monitoring and pivot marginalization.

namespace mloam {

struct LocalMap {
  Cloud edges;
  Cloud planars;
  KdTree3 edge_tree;
  KdTree3 planar_tree;
};

struct WindowOptions {
  int window = 4;  // N; the window holds N+1 poses
  int pivot = 2;   // p (1-based); poses x_1..x_p stay fixed
  double lambda_calib = 70.0;
  int calib_candidates = 25;  // |L| must exceed this to terminate
  double local_leaf = 0.2;
  Mat3 point_cov = 0.05 * 0.05 * Mat3::Identity();
  int outer_iterations = 2;
  int max_iterations = 30;
  double remap_threshold = 10.0;
  bool use_prior = true;
  Kernel kernel = Kernel::OpenMP;
};

enum class CalibStatus { kAwaitingInit, kOngoing, kConverged };

struct WindowStep {
  Pose latest_pose;             // newest window pose in the world frame
  bool solved = false;
  std::vector<double> lambda_ext;  // degeneracy factor per auxiliary LiDAR
};

class WindowEstimator {
 public:
  WindowEstimator(int num_lidars, const WindowOptions& opts);

  /// Hand-eye results start the refinement phase.
  void set_initial_extrinsics(const std::vector<Pose>& extrinsics);

  /// Installs externally supplied extrinsics as already converged (single
  /// LiDAR runs, injected-perturbation experiments).
  void freeze_extrinsics(const std::vector<Pose>& extrinsics,
                         const std::vector<Mat6>& cov);

  /// Feed one frame: per-LiDAR undistorted features plus the frontend's
  /// primary relative motion (constant-velocity prediction).
  WindowStep push_frame(const std::vector<FeatureCloud>& features,
                        const Pose& primary_rel);

  int num_lidars() const { return num_lidars_; }
  CalibStatus calib_status() const { return status_; }
  bool fully_converged() const { return status_ == CalibStatus::kConverged; }
  const std::vector<Pose>& extrinsics() const { return extrinsics_; }
  /// Calibration covariance (local tangent at the mean), valid once
  /// converged.
  const Mat6& calib_cov(int lidar) const { return calib_cov_[lidar]; }
  const std::vector<Pose>& window_poses() const { return poses_; }

  /// Pivot-frame local map of one LiDAR, built from the first N frames.
  LocalMap build_local_map(int lidar) const;

 private:
  void solve_window(WindowStep* step);
  void slide_and_marginalize(const State& solution,
                             const Eigen::MatrixXd& information,
                             const Eigen::VectorXd& gradient);

  int num_lidars_;
  WindowOptions opts_;
  CalibStatus status_;
  std::vector<Pose> extrinsics_;
  std::vector<bool> ext_converged_;
  std::vector<std::vector<Pose>> calib_candidates_;
  std::vector<Mat6> calib_cov_;

  std::deque<std::vector<FeatureCloud>> frames_;  // per frame, per LiDAR
  std::vector<Pose> poses_;                       // window poses, world frame

  // Marginalization prior over [pose_1.. pose_N, extrinsics] of the next
  // window (block layout of solve_window).
  struct WindowPrior {
    Eigen::MatrixXd J;
    Eigen::VectorXd r;
    std::vector<Pose> lin_poses;  // linearization for pose slots 1..N
    std::vector<Pose> lin_exts;
  };
  std::optional<WindowPrior> prior_;
};

/// Deterministic voxel-grid downsampling (centroid per occupied cell,
/// cells visited in sorted key order).
Cloud voxel_downsample(const Cloud& cloud, double leaf);

/// Local map from per-frame features: frame k is transformed by
/// pivot^-1 * pose_k * ext and the merged cloud voxel-downsampled.
LocalMap build_local_map_from(const std::vector<const FeatureCloud*>& frames,
                              const std::vector<Pose>& poses,
                              const Pose& pivot_pose, const Pose& ext,
                              double leaf);

/// Sample mean of poses (translation average, rotation via the dominant
/// eigenvector of the accumulated qq^T matrix) and the sample covariance of
/// the local-tangent residuals about it.
Pose average_poses(const std::vector<Pose>& poses, Mat6* cov);

}  // namespace mloam
