#pragma once

#include <string>

#include "mloam/odometry.h"

// Global-map construction and pose refinement with uncertainty propagation,
// trace gating and probabilistic voxel downsampling.
//
// Covariance units: traces are gated in cm^2 (the threshold w = 100 lives in
// that unit; metre-squared traces of realistic LiDAR noise would never
// approach it).

namespace mloam {

struct MapPoint {
  GaussianPoint point;
  double trace_cm2 = 0.0;
};

struct GlobalMap {
  std::vector<MapPoint> edges;
  std::vector<MapPoint> planars;
  KdTree3 edge_tree;
  KdTree3 planar_tree;

  void rebuild_trees();
  size_t size() const { return edges.size() + planars.size(); }
};

struct MappingOptions {
  Mat3 point_noise = 0.05 * 0.05 * Mat3::Identity();  // Z
  double alpha = 1.0;            // extrinsic covariance scale
  double trace_gate_cm2 = 100.0;  // w
  double voxel_leaf = 0.4;
  bool uncertainty_aware = true;
  int outer_iterations = 2;
  int max_iterations = 60;
  double remap_threshold = 10.0;
  Kernel kernel = Kernel::OpenMP;
};

struct MappingStep {
  Pose pose;        // refined x^w_{b_k}
  Mat6 pose_cov;    // local-tangent covariance, Lambda^-1
  bool solved = false;
  int correspondences = 0;
  int inserted = 0;
  int rejected = 0;
};

/// Per-point propagated covariances for a feature cloud pushed through a
/// noisy pose (OpenMP kernel with a serial reference; identical results).
void propagate_point_covariances(const GaussianPose& pose, const Cloud& cloud,
                                 const Mat3& point_noise, Kernel kernel,
                                 std::vector<GaussianPoint>* out);

/// One probabilistic voxel cell: convex trace weights, mean = sum w_i y_i,
/// cov = sum w_i^2 Sigma_i.
GaussianPoint fuse_cell(const std::vector<MapPoint>& pts, double w_gate_cm2);

class Mapper {
 public:
  Mapper(int num_lidars, const MappingOptions& opts);

  void set_extrinsics(const std::vector<Pose>& ext,
                      const std::vector<Mat6>& calib_cov);

  /// Process one keyframe: per-LiDAR undistorted features plus the relative
  /// odometry motion since the previous keyframe.
  MappingStep process(const std::vector<FeatureCloud>& features,
                      const Pose& odom_rel);

  const GlobalMap& map() const { return map_; }
  const Pose& pose() const { return pose_; }
  const Mat6& pose_cov() const { return pose_cov_; }

  void export_text(const std::string& path) const;

 private:
  void insert_features(const std::vector<FeatureCloud>& features);
  void downsample_map();

  int num_lidars_;
  MappingOptions opts_;
  std::vector<Pose> extrinsics_;
  std::vector<Mat6> ext_cov_;  // alpha * calib covariance, local tangent
  GlobalMap map_;
  Pose pose_;
  Mat6 pose_cov_ = Mat6::Zero();
  bool initialized_ = false;
};

}  // namespace mloam
