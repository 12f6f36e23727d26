#pragma once

#include <string>

#include "mloam/se3.h"

namespace mloam {

/// Every tunable in one place, loadable from a `key value` text file
/// (one pair per line, '#' comments, '=' optional). Unknown keys are
/// rejected; missing keys keep the defaults below.
struct Config {
  // Calibration and window thresholds.
  double sigma_rot = 0.25;        // sigma_min2 gate for rotation init
  double lambda_calib = 70.0;     // degeneracy-factor gate
  int calib_candidates = 25;      // candidate count to terminate
  int window = 4;                 // N
  int pivot = 2;                  // p
  double trace_gate_cm2 = 100.0;  // w
  double alpha = 1.0;

  // Sensor and simulator defaults.
  double noise_sd = 0.05;
  int beams = 16;
  double horiz_res_deg = 1.0;
  double scan_period = 0.1;
  double max_range = 60.0;

  // Solver.
  double huber_delta = 1.0;
  double lm_damping = 1e-4;
  int odom_iterations = 30;
  int map_iterations = 60;
  double remap_threshold = 10.0;

  // Hand-eye initialization.
  int queue_capacity = 300;
  int min_hand_eye_pairs = 30;
  double hand_eye_huber_deg = 5.0;
  double planar_tz_threshold = 0.02;

  // Feature extraction.
  double curvature_threshold = 0.1;
  int curvature_neighbors = 5;
  int sectors = 6;
  int max_sharp_per_sector = 2;
  int max_edge_per_sector = 20;
  int max_flat_per_sector = 4;
  int planar_stride = 2;
  int min_cluster_size = 30;
  double segment_angle_deg = 60.0;

  // Matching.
  double nn_match_dist = 1.0;
  double plane_inlier_dist = 0.2;
  int map_neighbors = 5;
  double map_match_radius = 1.0;
  double edge_eigen_ratio = 3.0;

  // Maps.
  double local_leaf = 0.2;
  double map_leaf = 0.4;
  int map_every = 2;  // mapping rate = odometry rate / map_every

  // Extrinsic covariance fallback when no calibration ran (injection runs):
  // per-axis standard deviations.
  double default_calib_sd_rot_deg = 0.3;
  double default_calib_sd_trans = 0.01;

  // Evaluation.
  double mme_radius = 0.3;
  std::string ate_alignment = "se3";  // or "yaw"
  std::string rpe_distances = "5,10,15,20";

  static Config load(const std::string& path);
  void set(const std::string& key, const std::string& value);
};

}  // namespace mloam
