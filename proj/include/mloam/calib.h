#pragma once

#include <vector>

#include "mloam/se3.h"

// Motion-based hand-eye extrinsic initialization. Paired relative motions
// (primary, auxiliary) accumulate in a bounded queue; rotation is recovered
// from the stacked quaternion system prim (x) q = q (x) aux via SVD, and
// translation from the stacked linear system afterwards.

namespace mloam {

struct MotionPair {
  Pose primary;       // relative motion of the primary LiDAR over an interval
  Pose aux;           // relative motion of the auxiliary LiDAR, same interval
  double rot_angle;   // rotation magnitude of the primary motion (eviction key)
};

class MotionConstraintQueue {
 public:
  explicit MotionConstraintQueue(int capacity = 300) : capacity_(capacity) {}

  /// Stores the pair; when full, the smallest-rotation pair is evicted.
  void push(const Pose& primary_motion, const Pose& aux_motion);

  const std::vector<MotionPair>& pairs() const { return pairs_; }
  int size() const { return int(pairs_.size()); }
  int capacity() const { return capacity_; }

  /// Largest |z| translation among stored primary motions; used to flag
  /// planar motion.
  double max_primary_tz() const;

 private:
  int capacity_;
  std::vector<MotionPair> pairs_;
};

/// 4x4 matrices of left/right quaternion multiplication acting on (x,y,z,w)
/// coefficient vectors: Q1(q) p = q (x) p, Q2(q) p = p (x) q.
Eigen::Matrix4d quat_left(const Quat& q);
Eigen::Matrix4d quat_right(const Quat& q);

/// The stacked, Huber-weighted 4K x 4 rotation system evaluated at the given
/// extrinsic estimate.
Eigen::MatrixXd rotation_system(const MotionConstraintQueue& queue,
                                const Quat& estimate, double huber_delta_rad);

struct RotationSolveResult {
  Quat q = Quat::Identity();
  double sigma_min2 = 0.0;
  bool converged = false;
};

/// Closed-form rotation via SVD with internally re-weighted Huber IRLS.
/// Convergence requires the second-smallest singular value to clear
/// sigma_threshold (observability of all three axes).
RotationSolveResult solve_rotation(const MotionConstraintQueue& queue,
                                   const Quat& current_estimate,
                                   double sigma_threshold = 0.25,
                                   double huber_delta_rad = 5.0 * M_PI / 180.0,
                                   int min_pairs = 30);

struct TranslationSolveResult {
  Vec3 t = Vec3::Zero();
  bool ok = false;
  double condition = 0.0;
};

/// Least-squares translation given the solved rotation. With planar motion
/// the z component is unobservable: the z column is removed and t_z = 0.
TranslationSolveResult solve_translation(const MotionConstraintQueue& queue,
                                         const Mat3& rotation, bool planar,
                                         double max_condition = 1e8);

}  // namespace mloam
