#pragma once

#include <optional>

#include "mloam/nls.h"
#include "mloam/preprocess.h"

// Frame-to-frame motion estimation and the measurement residuals shared by
// the odometry, sliding-window and mapping estimators.
//
// Residual form: r = (w^T y + d) w with y the transformed point. The full
// transform chain is y = pivot^-1 * mid * ext * p; each slot is either a
// fixed pose or a state block, which covers the frame-to-frame, online
// calibration, pure odometry and mapping cases.

namespace mloam {

/// Point-to-plane residual r_H(x, p, [w,d]) = (w^T (R p + t) + d) w.
Vec3 planar_residual(const Pose& x, const Vec3& p, const Vec3& w, double d);

struct EdgePlanes {
  Vec3 w1;
  double d1;
  Vec3 w2;
  double d2;
};

/// Two planes through the line L: the first with normal along the projection
/// direction from L to the point y, the second perpendicular to it. Empty
/// when y lies on L.
std::optional<EdgePlanes> edge_planes(const Vec3& line_p, const Vec3& line_dir,
                                      const Vec3& y);

/// Edge residual: two stacked planar residuals, planes constructed from the
/// transformed point x * p. Its norm equals the point-to-line distance.
Vec6 edge_residual(const Pose& x, const Vec3& p, const Vec3& line_p,
                   const Vec3& line_dir);

/// Rolling-shutter correction into the scan-start frame:
/// p <- exp(tau * phi^) p + tau * t, with (t, phi) from the scan motion.
Cloud undistort(const Cloud& cloud, const Pose& scan_motion);
FeatureCloud undistort(const FeatureCloud& features, const Pose& scan_motion);

/// Plane residual over the chain y = pivot^-1 * mid * ext * p. Slots with a
/// negative block index use the fixed pose instead.
class ChainPlaneBlock : public ResidualBlock {
 public:
  struct Slot {
    int block = -1;  // state block index, or -1 for fixed
    Pose fixed;
  };

  ChainPlaneBlock(Slot pivot, Slot mid, Slot ext, const Vec3& p, const Vec3& w,
                  double d);

  const std::vector<int>& params() const override { return params_; }
  int residual_dim() const override { return 3; }
  void evaluate(const State& x, Eigen::VectorXd* r,
                std::vector<Eigen::MatrixXd>* J) const override;

 private:
  Slot pivot_, mid_, ext_;
  Vec3 p_, w_;
  double d_;
  std::vector<int> params_;
};

struct OdometryOptions {
  Mat3 point_cov = 0.05 * 0.05 * Mat3::Identity();  // Sigma_p = Z
  int outer_iterations = 2;
  int max_iterations = 30;
  int min_correspondences = 10;
  Kernel kernel = Kernel::OpenMP;
};

struct FrameMotionResult {
  Pose motion;       // x_k: previous scan-start frame -> current
  Mat6 information;  // 6x6 information of the estimate
  int correspondences = 0;
  bool low_confidence = false;
};

/// Estimates the relative motion between the previous (undistorted) feature
/// cloud and the raw current one, re-matching twice. Falls back to the prior
/// (constant-velocity) motion when correspondences are too few.
FrameMotionResult estimate_frame_motion(const FeatureCloud& prev,
                                        const FeatureCloud& curr,
                                        const Pose& prior_motion,
                                        const PreprocessParams& pp,
                                        const OdometryOptions& opts = {});

}  // namespace mloam
