#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

// Rigid-body geometry and Gaussian uncertainty on SO(3)/SE(3).
//
// Conventions used throughout the project:
//  * Quaternions are Hamilton quaternions (Eigen storage, scalar-last xyzw).
//  * se(3) tangent vectors are ordered translation-first: xi = [rho, phi].
//  * GaussianPose covariances refer to the left (world-frame) perturbation
//    T = exp(xi^) * T_mean.
//  * Solver-side pose updates use a different, local tangent: t <- t + dt,
//    R <- R * exp(dphi^). left_cov_from_local() converts between the two.

namespace mloam {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Quat = Eigen::Quaterniond;

Mat3 skew(const Vec3& v);

/// Rodrigues exponential; second-order series below 1e-8 rad.
Mat3 exp_so3(const Vec3& phi);

/// Inverse of exp_so3. Input must be orthonormal within 1e-6 (throws
/// std::invalid_argument otherwise). Returned angle lies in [0, pi].
/// Uses quaternion extraction, which stays stable near pi.
Vec3 log_so3(const Mat3& R);

/// SE(3) exponential for xi = [rho, phi] (translation first).
Mat4 exp_se3(const Vec6& xi);
Vec6 log_se3(const Mat4& T);

/// Left Jacobian of SO(3).
Mat3 left_jacobian_so3(const Vec3& phi);

/// The (.)^{odot} operator: maps a homogeneous point (eta must equal 1)
/// to the 4x6 matrix [eta*I  -eps^; 0 0] so that xi^ * p_h = odot(p_h) * xi.
Eigen::Matrix<double, 4, 6> odot(const Vec4& ph);

/// SE(3) adjoint for translation-first tangents: Ad = [R  t^R; 0  R].
Mat6 adjoint(const Mat4& T);

struct Pose {
  Vec3 t{Vec3::Zero()};
  Quat q{Quat::Identity()};

  Pose() = default;
  Pose(const Vec3& t_, const Quat& q_) : t(t_), q(q_.normalized()) {}
  explicit Pose(const Mat4& T);

  static Pose Identity() { return Pose(); }

  Mat3 rotation() const { return q.toRotationMatrix(); }
  Mat4 matrix() const;
  Pose inverse() const;
  Pose operator*(const Pose& o) const;
  Vec3 operator*(const Vec3& p) const { return q * p + t; }

  /// Local (solver-frame) retraction: t += dt, q *= exp(dphi).
  Pose retract(const Vec6& delta) const;
  /// Inverse of retract: this.retract(other.local_minus(this)) == other.
  Vec6 local_minus(const Pose& base) const;

  void normalize() { q.normalize(); }
};

/// Pose with a 6x6 covariance of the left perturbation T = exp(xi^)*T_mean.
struct GaussianPose {
  Mat4 mean{Mat4::Identity()};
  Mat6 cov{Mat6::Zero()};

  GaussianPose() = default;
  GaussianPose(const Mat4& m, const Mat6& c) : mean(m), cov(c) {}
};

/// 3D point with covariance.
struct GaussianPoint {
  Vec3 mean{Vec3::Zero()};
  Mat3 cov{Mat3::Zero()};

  GaussianPoint() = default;
  GaussianPoint(const Vec3& m, const Mat3& c) : mean(m), cov(c) {}
};

/// Convert a solver-frame covariance (dt additive, dphi body-frame) at the
/// given pose into a left-perturbation covariance.
Mat6 left_cov_from_local(const Pose& pose, const Mat6& cov_local);

/// Compound two independent noisy poses. The mean composes exactly; the
/// covariance keeps the second-order terms plus the fourth-order corrections
/// of the standard SE(3) compounding scheme.
GaussianPose compound_poses(const GaussianPose& a, const GaussianPose& b);

/// Push a noisy point through a noisy transform: y = T * p with
/// Sigma = H * diag(Xi, Z) * H^T and H = [(T*p_h)^odot  T*D].
GaussianPoint transform_gaussian_point(const GaussianPose& pose,
                                       const GaussianPoint& pt);

}  // namespace mloam
