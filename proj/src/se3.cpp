#include "mloam/se3.h"

#include <cmath>
#include <stdexcept>

namespace mloam {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  if (theta < 1e-8) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * W + c * W * W;
}

Vec3 log_so3(const Mat3& R) {
  if ((R * R.transpose() - Mat3::Identity()).norm() > 1e-6 ||
      R.determinant() < 0.0) {
    throw std::invalid_argument("log_so3: input is not a rotation matrix");
  }
  // Quaternion extraction avoids the trace formula's instability near pi.
  Quat q(R);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double vn = q.vec().norm();
  if (vn < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(vn, q.w());
  return (angle / vn) * q.vec();
}

Mat3 left_jacobian_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  if (theta < 1e-8) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Mat4 exp_se3(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = exp_so3(phi);
  T.topRightCorner<3, 1>() = left_jacobian_so3(phi) * rho;
  return T;
}

Vec6 log_se3(const Mat4& T) {
  const Vec3 phi = log_so3(T.topLeftCorner<3, 3>());
  const Mat3 Jl = left_jacobian_so3(phi);
  Vec6 xi;
  xi.tail<3>() = phi;
  xi.head<3>() = Jl.partialPivLu().solve(T.topRightCorner<3, 1>());
  return xi;
}

Eigen::Matrix<double, 4, 6> odot(const Vec4& ph) {
  if (std::abs(ph(3) - 1.0) > 1e-9) {
    throw std::invalid_argument("odot: homogeneous coordinate must be 1");
  }
  Eigen::Matrix<double, 4, 6> M = Eigen::Matrix<double, 4, 6>::Zero();
  M.topLeftCorner<3, 3>() = ph(3) * Mat3::Identity();
  M.block<3, 3>(0, 3) = -skew(ph.head<3>());
  return M;
}

Mat6 adjoint(const Mat4& T) {
  const Mat3 R = T.topLeftCorner<3, 3>();
  const Vec3 t = T.topRightCorner<3, 1>();
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = R;
  ad.topRightCorner<3, 3>() = skew(t) * R;
  ad.bottomRightCorner<3, 3>() = R;
  return ad;
}

Pose::Pose(const Mat4& T)
    : t(T.topRightCorner<3, 1>()), q(Quat(Mat3(T.topLeftCorner<3, 3>())).normalized()) {}

Mat4 Pose::matrix() const {
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = rotation();
  T.topRightCorner<3, 1>() = t;
  return T;
}

Pose Pose::inverse() const {
  const Quat qi = q.conjugate();
  return Pose(qi * (-t), qi);
}

Pose Pose::operator*(const Pose& o) const {
  return Pose(t + q * o.t, q * o.q);
}

Pose Pose::retract(const Vec6& delta) const {
  const Vec3 dphi = delta.tail<3>();
  Quat dq(Eigen::AngleAxisd(dphi.norm(),
                            dphi.norm() < 1e-14 ? Vec3::UnitX() : dphi.normalized()));
  return Pose(t + delta.head<3>(), (q * dq).normalized());
}

Vec6 Pose::local_minus(const Pose& base) const {
  Vec6 d;
  d.head<3>() = t - base.t;
  d.tail<3>() = log_so3((base.q.conjugate() * q).toRotationMatrix());
  return d;
}

Mat6 left_cov_from_local(const Pose& pose, const Mat6& cov_local) {
  // t + dt, R*exp(dphi^)  ==  exp(xi^) * T  with
  // phi = R*dphi, rho = dt + t^ R dphi.
  Mat6 G = Mat6::Zero();
  const Mat3 R = pose.rotation();
  G.topLeftCorner<3, 3>() = Mat3::Identity();
  G.topRightCorner<3, 3>() = skew(pose.t) * R;
  G.bottomRightCorner<3, 3>() = R;
  return G * cov_local * G.transpose();
}

namespace {

// M - tr(M) I. With M = E[b a^T] this equals E[a^ b^], from
// a^ b^ = b a^T - (a . b) I.
Mat3 op_tr(const Mat3& M) { return M - M.trace() * Mat3::Identity(); }

// E[a^ M b^] for jointly Gaussian zero-mean a, b with D = E[a b^T].
Mat3 expect_skew_sandwich(const Mat3& D, const Mat3& M) {
  Mat3 out = Mat3::Zero();
  for (int m = 0; m < 3; ++m) {
    for (int n = 0; n < 3; ++n) {
      if (D(m, n) == 0.0) continue;
      out += D(m, n) * skew(Vec3::Unit(m)) * M * skew(Vec3::Unit(n));
    }
  }
  return out;
}

// E[ad(xi) ad(xi)] for xi ~ N(0, C), C in [rho, phi] block order.
Mat6 curly_second_moment(const Mat6& C) {
  const Mat3 Cpp = C.bottomRightCorner<3, 3>();          // phi-phi
  const Mat3 Crp = C.topRightCorner<3, 3>();             // rho-phi
  Mat6 A = Mat6::Zero();
  A.topLeftCorner<3, 3>() = op_tr(Cpp);
  A.topRightCorner<3, 3>() = op_tr(Crp + Crp.transpose());
  A.bottomRightCorner<3, 3>() = op_tr(Cpp);
  return A;
}

// E[ad(xi) S ad(xi)^T] for xi ~ N(0, C). Expanding the product leaves
// sums of E[a^ M b^] terms with (a, b) drawn from (rho, phi).
Mat6 curly_sandwich(const Mat6& C, const Mat6& S) {
  const Mat3 Crr = C.topLeftCorner<3, 3>();      // E[rho rho^T]
  const Mat3 Crp = C.topRightCorner<3, 3>();     // E[rho phi^T]
  const Mat3 Cpr = C.bottomLeftCorner<3, 3>();   // E[phi rho^T]
  const Mat3 Cpp = C.bottomRightCorner<3, 3>();  // E[phi phi^T]
  const Mat3 Srr = S.topLeftCorner<3, 3>();
  const Mat3 Srp = S.topRightCorner<3, 3>();
  const Mat3 Spr = S.bottomLeftCorner<3, 3>();
  const Mat3 Spp = S.bottomRightCorner<3, 3>();

  Mat6 B;
  B.topLeftCorner<3, 3>() =
      -(expect_skew_sandwich(Cpp, Srr) + expect_skew_sandwich(Crp, Spr) +
        expect_skew_sandwich(Cpr, Srp) + expect_skew_sandwich(Crr, Spp));
  B.topRightCorner<3, 3>() =
      -(expect_skew_sandwich(Cpp, Srp) + expect_skew_sandwich(Crp, Spp));
  B.bottomLeftCorner<3, 3>() =
      -(expect_skew_sandwich(Cpp, Spr) + expect_skew_sandwich(Cpr, Spp));
  B.bottomRightCorner<3, 3>() = -expect_skew_sandwich(Cpp, Spp);
  return B;
}

}  // namespace

GaussianPose compound_poses(const GaussianPose& a, const GaussianPose& b) {
  GaussianPose out;
  out.mean = a.mean * b.mean;

  const Mat6 Ad = adjoint(a.mean);
  const Mat6 S = Ad * b.cov * Ad.transpose();  // b's covariance seen from a
  const Mat6 A1 = curly_second_moment(a.cov);
  const Mat6 A2 = curly_second_moment(S);
  const Mat6 B = curly_sandwich(a.cov, S);

  Mat6 cov = a.cov + S +
             (1.0 / 12.0) * (A1 * S + S * A1.transpose() + A2 * a.cov +
                             a.cov * A2.transpose()) +
             0.25 * B;
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

GaussianPoint transform_gaussian_point(const GaussianPose& pose,
                                       const GaussianPoint& pt) {
  Vec4 ph;
  ph << pt.mean, 1.0;
  const Vec4 h = pose.mean * ph;

  Eigen::Matrix<double, 3, 9> H;
  H.leftCols<6>() = odot(h).topRows<3>();
  H.rightCols<3>() = pose.mean.topLeftCorner<3, 3>();  // T * D, top 3 rows

  Eigen::Matrix<double, 9, 9> Theta = Eigen::Matrix<double, 9, 9>::Zero();
  Theta.topLeftCorner<6, 6>() = pose.cov;
  Theta.bottomRightCorner<3, 3>() = pt.cov;

  GaussianPoint out;
  out.mean = h.head<3>();
  const Mat3 cov = H * Theta * H.transpose();
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

}  // namespace mloam
