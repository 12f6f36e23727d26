#include "mloam/calib.h"

#include <algorithm>
#include <cmath>

namespace mloam {

namespace {
double rotation_angle(const Quat& q) {
  Quat n = q.normalized();
  if (n.w() < 0.0) n.coeffs() = -n.coeffs();
  return 2.0 * std::atan2(n.vec().norm(), n.w());
}
}  // namespace

void MotionConstraintQueue::push(const Pose& primary_motion,
                                 const Pose& aux_motion) {
  MotionPair pair{primary_motion, aux_motion, rotation_angle(primary_motion.q)};
  pairs_.push_back(pair);
  if (int(pairs_.size()) > capacity_) {
    auto smallest = std::min_element(
        pairs_.begin(), pairs_.end(),
        [](const MotionPair& a, const MotionPair& b) {
          return a.rot_angle < b.rot_angle;
        });
    pairs_.erase(smallest);
  }
}

double MotionConstraintQueue::max_primary_tz() const {
  double out = 0.0;
  for (const auto& p : pairs_) out = std::max(out, std::abs(p.primary.t.z()));
  return out;
}

Eigen::Matrix4d quat_left(const Quat& q) {
  Eigen::Matrix4d Q;
  Q.topLeftCorner<3, 3>() = q.w() * Mat3::Identity() + skew(q.vec());
  Q.topRightCorner<3, 1>() = q.vec();
  Q.bottomLeftCorner<1, 3>() = -q.vec().transpose();
  Q(3, 3) = q.w();
  return Q;
}

Eigen::Matrix4d quat_right(const Quat& q) {
  Eigen::Matrix4d Q;
  Q.topLeftCorner<3, 3>() = q.w() * Mat3::Identity() - skew(q.vec());
  Q.topRightCorner<3, 1>() = q.vec();
  Q.bottomLeftCorner<1, 3>() = -q.vec().transpose();
  Q(3, 3) = q.w();
  return Q;
}

Eigen::MatrixXd rotation_system(const MotionConstraintQueue& queue,
                                const Quat& estimate, double huber_delta_rad) {
  const auto& pairs = queue.pairs();
  Eigen::MatrixXd M(4 * pairs.size(), 4);
  for (size_t k = 0; k < pairs.size(); ++k) {
    const Quat& qp = pairs[k].primary.q;
    const Quat& qa = pairs[k].aux.q;
    // Residual rotation at the current estimate; its angle drives the
    // Huber-derivative weight.
    const Quat res = qp.conjugate() * estimate * qa * estimate.conjugate();
    const double phi = rotation_angle(res);
    const double w = phi <= huber_delta_rad ? 1.0 : huber_delta_rad / phi;
    // prim (x) q - q (x) aux = 0.
    M.block<4, 4>(4 * k, 0) = w * (quat_left(qp) - quat_right(qa));
  }
  return M;
}

RotationSolveResult solve_rotation(const MotionConstraintQueue& queue,
                                   const Quat& current_estimate,
                                   double sigma_threshold,
                                   double huber_delta_rad, int min_pairs) {
  RotationSolveResult out;
  out.q = current_estimate;
  if (queue.size() < std::max(min_pairs, 2)) return out;

  Quat estimate = current_estimate;
  double sigma_min2 = 0.0;
  for (int iter = 0; iter < 3; ++iter) {
    const Eigen::MatrixXd M = rotation_system(queue, estimate, huber_delta_rad);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
    Eigen::Vector4d v = svd.matrixV().col(3);
    if (v(3) < 0.0) v = -v;
    estimate = Quat(v(3), v(0), v(1), v(2)).normalized();
    sigma_min2 = svd.singularValues()(2);
  }
  out.q = estimate;
  out.sigma_min2 = sigma_min2;
  out.converged = sigma_min2 > sigma_threshold;
  return out;
}

TranslationSolveResult solve_translation(const MotionConstraintQueue& queue,
                                         const Mat3& rotation, bool planar,
                                         double max_condition) {
  TranslationSolveResult out;
  const auto& pairs = queue.pairs();
  if (pairs.empty()) return out;

  const int cols = planar ? 2 : 3;
  Eigen::MatrixXd A(3 * pairs.size(), cols);
  Eigen::VectorXd b(3 * pairs.size());
  for (size_t k = 0; k < pairs.size(); ++k) {
    const Mat3 Rp = pairs[k].primary.rotation();
    const Mat3 lhs = Rp - Mat3::Identity();
    A.middleRows<3>(3 * k) = lhs.leftCols(cols);
    b.segment<3>(3 * k) = rotation * pairs[k].aux.t - pairs[k].primary.t;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  out.condition = sv(cols - 1) > 0.0
                      ? sv(0) / sv(cols - 1)
                      : std::numeric_limits<double>::infinity();
  if (out.condition > max_condition) {
    out.ok = false;
    return out;
  }
  const Eigen::VectorXd t = svd.solve(b);
  out.t = Vec3::Zero();
  out.t.head(cols) = t;
  out.ok = true;
  return out;
}

}  // namespace mloam
