#include "mloam/odometry.h"

#include <cmath>
#include <memory>

namespace mloam {

Vec3 planar_residual(const Pose& x, const Vec3& p, const Vec3& w, double d) {
  return (w.dot(x * p) + d) * w;
}

std::optional<EdgePlanes> edge_planes(const Vec3& line_p, const Vec3& line_dir,
                                      const Vec3& y) {
  const Vec3 l = line_dir.normalized();
  const Vec3 delta = y - line_p;
  const Vec3 perp = delta - delta.dot(l) * l;
  if (perp.norm() < 1e-9) return std::nullopt;
  EdgePlanes ep;
  ep.w1 = perp.normalized();
  ep.d1 = -ep.w1.dot(line_p);
  ep.w2 = l.cross(ep.w1).normalized();
  ep.d2 = -ep.w2.dot(line_p);
  return ep;
}

Vec6 edge_residual(const Pose& x, const Vec3& p, const Vec3& line_p,
                   const Vec3& line_dir) {
  const Vec3 y = x * p;
  const auto planes = edge_planes(line_p, line_dir, y);
  if (!planes) return Vec6::Zero();
  Vec6 r;
  r.head<3>() = planar_residual(x, p, planes->w1, planes->d1);
  r.tail<3>() = planar_residual(x, p, planes->w2, planes->d2);
  return r;
}

Cloud undistort(const Cloud& cloud, const Pose& scan_motion) {
  const Vec3 phi = log_so3(scan_motion.rotation());
  Cloud out = cloud;
  for (auto& pt : out) {
    pt.p = exp_so3(pt.tau * phi) * pt.p + pt.tau * scan_motion.t;
  }
  return out;
}

FeatureCloud undistort(const FeatureCloud& features, const Pose& scan_motion) {
  FeatureCloud out;
  out.edges = undistort(features.edges, scan_motion);
  out.planars = undistort(features.planars, scan_motion);
  out.sharp_edges = undistort(features.sharp_edges, scan_motion);
  out.flat_planars = undistort(features.flat_planars, scan_motion);
  return out;
}

ChainPlaneBlock::ChainPlaneBlock(Slot pivot, Slot mid, Slot ext, const Vec3& p,
                                 const Vec3& w, double d)
    : pivot_(pivot), mid_(mid), ext_(ext), p_(p), w_(w), d_(d) {
  if (pivot_.block >= 0) params_.push_back(pivot_.block);
  if (mid_.block >= 0) params_.push_back(mid_.block);
  if (ext_.block >= 0) params_.push_back(ext_.block);
}

void ChainPlaneBlock::evaluate(const State& x, Eigen::VectorXd* r,
                               std::vector<Eigen::MatrixXd>* J) const {
  const Pose& Pp = pivot_.block >= 0 ? x.blocks[pivot_.block].pose : pivot_.fixed;
  const Pose& Pk = mid_.block >= 0 ? x.blocks[mid_.block].pose : mid_.fixed;
  const Pose& Pe = ext_.block >= 0 ? x.blocks[ext_.block].pose : ext_.fixed;

  const Mat3 Rp_t = Pp.rotation().transpose();
  const Mat3 Rk = Pk.rotation();
  const Mat3 Re = Pe.rotation();

  const Vec3 q = Re * p_ + Pe.t;          // after extrinsic
  const Vec3 z = Rk * q + Pk.t;           // after mid pose
  const Vec3 v = Rp_t * (z - Pp.t);       // into the pivot frame
  *r = (w_.dot(v) + d_) * w_;

  if (!J) return;
  const Mat3 W = w_ * w_.transpose();
  J->clear();
  if (pivot_.block >= 0) {
    Eigen::MatrixXd Jp(3, 6);
    Jp.leftCols<3>() = -W * Rp_t;
    Jp.rightCols<3>() = W * skew(v);
    J->push_back(std::move(Jp));
  }
  if (mid_.block >= 0) {
    Eigen::MatrixXd Jk(3, 6);
    Jk.leftCols<3>() = W * Rp_t;
    Jk.rightCols<3>() = -W * Rp_t * Rk * skew(q);
    J->push_back(std::move(Jk));
  }
  if (ext_.block >= 0) {
    Eigen::MatrixXd Je(3, 6);
    Je.leftCols<3>() = W * Rp_t * Rk;
    Je.rightCols<3>() = -W * Rp_t * Rk * Re * skew(p_);
    J->push_back(std::move(Je));
  }
}

FrameMotionResult estimate_frame_motion(const FeatureCloud& prev,
                                        const FeatureCloud& curr,
                                        const Pose& prior_motion,
                                        const PreprocessParams& pp,
                                        const OdometryOptions& opts) {
  FrameMotionResult out;
  out.motion = prior_motion;
  out.information = Mat6::Identity();
  out.low_confidence = true;

  Pose x = prior_motion;
  for (int outer = 0; outer < opts.outer_iterations; ++outer) {
    // Correct the rolling-shutter skew with the current motion estimate and
    // match against the previous (already undistorted) features.
    FeatureCloud sharp;
    sharp.sharp_edges = undistort(curr.sharp_edges, x);
    sharp.flat_planars = undistort(curr.flat_planars, x);
    const auto corrs = match_scan_to_scan(prev, sharp, pp);
    if (int(corrs.size()) < opts.min_correspondences) return out;

    std::vector<std::unique_ptr<ChainPlaneBlock>> owned;
    std::vector<const ResidualBlock*> blocks;
    ChainPlaneBlock::Slot pivot{-1, Pose()};
    ChainPlaneBlock::Slot mid{0, Pose()};
    ChainPlaneBlock::Slot ext{-1, Pose()};
    for (const Correspondence& c : corrs) {
      if (c.kind == Correspondence::kPlanar) {
        owned.push_back(std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p,
                                                          c.w, c.d));
        owned.back()->set_sigma(opts.point_cov);
        owned.back()->set_robust(true);
      } else {
        const auto planes = edge_planes(c.line_p, c.line_dir, x * c.p);
        if (!planes) continue;
        for (const auto& [w, d] :
             {std::pair{planes->w1, planes->d1}, {planes->w2, planes->d2}}) {
          owned.push_back(
              std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p, w, d));
          owned.back()->set_sigma(opts.point_cov);
          owned.back()->set_robust(true);
        }
      }
    }
    for (const auto& b : owned) blocks.push_back(b.get());

    State init;
    init.add_pose(x);
    SolveOptions sopts;
    sopts.max_iterations = opts.max_iterations;
    sopts.kernel = opts.kernel;
    auto res = solve(blocks, nullptr, init, sopts);
    if (res.status == SolveStatus::kNonFinite) return out;
    x = res.state.blocks[0].pose;
    out.information = res.information;
    out.correspondences = int(corrs.size());
  }
  out.motion = x;
  out.low_confidence = false;
  return out;
}

}  // namespace mloam
