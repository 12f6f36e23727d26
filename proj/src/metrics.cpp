#include "mloam/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mloam/kdtree.h"

namespace mloam {

void write_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  char buf[256];
  for (const auto& e : traj) {
    std::snprintf(buf, sizeof(buf),
                  "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", e.stamp,
                  e.pose.t.x(), e.pose.t.y(), e.pose.t.z(), e.pose.q.x(),
                  e.pose.q.y(), e.pose.q.z(), e.pose.q.w());
    f << buf;
  }
}

Trajectory read_tum(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  Trajectory traj;
  double s, tx, ty, tz, qx, qy, qz, qw;
  while (f >> s >> tx >> ty >> tz >> qx >> qy >> qz >> qw) {
    TrajectoryEntry e;
    e.stamp = s;
    e.pose = Pose(Vec3(tx, ty, tz), Quat(qw, qx, qy, qz));
    if (!traj.empty() && e.stamp <= traj.back().stamp) {
      throw std::runtime_error("trajectory timestamps must increase: " + path);
    }
    traj.push_back(e);
  }
  return traj;
}

Mat3 euler_xyz_to_matrix(const Vec3& deg) {
  const double d = M_PI / 180.0;
  return Mat3(Eigen::AngleAxisd(deg.x() * d, Vec3::UnitX()) *
              Eigen::AngleAxisd(deg.y() * d, Vec3::UnitY()) *
              Eigen::AngleAxisd(deg.z() * d, Vec3::UnitZ()));
}

Vec3 matrix_to_euler_xyz(const Mat3& R) {
  const double b = std::asin(std::clamp(R(0, 2), -1.0, 1.0));
  const double c = std::atan2(-R(0, 1), R(0, 0));
  const double a = std::atan2(-R(1, 2), R(2, 2));
  return Vec3(a, b, c) * 180.0 / M_PI;
}

std::pair<double, double> egt(const Pose& est, const Pose& gt) {
  const Vec3 dphi = log_so3(gt.rotation() * est.rotation().transpose());
  return {dphi.norm() * 180.0 / M_PI, (gt.t - est.t).norm()};
}

MmeResult mme(const std::vector<Vec3>& cloud, double radius) {
  MmeResult out;
  if (cloud.size() < 10) return out;
  KdTree3 tree(cloud);
  double sum = 0.0;
  int used = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const auto nn = tree.radius(cloud[i], radius);
    if (int(nn.size()) < 6) continue;  // self plus at least five neighbors
    Vec3 mean = Vec3::Zero();
    for (int j : nn) mean += cloud[j];
    mean /= double(nn.size());
    Mat3 C = Mat3::Zero();
    for (int j : nn) {
      const Vec3 d = cloud[j] - mean;
      C += d * d.transpose();
    }
    C /= double(nn.size() - 1);
    const double det = (2.0 * M_PI * M_E * C).determinant();
    if (det <= 1e-300) continue;
    sum += std::log(det);
    ++used;
  }
  if (used == 0) return out;
  out.value = sum / used;
  out.used = used;
  out.defined = true;
  return out;
}

namespace {

struct Assoc {
  std::vector<Pose> est, gt;
};

Assoc associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  Assoc out;
  size_t j = 0;
  for (const auto& e : est) {
    while (j + 1 < gt.size() &&
           std::abs(gt[j + 1].stamp - e.stamp) <= std::abs(gt[j].stamp - e.stamp))
      ++j;
    if (j < gt.size() && std::abs(gt[j].stamp - e.stamp) <= max_dt) {
      out.est.push_back(e.pose);
      out.gt.push_back(gt[j].pose);
    }
  }
  return out;
}

}  // namespace

AteResult ate(const Trajectory& est, const Trajectory& gt, bool yaw_only) {
  const Assoc assoc = associate(est, gt, 0.010);
  const int n = int(assoc.est.size());
  if (n < 10) {
    throw std::runtime_error("ate: fewer than 10 associated pose pairs");
  }

  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mu_e += assoc.est[i].t;
    mu_g += assoc.gt[i].t;
  }
  mu_e /= n;
  mu_g /= n;

  Mat3 R_align;
  if (yaw_only) {
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec3 a = assoc.est[i].t - mu_e;
      const Vec3 b = assoc.gt[i].t - mu_g;
      sx += a.x() * b.x() + a.y() * b.y();
      sy += a.x() * b.y() - a.y() * b.x();
    }
    const double theta = std::atan2(sy, sx);
    R_align = Mat3(Eigen::AngleAxisd(theta, Vec3::UnitZ()));
  } else {
    Mat3 W = Mat3::Zero();
    for (int i = 0; i < n; ++i) {
      W += (assoc.gt[i].t - mu_g) * (assoc.est[i].t - mu_e).transpose();
    }
    Eigen::JacobiSVD<Mat3> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 S = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
      S(2, 2) = -1.0;
    }
    R_align = svd.matrixU() * S * svd.matrixV().transpose();
  }
  const Vec3 t_align = mu_g - R_align * mu_e;

  AteResult out;
  out.pairs = n;
  double acc_t = 0.0, acc_r = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 dt = assoc.gt[i].t - (R_align * assoc.est[i].t + t_align);
    acc_t += dt.squaredNorm();
    const Vec3 dphi = log_so3(assoc.gt[i].rotation() *
                              (R_align * assoc.est[i].rotation()).transpose());
    acc_r += dphi.squaredNorm();
  }
  out.rmse_t = std::sqrt(acc_t / n);
  out.rmse_r_deg = std::sqrt(acc_r / n) * 180.0 / M_PI;
  return out;
}

RpeResult rpe(const Trajectory& est, const Trajectory& gt,
              const std::vector<double>& distances) {
  const Assoc assoc = associate(est, gt, 0.010);
  const int n = int(assoc.est.size());
  if (n < 10) {
    throw std::runtime_error("rpe: fewer than 10 associated pose pairs");
  }

  // Path length along the ground truth.
  std::vector<double> cum(n, 0.0);
  for (int i = 1; i < n; ++i) {
    cum[i] = cum[i - 1] + (assoc.gt[i].t - assoc.gt[i - 1].t).norm();
  }

  RpeResult out;
  out.distances = distances;
  std::vector<double> all_pct;
  for (double d : distances) {
    std::vector<double> terr, rerr;
    int j = 0;
    for (int i = 0; i < n; ++i) {
      while (j < n && cum[j] - cum[i] < d) ++j;
      if (j >= n) break;
      const Pose rel_gt = assoc.gt[i].inverse() * assoc.gt[j];
      const Pose rel_est = assoc.est[i].inverse() * assoc.est[j];
      const Pose err = rel_gt.inverse() * rel_est;
      terr.push_back(err.t.norm());
      rerr.push_back(log_so3(err.rotation()).norm() * 180.0 / M_PI);
      all_pct.push_back(err.t.norm() / d * 100.0);
    }
    auto median = [](std::vector<double> v) {
      if (v.empty()) return 0.0;
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    out.median_t.push_back(median(terr));
    out.median_r_deg.push_back(median(rerr));
  }
  if (!all_pct.empty()) {
    std::sort(all_pct.begin(), all_pct.end());
    out.overall_median_t_pct = all_pct[all_pct.size() / 2];
  }
  return out;
}

}  // namespace mloam
