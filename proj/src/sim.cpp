#include "mloam/sim.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "mloam/rng.h"

namespace mloam {

namespace {
constexpr double kDeg = M_PI / 180.0;
}

double Environment::cast(const Vec3& o, const Vec3& d, double max_range) const {
  double best = max_range;
  bool hit = false;

  for (const PlanePatch& p : patches) {
    const double denom = d.dot(p.normal);
    if (std::abs(denom) < 1e-12) continue;
    const double s = (p.corner - o).dot(p.normal) / denom;
    if (s <= 1e-6 || s >= best) continue;
    const Vec3 h = o + s * d - p.corner;
    const double lu = p.edge_u.squaredNorm();
    const double lv = p.edge_v.squaredNorm();
    const double cu = h.dot(p.edge_u);
    const double cv = h.dot(p.edge_v);
    if (cu < 0.0 || cu > lu || cv < 0.0 || cv > lv) continue;
    best = s;
    hit = true;
  }

  for (const Cylinder& c : cylinders) {
    const double ox = o.x() - c.base.x(), oy = o.y() - c.base.y();
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a < 1e-14) continue;
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double q = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * q;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    for (const double s : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
      if (s <= 1e-6 || s >= best) continue;
      const double z = o.z() + s * d.z();
      if (z < c.base.z() || z > c.base.z() + c.height) continue;
      best = s;
      hit = true;
      break;  // the nearer root suffices
    }
  }

  return hit ? best : -1.0;
}

PlanePatch make_patch(const Vec3& corner, const Vec3& edge_u,
                      const Vec3& edge_v) {
  PlanePatch p;
  p.corner = corner;
  p.edge_u = edge_u;
  p.edge_v = edge_v;
  p.normal = edge_u.cross(edge_v).normalized();
  return p;
}

Environment make_room(double sx, double sy, double sz) {
  Environment env;
  const Vec3 lo(-sx / 2, -sy / 2, 0.0);
  const Vec3 ex(sx, 0, 0), ey(0, sy, 0), ez(0, 0, sz);
  env.patches.push_back(make_patch(lo, ex, ey));                  // floor
  env.patches.push_back(make_patch(lo + ez, ey, ex));             // ceiling
  env.patches.push_back(make_patch(lo, ey, ez));                  // x = -sx/2
  env.patches.push_back(make_patch(lo + ex, ez, ey));             // x = +sx/2
  env.patches.push_back(make_patch(lo, ez, ex));                  // y = -sy/2
  env.patches.push_back(make_patch(lo + ey, ex, ez));             // y = +sy/2
  return env;
}

Environment make_room_with_cylinders(double sx, double sy, double sz) {
  Environment env = make_room(sx, sy, sz);
  const double r = 0.5;
  env.cylinders.push_back({Vec3(sx * 0.30, sy * 0.28, 0.0), r, sz});
  env.cylinders.push_back({Vec3(-sx * 0.32, sy * 0.30, 0.0), r, sz});
  env.cylinders.push_back({Vec3(sx * 0.27, -sy * 0.31, 0.0), r, sz});
  env.cylinders.push_back({Vec3(-sx * 0.29, -sy * 0.27, 0.0), r, sz});
  return env;
}

Environment make_corridor(double length, double width, double height) {
  Environment env;
  const Vec3 lo(-length / 2, -width / 2, 0.0);
  const Vec3 ex(length, 0, 0), ey(0, width, 0), ez(0, 0, height);
  env.patches.push_back(make_patch(lo, ex, ey));       // floor
  env.patches.push_back(make_patch(lo + ez, ey, ex));  // ceiling
  env.patches.push_back(make_patch(lo, ez, ex));       // wall y = -w/2
  env.patches.push_back(make_patch(lo + ey, ex, ez));  // wall y = +w/2
  return env;
}

Rig make_sr_rig(double horiz_res_deg, double noise_sd) {
  Rig rig;
  LidarModel primary;
  primary.horiz_res_deg = horiz_res_deg;
  primary.noise_sd = Vec3::Constant(noise_sd);
  rig.lidars.push_back(primary);

  LidarModel aux = primary;
  const Mat3 R(Eigen::AngleAxisd(40.0 * kDeg, Vec3::UnitX()));
  aux.extrinsic = Pose(Vec3(0.0, -0.477, -0.220), Quat(R));
  rig.lidars.push_back(aux);
  return rig;
}

Pose TrajectorySpec::at(double t) const {
  if (times.empty()) throw std::invalid_argument("trajectory is empty");
  if (t <= times.front()) return waypoints.front();
  if (t >= times.back()) return waypoints.back();
  size_t hi = 1;
  while (times[hi] < t) ++hi;
  const size_t lo = hi - 1;
  const double s = (t - times[lo]) / (times[hi] - times[lo]);
  const Mat4 rel = waypoints[lo].inverse().matrix() * waypoints[hi].matrix();
  return Pose(waypoints[lo].matrix() * exp_se3(s * log_se3(rel)));
}

void render_ranges(const Environment& env, const LidarModel& lidar,
                   const TrajectorySpec& traj, double t0, Kernel kernel,
                   std::vector<double>* ranges) {
  const int cols = int(std::lround(360.0 / lidar.horiz_res_deg));
  const int beams = lidar.beams;
  ranges->assign(size_t(cols) * beams, -1.0);

  // Sensor pose per column (all beams of a column fire together).
  std::vector<Mat4> col_pose(cols);
  for (int c = 0; c < cols; ++c) {
    const double tau = double(c + 1) / cols;
    col_pose[c] =
        traj.at(t0 + tau * lidar.scan_period).matrix() * lidar.extrinsic.matrix();
  }

  auto cast_one = [&](int idx) {
    const int c = idx / beams;
    const int r = idx % beams;
    const double az = c * lidar.horiz_res_deg * kDeg;
    const double el =
        beams == 1 ? lidar.vfov_min_deg * kDeg
                   : (lidar.vfov_min_deg +
                      r * (lidar.vfov_max_deg - lidar.vfov_min_deg) /
                          (beams - 1)) *
                         kDeg;
    const Vec3 dir_s(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                     std::sin(el));
    const Mat4& T = col_pose[c];
    const Vec3 o = T.topRightCorner<3, 1>();
    const Vec3 d = T.topLeftCorner<3, 3>() * dir_s;
    (*ranges)[idx] = env.cast(o, d, lidar.max_range);
  };

  const int n = cols * beams;
  if (kernel == Kernel::OpenMP) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) cast_one(i);
  } else {
    for (int i = 0; i < n; ++i) cast_one(i);
  }
}

std::vector<Scan> simulate_scan(const Environment& env, const Rig& rig,
                                const TrajectorySpec& traj, int frame_k,
                                double frame_period, uint64_t seed,
                                Kernel kernel) {
  std::vector<Scan> out;
  const double t0 = traj.times.front() + frame_k * frame_period;
  for (size_t li = 0; li < rig.lidars.size(); ++li) {
    const LidarModel& lidar = rig.lidars[li];
    const int cols = int(std::lround(360.0 / lidar.horiz_res_deg));
    const int beams = lidar.beams;

    std::vector<double> ranges;
    render_ranges(env, lidar, traj, t0, kernel, &ranges);

    Scan scan;
    scan.lidar = int(li);
    scan.frame = frame_k;
    scan.stamp = t0 - traj.times.front();
    scan.points.reserve(ranges.size());

    // Noise is applied serially in emission order so the result does not
    // depend on the ray-cast schedule.
    auto rng = make_rng(seed, uint64_t(frame_k), li);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int c = 0; c < cols; ++c) {
      const double tau = double(c + 1) / cols;
      for (int r = 0; r < beams; ++r) {
        const double range = ranges[size_t(c) * beams + r];
        if (range <= 0.0) continue;
        const double az = c * lidar.horiz_res_deg * kDeg;
        const double el =
            beams == 1 ? lidar.vfov_min_deg * kDeg
                       : (lidar.vfov_min_deg +
                          r * (lidar.vfov_max_deg - lidar.vfov_min_deg) /
                              (beams - 1)) *
                             kDeg;
        Vec3 p(range * std::cos(el) * std::cos(az),
               range * std::cos(el) * std::sin(az), range * std::sin(el));
        if (lidar.noise_sd.norm() > 0.0) {
          p.x() += lidar.noise_sd.x() * n01(rng);
          p.y() += lidar.noise_sd.y() * n01(rng);
          p.z() += lidar.noise_sd.z() * n01(rng);
        }
        ScanPoint sp;
        sp.x = float(p.x());
        sp.y = float(p.y());
        sp.z = float(p.z());
        sp.intensity = float(r);
        sp.tau = float(tau);
        scan.points.push_back(sp);
      }
    }
    out.push_back(std::move(scan));
  }
  return out;
}

Pose ground_truth(const TrajectorySpec& traj, int frame_k, double frame_period) {
  return traj.at(traj.times.front() + frame_k * frame_period);
}

std::vector<Pose> ground_truth_extrinsics(const Rig& rig) {
  std::vector<Pose> out;
  for (const auto& l : rig.lidars) out.push_back(l.extrinsic);
  return out;
}

void write_scan(const std::string& path, const Scan& scan) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(scan.points.data()),
          std::streamsize(scan.points.size() * sizeof(ScanPoint)));
}

Scan read_scan(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot read " + path);
  const auto bytes = f.tellg();
  f.seekg(0);
  Scan scan;
  scan.points.resize(size_t(bytes) / sizeof(ScanPoint));
  f.read(reinterpret_cast<char*>(scan.points.data()), bytes);
  return scan;
}

std::string scan_filename(int frame, int lidar) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "scan_%06d_%d.bin", frame, lidar);
  return buf;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "lidars " << m.num_lidars << "\n";
  f << "frames " << m.num_frames << "\n";
  char buf[512];
  std::snprintf(buf, sizeof(buf), "frame_period %.9f\n", m.frame_period);
  f << buf;
  for (int i = 0; i < m.num_lidars; ++i) {
    const LidarModel& l = m.rig.lidars[i];
    std::snprintf(buf, sizeof(buf),
                  "lidar %d beams %d vfov %.9f %.9f horiz_res %.9f period %.9f "
                  "noise %.9f %.9f %.9f max_range %.9f\n",
                  i, l.beams, l.vfov_min_deg, l.vfov_max_deg, l.horiz_res_deg,
                  l.scan_period, l.noise_sd.x(), l.noise_sd.y(),
                  l.noise_sd.z(), l.max_range);
    f << buf;
    std::snprintf(buf, sizeof(buf),
                  "extrinsic %d %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", i,
                  l.extrinsic.t.x(), l.extrinsic.t.y(), l.extrinsic.t.z(),
                  l.extrinsic.q.x(), l.extrinsic.q.y(), l.extrinsic.q.z(),
                  l.extrinsic.q.w());
    f << buf;
  }
  for (int k = 0; k < m.num_frames; ++k) {
    std::snprintf(buf, sizeof(buf), "frame %d %.9f\n", k, m.frame_stamps[k]);
    f << buf;
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  Manifest m;
  std::string key;
  while (f >> key) {
    if (key == "lidars") {
      f >> m.num_lidars;
      m.rig.lidars.resize(m.num_lidars);
    } else if (key == "frames") {
      f >> m.num_frames;
      m.frame_stamps.resize(m.num_frames);
    } else if (key == "frame_period") {
      f >> m.frame_period;
    } else if (key == "lidar") {
      int i;
      std::string tag;
      f >> i;
      LidarModel& l = m.rig.lidars.at(i);
      f >> tag >> l.beams;
      f >> tag >> l.vfov_min_deg >> l.vfov_max_deg;
      f >> tag >> l.horiz_res_deg;
      f >> tag >> l.scan_period;
      f >> tag >> l.noise_sd.x() >> l.noise_sd.y() >> l.noise_sd.z();
      f >> tag >> l.max_range;
    } else if (key == "extrinsic") {
      int i;
      double tx, ty, tz, qx, qy, qz, qw;
      f >> i >> tx >> ty >> tz >> qx >> qy >> qz >> qw;
      m.rig.lidars.at(i).extrinsic = Pose(Vec3(tx, ty, tz), Quat(qw, qx, qy, qz));
    } else if (key == "frame") {
      int k;
      f >> k;
      f >> m.frame_stamps.at(k);
    } else {
      throw std::runtime_error("manifest: unknown key " + key);
    }
  }
  return m;
}

}  // namespace mloam
