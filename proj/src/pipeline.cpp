#include "mloam/pipeline.h"

#include <cmath>
#include <stdexcept>

#include "mloam/metrics.h"
#include "mloam/rng.h"

namespace mloam {

namespace {

constexpr double kDeg = M_PI / 180.0;

// Wandering loop inside a room with configurable rotational richness.
TrajectorySpec wander(double rx, double ry, double z0, double duration,
                      uint64_t seed, bool rich_rotation, bool yaw_only) {
  auto rng = make_rng(seed, 77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double phase = u(rng) * M_PI;
  const double dir = u(rng) > 0 ? 1.0 : -1.0;
  const double wobble = rich_rotation ? (10.0 + 2.0 * u(rng)) * kDeg : 0.0;

  TrajectorySpec traj;
  const double step = 1.5;  // seconds between waypoints
  const int n = int(duration / step) + 2;
  for (int i = 0; i < n; ++i) {
    const double t = i * step;
    const double ang = dir * 2.0 * M_PI * t / duration + phase;
    const Vec3 pos(rx * std::cos(ang) + 0.3 * u(rng),
                   ry * std::sin(ang) + 0.3 * u(rng),
                   yaw_only ? z0 : z0 + 0.3 * std::sin(1.7 * ang));
    const double yaw = ang + M_PI / 2 * dir + 0.2 * u(rng);
    Mat3 R(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    if (rich_rotation) {
      R = R * Eigen::AngleAxisd(wobble * std::sin(2.1 * ang + 0.4), Vec3::UnitX()) *
          Eigen::AngleAxisd(wobble * std::cos(1.3 * ang), Vec3::UnitY());
    }
    traj.times.push_back(t);
    traj.waypoints.emplace_back(pos, Quat(R));
  }
  return traj;
}

Rig make_rig(const Config& cfg, int lidars) {
  Rig rig = make_sr_rig(cfg.horiz_res_deg, cfg.noise_sd);
  for (auto& l : rig.lidars) {
    l.beams = cfg.beams;
    l.scan_period = cfg.scan_period;
    l.max_range = cfg.max_range;
  }
  if (lidars <= 2) {
    rig.lidars.resize(lidars);
    return rig;
  }
  // Additional mounts for the three- and four-LiDAR ablations.
  LidarModel extra = rig.lidars[0];
  extra.extrinsic = Pose(Vec3(0.0, 0.477, -0.220),
                         Quat(Eigen::AngleAxisd(-40.0 * kDeg, Vec3::UnitX())));
  rig.lidars.push_back(extra);
  if (lidars >= 4) {
    extra.extrinsic = Pose(Vec3(0.3, 0.0, -0.1),
                           Quat(Eigen::AngleAxisd(25.0 * kDeg, Vec3::UnitY())));
    rig.lidars.push_back(extra);
  }
  rig.lidars.resize(lidars);
  return rig;
}

Environment make_corridor_room(double room_x, double room_y, double height,
                               double corridor_len, double corridor_w) {
  // Room centered at the origin with a corridor leaving through +x.
  Environment env;
  const double hx = room_x / 2, hy = room_y / 2, hw = corridor_w / 2;
  const Vec3 ez(0, 0, height);
  auto wall = [&](const Vec3& a, const Vec3& b) {
    env.patches.push_back(make_patch(a, Vec3(b - a), ez));
  };
  // Floor and ceiling covering both parts.
  env.patches.push_back(make_patch(Vec3(-hx, -hy, 0), Vec3(room_x, 0, 0),
                                   Vec3(0, room_y, 0)));
  env.patches.push_back(make_patch(Vec3(-hx, -hy, height), Vec3(0, room_y, 0),
                                   Vec3(room_x, 0, 0)));
  env.patches.push_back(make_patch(Vec3(hx, -hw, 0),
                                   Vec3(corridor_len, 0, 0),
                                   Vec3(0, corridor_w, 0)));
  env.patches.push_back(make_patch(Vec3(hx, -hw, height),
                                   Vec3(0, corridor_w, 0),
                                   Vec3(corridor_len, 0, 0)));
  // Room walls; the +x wall leaves the corridor opening.
  wall(Vec3(-hx, -hy, 0), Vec3(hx, -hy, 0));
  wall(Vec3(hx, hy, 0), Vec3(-hx, hy, 0));
  wall(Vec3(-hx, hy, 0), Vec3(-hx, -hy, 0));
  wall(Vec3(hx, -hy, 0), Vec3(hx, -hw, 0));
  wall(Vec3(hx, hw, 0), Vec3(hx, hy, 0));
  // Corridor walls and end cap.
  wall(Vec3(hx, -hw, 0), Vec3(hx + corridor_len, -hw, 0));
  wall(Vec3(hx + corridor_len, hw, 0), Vec3(hx, hw, 0));
  wall(Vec3(hx + corridor_len, -hw, 0), Vec3(hx + corridor_len, hw, 0));
  env.cylinders.push_back({Vec3(-5.5, 4.2, 0), 0.5, height});
  env.cylinders.push_back({Vec3(-5.0, -4.0, 0), 0.5, height});
  env.cylinders.push_back({Vec3(4.5, 4.5, 0), 0.5, height});
  return env;
}

}  // namespace

Pose apply_perturbation(const Pose& pose, const Vec3& rot_deg,
                        const Vec3& trans) {
  return Pose(pose.t + trans,
              Quat(pose.rotation() * euler_xyz_to_matrix(rot_deg)));
}

Scenario make_scenario(const std::string& preset, const Config& cfg,
                       uint64_t seed, int lidars) {
  Scenario sc;
  sc.rig = make_rig(cfg, lidars);
  sc.frame_period = cfg.scan_period;

  if (preset == "sr-room") {
    sc.env = make_room_with_cylinders(20, 15, 5);
    const double duration = 42.0;
    sc.traj = wander(6.0, 4.5, 1.4, duration, seed, true, false);
    sc.frames = int(duration / sc.frame_period) - 8;
  } else if (preset == "sr-planar") {
    sc.env = make_room_with_cylinders(20, 15, 5);
    const double duration = 35.0;
    sc.traj = wander(6.0, 4.5, 1.4, duration, seed, false, true);
    sc.frames = int(duration / sc.frame_period) - 8;
  } else if (preset == "corridor") {
    sc.env = make_corridor(40, 4, 3);
    TrajectorySpec traj;
    auto rng = make_rng(seed, 91);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double duration = 30.0;
    for (double t = 0.0; t <= duration + 1.5; t += 1.5) {
      const double x = -12.0 + 24.0 * t / duration;
      Mat3 R(Eigen::AngleAxisd(0.06 * u(rng), Vec3::UnitZ()));
      R = R * Eigen::AngleAxisd(0.15 * std::sin(0.8 * t), Vec3::UnitX()) *
          Eigen::AngleAxisd(0.15 * std::cos(0.6 * t), Vec3::UnitY());
      traj.times.push_back(t);
      traj.waypoints.emplace_back(
          Vec3(x, 0.4 * std::sin(0.5 * t), 1.5 + 0.2 * std::sin(0.9 * t)),
          Quat(R));
    }
    sc.traj = traj;
    sc.frames = int(duration / sc.frame_period) - 8;
  } else if (preset == "corridor-room") {
    sc.env = make_corridor_room(16, 12, 4, 14, 4);
    TrajectorySpec traj;
    const double duration = 40.0;
    // Room loop, out through the corridor, and back.
    auto add = [&](double t, const Vec3& p, double yaw, double wob) {
      Mat3 R(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
      R = R * Eigen::AngleAxisd(wob, Vec3::UnitX()) *
          Eigen::AngleAxisd(-wob * 0.7, Vec3::UnitY());
      traj.times.push_back(t);
      traj.waypoints.emplace_back(p, Quat(R));
    };
    auto rng = make_rng(seed, 55);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double w = 0.12;
    add(0, Vec3(-4, -3, 1.5), 0.3, 0.0);
    add(4, Vec3(-4.5, 3, 1.5), 1.8, w * u(rng));
    add(8, Vec3(0, 4, 1.6), -0.6, -w);
    add(12, Vec3(3, 0.5, 1.5), -0.3, w);
    add(16, Vec3(7.5, 0, 1.4), 0.0, -w * u(rng));
    add(21, Vec3(12.5, 0.3, 1.5), 0.1, w);
    add(26, Vec3(17.5, -0.3, 1.5), 3.1, -w);
    add(31, Vec3(12, 0, 1.5), 3.2, w * u(rng));
    add(35, Vec3(6.5, 0.2, 1.5), 3.0, -w);
    add(40, Vec3(0, -1, 1.5), 2.4, w);
    add(41.5, Vec3(-2, -2, 1.5), 2.2, 0.0);
    sc.traj = traj;
    sc.frames = int(duration / sc.frame_period) - 8;
  } else if (preset == "fast-room") {
    sc.env = make_room_with_cylinders(20, 15, 5);
    const double duration = 42.0;
    sc.traj = wander(6.0, 4.5, 1.4, duration, seed, true, false);
    sc.frame_period = 3.0 * cfg.scan_period;  // every third frame kept
    sc.frames = int(duration / sc.frame_period) - 4;
  } else {
    throw std::runtime_error("unknown preset '" + preset + "'");
  }
  return sc;
}

FrameSource source_from_scenario(const Scenario& scenario, uint64_t seed,
                                 Kernel kernel) {
  FrameSource src;
  src.manifest.num_lidars = int(scenario.rig.lidars.size());
  src.manifest.num_frames = scenario.frames;
  src.manifest.frame_period = scenario.frame_period;
  src.manifest.rig = scenario.rig;
  for (int k = 0; k < scenario.frames; ++k) {
    src.manifest.frame_stamps.push_back(k * scenario.frame_period);
    src.ground_truth.push_back(
        {k * scenario.frame_period,
         ground_truth(scenario.traj, k, scenario.frame_period)});
  }
  src.load = [scenario, seed, kernel](int k) {
    return simulate_scan(scenario.env, scenario.rig, scenario.traj, k,
                         scenario.frame_period, seed, kernel);
  };
  return src;
}

FrameSource source_from_directory(const std::string& dir) {
  FrameSource src;
  src.manifest = read_manifest(dir + "/manifest.txt");
  src.ground_truth = read_tum(dir + "/gt.txt");
  src.load = [dir, manifest = src.manifest](int k) {
    std::vector<Scan> scans;
    for (int i = 0; i < manifest.num_lidars; ++i) {
      Scan s = read_scan(dir + "/" + scan_filename(k, i));
      s.frame = k;
      s.lidar = i;
      s.stamp = manifest.frame_stamps[k];
      scans.push_back(std::move(s));
    }
    return scans;
  };
  return src;
}

RunResult run_pipeline(const Scenario& scenario, const Config& cfg,
                       const RunOptions& opts) {
  return run_pipeline(source_from_scenario(scenario, opts.seed, opts.kernel),
                      cfg, opts);
}

RunResult run_pipeline(const FrameSource& source, const Config& cfg,
                       const RunOptions& opts) {
  const Rig& rig = source.manifest.rig;
  const double frame_period = source.manifest.frame_period;
  const int I = source.manifest.num_lidars;
  RunResult out;
  out.gt_extrinsics = ground_truth_extrinsics(rig);

  std::vector<PreprocessParams> pp(I);
  for (int i = 0; i < I; ++i) {
    pp[i] = PreprocessParams::for_lidar(rig.lidars[i]);
    pp[i].segment_angle_deg = cfg.segment_angle_deg;
    pp[i].min_cluster_size = cfg.min_cluster_size;
    pp[i].curvature_neighbors = cfg.curvature_neighbors;
    pp[i].curvature_threshold = cfg.curvature_threshold;
    pp[i].sectors = cfg.sectors;
    pp[i].max_sharp_per_sector = cfg.max_sharp_per_sector;
    pp[i].max_edge_per_sector = cfg.max_edge_per_sector;
    pp[i].max_flat_per_sector = cfg.max_flat_per_sector;
    pp[i].planar_stride = cfg.planar_stride;
    pp[i].nn_match_dist = cfg.nn_match_dist;
    pp[i].plane_inlier_dist = cfg.plane_inlier_dist;
    pp[i].map_neighbors = cfg.map_neighbors;
    pp[i].map_match_radius = cfg.map_match_radius;
    pp[i].edge_eigen_ratio = cfg.edge_eigen_ratio;
  }

  const Mat3 Z = cfg.noise_sd * cfg.noise_sd * Mat3::Identity();
  OdometryOptions odom_opts;
  odom_opts.point_cov = Z;
  odom_opts.max_iterations = cfg.odom_iterations;
  odom_opts.kernel = opts.kernel;

  WindowOptions wopts;
  wopts.window = cfg.window;
  wopts.pivot = cfg.pivot;
  wopts.lambda_calib = cfg.lambda_calib;
  wopts.calib_candidates = cfg.calib_candidates;
  wopts.local_leaf = cfg.local_leaf;
  wopts.point_cov = Z;
  wopts.max_iterations = cfg.odom_iterations;
  wopts.remap_threshold = cfg.remap_threshold;
  wopts.kernel = opts.kernel;
  WindowEstimator window(I, wopts);

  MappingOptions mopts;
  mopts.point_noise = Z;
  mopts.alpha = cfg.alpha;
  mopts.trace_gate_cm2 = cfg.trace_gate_cm2;
  mopts.voxel_leaf = cfg.map_leaf;
  mopts.uncertainty_aware = opts.uncertainty_aware;
  mopts.max_iterations = cfg.map_iterations;
  mopts.remap_threshold = cfg.remap_threshold;
  mopts.kernel = opts.kernel;
  Mapper mapper(I, mopts);

  // Fallback extrinsic covariance for runs that skip calibration.
  Mat6 default_cov = Mat6::Zero();
  default_cov.diagonal().head<3>().setConstant(
      cfg.default_calib_sd_trans * cfg.default_calib_sd_trans);
  const double sr = cfg.default_calib_sd_rot_deg * kDeg;
  default_cov.diagonal().tail<3>().setConstant(sr * sr);

  if (!opts.calibrate) {
    std::vector<Pose> ext = opts.fixed_extrinsics
                                ? *opts.fixed_extrinsics
                                : out.gt_extrinsics;
    window.freeze_extrinsics(ext, std::vector<Mat6>(I, default_cov));
    out.rotation_initialized = true;
  }

  std::vector<MotionConstraintQueue> queues(
      I, MotionConstraintQueue(cfg.queue_capacity));
  std::vector<Quat> rot_estimate(I, Quat::Identity());
  std::vector<FeatureCloud> prev_features(I);
  std::vector<Pose> last_rel(I);
  bool have_prev = false;
  bool init_done = !opts.calibrate || I == 1;

  Pose ff_pose;  // accumulated frame-to-frame odometry, primary LiDAR
  bool mapper_ready = false;
  Pose last_mapped_odom;
  int frames_since_map = 0;

  for (int k = 0; k < source.manifest.num_frames; ++k) {
    const double stamp = source.manifest.frame_stamps[k];
    const auto scans = source.load(k);

    // Per-LiDAR preprocessing and scan-to-scan motion, independent tasks.
    std::vector<FeatureCloud> features(I);
    std::vector<FrameMotionResult> rel(I);
#pragma omp parallel for schedule(dynamic, 1) if (opts.kernel == Kernel::OpenMP)
    for (int i = 0; i < I; ++i) {
      FeatureCloud feat = extract_frame(from_scan(scans[i]), pp[i]);
      if (have_prev) {
        OdometryOptions oo = odom_opts;
        oo.kernel = Kernel::Serial;  // already parallel across LiDARs
        rel[i] = estimate_frame_motion(prev_features[i], feat, last_rel[i],
                                       pp[i], oo);
      } else {
        rel[i].motion = Pose();
        rel[i].low_confidence = true;
      }
      // Correct the rolling-shutter skew with the scan-period share of the
      // frame motion, then keep the features for the next frame.
      const double share =
          std::min(1.0, rig.lidars[i].scan_period / frame_period);
      const Vec3 phi = log_so3(rel[i].motion.rotation());
      const Pose within(share * rel[i].motion.t,
                        Quat(exp_so3(share * phi)));
      features[i] = undistort(feat, within);
      prev_features[i] = features[i];
      last_rel[i] = rel[i].motion;
    }
    have_prev = true;

    FrameLog log;
    log.frame = k;
    log.phase = init_done ? (window.fully_converged() ? 3 : 2) : 1;

    // Phase 1: hand-eye initialization from paired relative motions.
    if (!init_done && k > 0) {
      bool all_rot = true;
      for (int i = 1; i < I; ++i) {
        if (!rel[0].low_confidence && !rel[i].low_confidence) {
          queues[i].push(rel[0].motion, rel[i].motion);
        }
        auto rot = solve_rotation(queues[i], rot_estimate[i], cfg.sigma_rot,
                                  cfg.hand_eye_huber_deg * kDeg,
                                  cfg.min_hand_eye_pairs);
        rot_estimate[i] = rot.q;
        if (i == 1) log.sigma_min2 = rot.sigma_min2;
        all_rot &= rot.converged;
      }
      if (all_rot) {
        std::vector<Pose> init_ext(I);
        for (int i = 1; i < I; ++i) {
          const bool planar =
              queues[i].max_primary_tz() < cfg.planar_tz_threshold;
          auto trans =
              solve_translation(queues[i], rot_estimate[i].toRotationMatrix(),
                                planar);
          init_ext[i] = Pose(trans.ok ? trans.t : Vec3::Zero(),
                             rot_estimate[i]);
        }
        window.set_initial_extrinsics(init_ext);
        out.rotation_initialized = true;
        init_done = true;
        log.phase = 2;
      }
    }

    // Sliding-window odometry (all phases).
    const auto step = window.push_frame(features, rel[0].motion);
    if (I > 1) log.lambda = step.lambda_ext[1];
    out.logs.push_back(log);

    ff_pose = ff_pose * rel[0].motion;
    out.frame_to_frame.push_back({stamp, ff_pose});
    out.odometry.push_back({stamp, step.latest_pose});
    out.ground_truth.push_back(source.ground_truth[k]);

    // Mapping at half the odometry rate once the extrinsics are settled.
    if (window.fully_converged()) {
      if (!mapper_ready) {
        std::vector<Mat6> covs(I, Mat6::Zero());
        for (int i = 1; i < I; ++i) {
          covs[i] = window.calib_cov(i);
          if (covs[i].norm() == 0.0) covs[i] = default_cov;
        }
        mapper.set_extrinsics(window.extrinsics(), covs);
        mapper_ready = true;
        last_mapped_odom = step.latest_pose;
        frames_since_map = 0;
      }
      if (frames_since_map % cfg.map_every == 0) {
        const Pose rel_map = last_mapped_odom.inverse() * step.latest_pose;
        const auto mstep = mapper.process(features, rel_map);
        if (mstep.solved) {
          out.mapping.push_back({stamp, mstep.pose});
          last_mapped_odom = step.latest_pose;
        }
      }
      ++frames_since_map;
    }

    if (opts.calibrate_only && window.fully_converged()) break;
  }

  out.extrinsics = window.extrinsics();
  out.calib_cov.resize(I, Mat6::Zero());
  for (int i = 0; i < I; ++i) out.calib_cov[i] = window.calib_cov(i);
  out.converged = window.fully_converged() && I > 1 && init_done;
  out.map = mapper.map();
  return out;
}

double merged_cloud_mme(const Scenario& scenario, const Pose& extrinsic,
                        int first_frame, int frames, double radius,
                        uint64_t seed) {
  double sum = 0.0;
  int used = 0;
  for (int k = first_frame; k < first_frame + frames; ++k) {
    const auto scans = simulate_scan(scenario.env, scenario.rig, scenario.traj,
                                     k, scenario.frame_period, seed);
    std::vector<Vec3> merged;
    for (const auto& sp : scans[0].points)
      merged.emplace_back(sp.x, sp.y, sp.z);
    for (const auto& sp : scans[1].points)
      merged.push_back(extrinsic * Vec3(sp.x, sp.y, sp.z));
    const auto res = mme(merged, radius);
    if (res.defined) {
      sum += res.value;
      ++used;
    }
  }
  if (used == 0) throw std::runtime_error("mme undefined on every frame");
  return sum / used;
}

}  // namespace mloam
