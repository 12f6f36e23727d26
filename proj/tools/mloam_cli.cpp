// Command-line driver: simulate | calibrate | slam | eval.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mloam/pipeline.h"

using namespace mloam;
namespace fs = std::filesystem;

namespace {

Config load_config(const std::string& path) {
  if (path.empty()) return Config();
  return Config::load(path);
}

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string tok;
  while (ss >> tok) {
    if (tok == ",") continue;
    std::replace(tok.begin(), tok.end(), ',', ' ');
    std::istringstream ts(tok);
    double v;
    while (ts >> v) out.push_back(v);
  }
  return out;
}

void write_extrinsics(const std::string& path, const std::vector<Pose>& ext,
                      const std::vector<Mat6>& cov, bool converged) {
  std::ofstream f(path);
  f << "converged " << (converged ? 1 : 0) << "\n";
  char buf[512];
  for (size_t i = 0; i < ext.size(); ++i) {
    const Vec3 e = matrix_to_euler_xyz(ext[i].rotation());
    std::snprintf(buf, sizeof(buf),
                  "extrinsic %zu %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", i,
                  ext[i].t.x(), ext[i].t.y(), ext[i].t.z(), ext[i].q.x(),
                  ext[i].q.y(), ext[i].q.z(), ext[i].q.w());
    f << buf;
    std::snprintf(buf, sizeof(buf), "euler_xyz_deg %zu %.4f %.4f %.4f\n", i,
                  e.x(), e.y(), e.z());
    f << buf;
    if (i < cov.size()) {
      f << "calib_cov " << i;
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
          std::snprintf(buf, sizeof(buf), " %.12e", cov[i](r, c));
          f << buf;
        }
      f << "\n";
    }
  }
}

void write_logs(const std::string& path, const std::vector<FrameLog>& logs) {
  std::ofstream f(path);
  f << "frame,phase,sigma_min2,lambda\n";
  char buf[128];
  for (const auto& l : logs) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9f,%.9f\n", l.frame, l.phase,
                  l.sigma_min2, l.lambda);
    f << buf;
  }
}

void write_outputs(const std::string& dir, const RunResult& res) {
  write_tum(dir + "/traj_frame_to_frame.txt", res.frame_to_frame);
  write_tum(dir + "/traj_odometry.txt", res.odometry);
  if (!res.mapping.empty()) write_tum(dir + "/traj_mapping.txt", res.mapping);
  write_extrinsics(dir + "/extrinsics.txt", res.extrinsics, res.calib_cov,
                   res.converged);
  write_logs(dir + "/calib_log.csv", res.logs);
  // Map export: x y z trace kind.
  std::ofstream f(dir + "/map.txt");
  char buf[256];
  for (const auto& mp : res.map.edges) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.8f edge\n",
                  mp.point.mean.x(), mp.point.mean.y(), mp.point.mean.z(),
                  mp.trace_cm2 * 1e-4);
    f << buf;
  }
  for (const auto& mp : res.map.planars) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.8f planar\n",
                  mp.point.mean.x(), mp.point.mean.y(), mp.point.mean.z(),
                  mp.trace_cm2 * 1e-4);
    f << buf;
  }
}

int cmd_simulate(const std::string& preset, const std::string& config,
                 uint64_t seed, int lidars, const std::string& out_dir) {
  const Config cfg = load_config(config);
  const Scenario sc = make_scenario(preset, cfg, seed, lidars);
  fs::create_directories(out_dir);

  Manifest m;
  m.num_lidars = lidars;
  m.num_frames = sc.frames;
  m.frame_period = sc.frame_period;
  m.rig = sc.rig;
  Trajectory gt;
  for (int k = 0; k < sc.frames; ++k) {
    m.frame_stamps.push_back(k * sc.frame_period);
    gt.push_back({k * sc.frame_period, ground_truth(sc.traj, k, sc.frame_period)});
    const auto scans =
        simulate_scan(sc.env, sc.rig, sc.traj, k, sc.frame_period, seed);
    for (int i = 0; i < lidars; ++i) {
      write_scan(out_dir + "/" + scan_filename(k, i), scans[i]);
    }
  }
  write_manifest(out_dir + "/manifest.txt", m);
  write_tum(out_dir + "/gt.txt", gt);
  std::printf("simulate: wrote %d frames x %d LiDARs to %s\n", sc.frames,
              lidars, out_dir.c_str());
  return 0;
}

int cmd_run(const std::string& preset, const std::string& data,
            const std::string& config, uint64_t seed, int lidars,
            const std::string& inject, bool uncertainty_off,
            const std::string& out_dir, bool calibrate_only) {
  const Config cfg = load_config(config);
  FrameSource source = data.empty()
                           ? source_from_scenario(
                                 make_scenario(preset, cfg, seed, lidars), seed)
                           : source_from_directory(data);

  RunOptions opts;
  opts.seed = seed;
  opts.uncertainty_aware = !uncertainty_off;
  opts.calibrate_only = calibrate_only;
  if (!inject.empty()) {
    const auto v = parse_numbers(inject);
    if (v.size() != 6) {
      std::fprintf(stderr, "--inject-ext-perturb expects 6 numbers\n");
      return 2;
    }
    opts.calibrate = false;
    std::vector<Pose> ext = ground_truth_extrinsics(source.manifest.rig);
    for (size_t i = 1; i < ext.size(); ++i) {
      ext[i] = apply_perturbation(ext[i], Vec3(v[0], v[1], v[2]),
                                  Vec3(v[3], v[4], v[5]));
    }
    opts.fixed_extrinsics = ext;
  }

  const RunResult res = run_pipeline(source, cfg, opts);
  fs::create_directories(out_dir);
  write_outputs(out_dir, res);

  if (calibrate_only) {
    if (!res.converged) {
      std::printf("calibrate: NOT CONVERGED (rotation initialized: %s)\n",
                  res.rotation_initialized ? "yes" : "no");
    } else {
      const Vec3 e = matrix_to_euler_xyz(res.extrinsics[1].rotation());
      std::printf("calibrate: converged; extrinsic 1 euler_xyz_deg %.3f %.3f "
                  "%.3f t %.4f %.4f %.4f\n",
                  e.x(), e.y(), e.z(), res.extrinsics[1].t.x(),
                  res.extrinsics[1].t.y(), res.extrinsics[1].t.z());
    }
  } else {
    std::printf("slam: %zu odometry poses, %zu mapping poses, map size %zu\n",
                res.odometry.size(), res.mapping.size(), res.map.size());
  }
  return 0;
}

int cmd_eval(const std::string& dir, const std::string& config) {
  const Config cfg = load_config(config);
  const Trajectory gt = read_tum(dir + "/gt.txt");
  std::ofstream report(dir + "/report.txt");
  std::ofstream csv(dir + "/metrics.csv");
  csv << "metric,series,value\n";
  char buf[512];

  const bool yaw_only = cfg.ate_alignment == "yaw";
  for (const std::string name :
       {"traj_frame_to_frame", "traj_odometry", "traj_mapping"}) {
    const std::string path = dir + "/" + name + ".txt";
    if (!fs::exists(path)) continue;
    const Trajectory est = read_tum(path);
    const auto a = ate(est, gt, yaw_only);
    std::snprintf(buf, sizeof(buf), "ATE %s: rmse_t %.4f m rmse_R %.4f deg (%d pairs)\n",
                  name.c_str(), a.rmse_t, a.rmse_r_deg, a.pairs);
    report << buf;
    csv << "ate_t," << name << "," << a.rmse_t << "\n";
    csv << "ate_r," << name << "," << a.rmse_r_deg << "\n";
    const auto dists = parse_numbers(cfg.rpe_distances);
    const auto r = rpe(est, gt, dists);
    for (size_t i = 0; i < dists.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "RPE %s @ %.0f m: median_t %.4f m median_R %.4f deg\n",
                    name.c_str(), dists[i], r.median_t[i], r.median_r_deg[i]);
      report << buf;
      csv << "rpe_t_" << dists[i] << "," << name << "," << r.median_t[i] << "\n";
    }
    std::snprintf(buf, sizeof(buf), "RPE %s overall median: %.4f %%\n",
                  name.c_str(), r.overall_median_t_pct);
    report << buf;
    csv << "rpe_pct," << name << "," << r.overall_median_t_pct << "\n";
  }

  // Extrinsic EGT against the manifest rig, when both files exist.
  if (fs::exists(dir + "/extrinsics.txt") && fs::exists(dir + "/manifest.txt")) {
    const Manifest m = read_manifest(dir + "/manifest.txt");
    std::ifstream f(dir + "/extrinsics.txt");
    std::string key;
    while (f >> key) {
      if (key == "extrinsic") {
        size_t i;
        double tx, ty, tz, qx, qy, qz, qw;
        f >> i >> tx >> ty >> tz >> qx >> qy >> qz >> qw;
        if (i == 0 || int(i) >= m.num_lidars) continue;
        const Pose est(Vec3(tx, ty, tz), Quat(qw, qx, qy, qz));
        const auto [er, et] = egt(est, m.rig.lidars[i].extrinsic);
        std::snprintf(buf, sizeof(buf), "EGT extrinsic %zu: %.4f deg %.4f m\n",
                      i, er, et);
        report << buf;
        csv << "egt_r,ext" << i << "," << er << "\n";
        csv << "egt_t,ext" << i << "," << et << "\n";
      } else {
        std::string rest;
        std::getline(f, rest);
      }
    }
  }

  // Map entropy at the configured radius.
  if (fs::exists(dir + "/map.txt")) {
    std::ifstream f(dir + "/map.txt");
    std::vector<Vec3> cloud;
    double x, y, z, tr;
    std::string kind;
    while (f >> x >> y >> z >> tr >> kind) cloud.emplace_back(x, y, z);
    const auto m = mme(cloud, cfg.mme_radius);
    if (m.defined) {
      std::snprintf(buf, sizeof(buf), "MME map (r=%.2f): %.4f over %d points\n",
                    cfg.mme_radius, m.value, m.used);
      report << buf;
      csv << "mme,map," << m.value << "\n";
    } else {
      report << "MME map: undefined (too few qualifying points)\n";
    }
  }

  std::printf("eval: report written to %s/report.txt\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-LiDAR calibration, odometry and mapping toolkit"};
  app.require_subcommand(1);

  std::string preset = "sr-room", config, data, out_dir = "out", inject;
  uint64_t seed = 0;
  int lidars = 2;
  bool uncertainty_off = false;

  auto add_common = [&](CLI::App* cmd, bool with_preset = true) {
    cmd->add_option("--config", config, "config file (key value per line)");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--out", out_dir, "output directory");
    if (with_preset) {
      cmd->add_option("--preset", preset,
                      "sr-room | sr-planar | corridor | corridor-room | fast-room");
      cmd->add_option("--lidars", lidars, "number of LiDARs");
    }
  };

  auto* sim = app.add_subcommand("simulate", "generate scans + ground truth");
  add_common(sim);

  auto* calib = app.add_subcommand("calibrate", "run phases 1-2 only");
  add_common(calib);
  calib->add_option("--data", data, "read scans from a simulate output dir");

  auto* slam = app.add_subcommand("slam", "full pipeline");
  add_common(slam);
  slam->add_option("--data", data, "read scans from a simulate output dir");
  slam->add_option("--inject-ext-perturb", inject,
                   "\"rx ry rz tx ty tz\" (deg, m) on the true extrinsics");
  slam->add_flag_callback("--uncertainty-off",
                          [&] { uncertainty_off = true; },
                          "disable the uncertainty-aware path");
  std::string uncertainty = "on";
  slam->add_option("--uncertainty", uncertainty, "on | off");

  auto* eval = app.add_subcommand("eval", "metrics report for an output dir");
  eval->add_option("--config", config, "config file");
  std::string eval_dir;
  eval->add_option("--dir", eval_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      return cmd_simulate(preset, config, seed, lidars, out_dir);
    }
    if (calib->parsed()) {
      return cmd_run(preset, data, config, seed, lidars, "", false, out_dir,
                     true);
    }
    if (slam->parsed()) {
      if (uncertainty == "off") uncertainty_off = true;
      return cmd_run(preset, data, config, seed, lidars, inject,
                     uncertainty_off, out_dir, false);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_dir, config);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
