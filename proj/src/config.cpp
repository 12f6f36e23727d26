#include "mloam/config.h"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mloam {

void Config::set(const std::string& key, const std::string& value) {
  auto d = [&] { return std::stod(value); };
  auto i = [&] { return std::stoi(value); };
  if (key == "sigma_rot") sigma_rot = d();
  else if (key == "lambda_calib") lambda_calib = d();
  else if (key == "calib_candidates") calib_candidates = i();
  else if (key == "window") window = i();
  else if (key == "pivot") pivot = i();
  else if (key == "trace_gate_cm2") trace_gate_cm2 = d();
  else if (key == "alpha") alpha = d();
  else if (key == "noise_sd") noise_sd = d();
  else if (key == "beams") beams = i();
  else if (key == "horiz_res_deg") horiz_res_deg = d();
  else if (key == "scan_period") scan_period = d();
  else if (key == "max_range") max_range = d();
  else if (key == "huber_delta") huber_delta = d();
  else if (key == "lm_damping") lm_damping = d();
  else if (key == "odom_iterations") odom_iterations = i();
  else if (key == "map_iterations") map_iterations = i();
  else if (key == "remap_threshold") remap_threshold = d();
  else if (key == "queue_capacity") queue_capacity = i();
  else if (key == "min_hand_eye_pairs") min_hand_eye_pairs = i();
  else if (key == "hand_eye_huber_deg") hand_eye_huber_deg = d();
  else if (key == "planar_tz_threshold") planar_tz_threshold = d();
  else if (key == "curvature_threshold") curvature_threshold = d();
  else if (key == "curvature_neighbors") curvature_neighbors = i();
  else if (key == "sectors") sectors = i();
  else if (key == "max_sharp_per_sector") max_sharp_per_sector = i();
  else if (key == "max_edge_per_sector") max_edge_per_sector = i();
  else if (key == "max_flat_per_sector") max_flat_per_sector = i();
  else if (key == "planar_stride") planar_stride = i();
  else if (key == "min_cluster_size") min_cluster_size = i();
  else if (key == "segment_angle_deg") segment_angle_deg = d();
  else if (key == "nn_match_dist") nn_match_dist = d();
  else if (key == "plane_inlier_dist") plane_inlier_dist = d();
  else if (key == "map_neighbors") map_neighbors = i();
  else if (key == "map_match_radius") map_match_radius = d();
  else if (key == "edge_eigen_ratio") edge_eigen_ratio = d();
  else if (key == "local_leaf") local_leaf = d();
  else if (key == "map_leaf") map_leaf = d();
  else if (key == "map_every") map_every = i();
  else if (key == "default_calib_sd_rot_deg") default_calib_sd_rot_deg = d();
  else if (key == "default_calib_sd_trans") default_calib_sd_trans = d();
  else if (key == "mme_radius") mme_radius = d();
  else if (key == "ate_alignment") ate_alignment = value;
  else if (key == "rpe_distances") rpe_distances = value;
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string key, value;
    std::istringstream ss(line);
    if (!(ss >> key)) continue;  // blank line
    ss >> value;
    if (value == "=") ss >> value;
    if (value.empty()) {
      throw std::runtime_error("config: missing value at line " +
                               std::to_string(lineno));
    }
    cfg.set(key, value);
  }
  return cfg;
}

}  // namespace mloam
