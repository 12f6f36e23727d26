#pragma once

#include <vector>

#include "mloam/kdtree.h"
#include "mloam/se3.h"
#include "mloam/sim.h"

// Per-LiDAR measurement preprocessing: range-image projection, cluster-based
// noise removal, curvature feature extraction and correspondence search.
// Every step is deterministic; ties are broken by point index.

namespace mloam {

struct PointT {
  Vec3 p;
  int ring = 0;
  double tau = 1.0;
};
using Cloud = std::vector<PointT>;

Cloud from_scan(const Scan& scan);
Cloud transformed(const Cloud& cloud, const Pose& pose);

struct PreprocessParams {
  int beams = 16;
  double horiz_res_deg = 0.2;
  double segment_angle_deg = 60.0;
  int min_cluster_size = 30;
  int curvature_neighbors = 5;  // each side; |S| = 10
  double curvature_threshold = 0.1;
  int sectors = 6;
  int max_sharp_per_sector = 2;
  int max_edge_per_sector = 20;
  int max_flat_per_sector = 4;
  int planar_stride = 6;        // decimation of the bulk planar set
  double nn_match_dist = 1.0;
  double plane_inlier_dist = 0.2;
  int map_neighbors = 5;
  double map_match_radius = 1.0;
  double edge_eigen_ratio = 3.0;

  static PreprocessParams for_lidar(const LidarModel& lidar);
};

/// Row = ring, col recovered from the firing-time fraction. The projection
/// is lossless for simulator scans; any cell claimed twice counts as a
/// collision (first point wins).
struct RangeImage {
  int rows = 0, cols = 0;
  std::vector<double> range;     // rows*cols; < 0 means empty
  std::vector<int> point_index;  // reverse index into the cloud; -1 empty
  int collisions = 0;

  int at(int row, int col) const { return point_index[size_t(row) * cols + col]; }
  double range_at(int row, int col) const {
    return range[size_t(row) * cols + col];
  }
};

RangeImage project(const Cloud& cloud, const PreprocessParams& params);

struct SegmentationResult {
  std::vector<int> labels;  // per input point; -1 = removed
  Cloud denoised;
  std::vector<int> denoised_index;  // denoised -> input index
  int num_clusters = 0;
};

/// Breadth-first clustering over the range image; neighbors merge when the
/// line connecting them is closer than `segment_angle_deg` to perpendicular
/// w.r.t. the beam. Clusters below min_cluster_size are dropped.
SegmentationResult segment(const Cloud& cloud, const RangeImage& image,
                           const PreprocessParams& params);

struct FeatureCloud {
  Cloud edges;         // E
  Cloud planars;       // H
  Cloud sharp_edges;   // E-hat, subset of E
  Cloud flat_planars;  // H-hat, subset of H
};

FeatureCloud extract_features(const Cloud& denoised, const RangeImage& image,
                              const std::vector<int>& denoised_index,
                              const PreprocessParams& params);

/// project + segment + extract in one go.
FeatureCloud extract_frame(const Cloud& cloud, const PreprocessParams& params);

struct Correspondence {
  enum Kind { kEdge, kPlanar };
  Kind kind = kPlanar;
  Vec3 p = Vec3::Zero();  // reference point in its own (current) frame
  double tau = 1.0;
  // Planar geometry in the target frame: w.x + d = 0, |w| = 1.
  Vec3 w = Vec3::UnitZ();
  double d = 0.0;
  // Edge geometry in the target frame.
  Vec3 line_p = Vec3::Zero();
  Vec3 line_dir = Vec3::UnitX();
};

/// Frame-to-frame correspondences: 2-NN edge lines and 3-NN planes from the
/// previous feature cloud for the sharp subsets of the current one.
std::vector<Correspondence> match_scan_to_scan(const FeatureCloud& prev,
                                               const FeatureCloud& curr,
                                               const PreprocessParams& params);

/// Map correspondences for already-transformed query points. `query[i]` is
/// the point expressed in the map frame; `original[i]` the raw sensor-frame
/// point stored into the correspondence.
std::vector<Correspondence> match_edges_to_map(
    const std::vector<Vec3>& query, const Cloud& original,
    const KdTree3& edge_tree, const PreprocessParams& params);
std::vector<Correspondence> match_planars_to_map(
    const std::vector<Vec3>& query, const Cloud& original,
    const KdTree3& planar_tree, const PreprocessParams& params);

}  // namespace mloam
