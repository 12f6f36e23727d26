#include "mloam/preprocess.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace mloam {

Cloud from_scan(const Scan& scan) {
  Cloud out;
  out.reserve(scan.points.size());
  for (const ScanPoint& sp : scan.points) {
    PointT pt;
    pt.p = Vec3(sp.x, sp.y, sp.z);
    pt.ring = int(std::lround(sp.intensity));
    pt.tau = sp.tau;
    out.push_back(pt);
  }
  return out;
}

Cloud transformed(const Cloud& cloud, const Pose& pose) {
  Cloud out = cloud;
  for (auto& pt : out) pt.p = pose * pt.p;
  return out;
}

PreprocessParams PreprocessParams::for_lidar(const LidarModel& lidar) {
  PreprocessParams p;
  p.beams = lidar.beams;
  p.horiz_res_deg = lidar.horiz_res_deg;
  return p;
}

RangeImage project(const Cloud& cloud, const PreprocessParams& params) {
  RangeImage img;
  img.rows = params.beams;
  img.cols = int(std::lround(360.0 / params.horiz_res_deg));
  img.range.assign(size_t(img.rows) * img.cols, -1.0);
  img.point_index.assign(size_t(img.rows) * img.cols, -1);

  for (size_t i = 0; i < cloud.size(); ++i) {
    const PointT& pt = cloud[i];
    const int row = pt.ring;
    const int col =
        std::clamp(int(std::lround(pt.tau * img.cols)) - 1, 0, img.cols - 1);
    if (row < 0 || row >= img.rows) {
      ++img.collisions;
      continue;
    }
    const size_t cell = size_t(row) * img.cols + col;
    if (img.point_index[cell] >= 0) {
      ++img.collisions;
      continue;
    }
    img.point_index[cell] = int(i);
    img.range[cell] = pt.p.norm();
  }
  return img;
}

SegmentationResult segment(const Cloud& cloud, const RangeImage& image,
                           const PreprocessParams& params) {
  SegmentationResult out;
  out.labels.assign(cloud.size(), -1);

  const int rows = image.rows, cols = image.cols;
  const double v_step =
      rows > 1 ? (30.0 / (rows - 1)) * M_PI / 180.0 : 2.0 * M_PI / 180.0;
  const double h_step = params.horiz_res_deg * M_PI / 180.0;
  const double merge_angle = params.segment_angle_deg * M_PI / 180.0;

  std::vector<int> cell_label(size_t(rows) * cols, -1);
  int next = 0;
  std::vector<std::vector<size_t>> clusters;

  auto mergeable = [&](double d1, double d2, double alpha) {
    const double lo = std::min(d1, d2), hi = std::max(d1, d2);
    const double beta =
        std::atan2(lo * std::sin(alpha), hi - lo * std::cos(alpha));
    return beta > merge_angle;
  };

  for (int r0 = 0; r0 < rows; ++r0) {
    for (int c0 = 0; c0 < cols; ++c0) {
      const size_t cell0 = size_t(r0) * cols + c0;
      if (image.point_index[cell0] < 0 || cell_label[cell0] >= 0) continue;
      const int label = next++;
      clusters.emplace_back();
      std::deque<std::pair<int, int>> queue{{r0, c0}};
      cell_label[cell0] = label;
      while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        const size_t cell = size_t(r) * cols + c;
        clusters[label].push_back(cell);
        const double d = image.range[cell];
        // 4-neighborhood with azimuth wrap.
        const int nbr[4][2] = {{r - 1, c},
                               {r + 1, c},
                               {r, (c + 1) % cols},
                               {r, (c - 1 + cols) % cols}};
        const double steps[4] = {v_step, v_step, h_step, h_step};
        for (int k = 0; k < 4; ++k) {
          const int rn = nbr[k][0], cn = nbr[k][1];
          if (rn < 0 || rn >= rows) continue;
          const size_t ncell = size_t(rn) * cols + cn;
          if (image.point_index[ncell] < 0 || cell_label[ncell] >= 0) continue;
          if (!mergeable(d, image.range[ncell], steps[k])) continue;
          cell_label[ncell] = label;
          queue.emplace_back(rn, cn);
        }
      }
    }
  }

  out.num_clusters = 0;
  for (const auto& cluster : clusters) {
    if (int(cluster.size()) < params.min_cluster_size) continue;
    const int id = out.num_clusters++;
    for (size_t cell : cluster) {
      out.labels[image.point_index[cell]] = id;
    }
  }
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (out.labels[i] < 0) continue;
    out.denoised.push_back(cloud[i]);
    out.denoised_index.push_back(int(i));
  }
  return out;
}

namespace {

struct RingRun {
  std::vector<int> idx;  // indices into the denoised cloud, azimuth order
  int first_col = 0, last_col = 0;
};

// Contiguous runs per ring; a gap of empty columns breaks a run, so border
// points with one-sided neighborhoods can be excluded from selection. Runs
// touching the azimuth seam (column 0 / column cols-1) are stitched, since
// they are physically contiguous on a spinning LiDAR.
std::vector<RingRun> ring_runs(const RangeImage& image,
                               const std::vector<int>& denoised_index) {
  std::vector<int> inv;
  inv.assign(denoised_index.empty()
                 ? 0
                 : *std::max_element(denoised_index.begin(),
                                     denoised_index.end()) +
                       1,
             -1);
  for (size_t i = 0; i < denoised_index.size(); ++i)
    inv[denoised_index[i]] = int(i);

  std::vector<RingRun> runs;
  const int gap_max = 5;
  for (int r = 0; r < image.rows; ++r) {
    std::vector<RingRun> ring;
    RingRun run;
    int last_col = -10 * gap_max;
    for (int c = 0; c < image.cols; ++c) {
      const int pi = image.at(r, c);
      if (pi < 0 || pi >= int(inv.size()) || inv[pi] < 0) continue;
      if (c - last_col > gap_max && !run.idx.empty()) {
        run.last_col = last_col;
        ring.push_back(std::move(run));
        run = RingRun();
      }
      if (run.idx.empty()) run.first_col = c;
      run.idx.push_back(inv[pi]);
      last_col = c;
    }
    if (!run.idx.empty()) {
      run.last_col = last_col;
      ring.push_back(std::move(run));
    }
    if (ring.size() >= 2 && ring.front().first_col <= gap_max &&
        image.cols - 1 - ring.back().last_col <= gap_max) {
      // The last run continues into the first one across the seam.
      RingRun& tail = ring.back();
      tail.idx.insert(tail.idx.end(), ring.front().idx.begin(),
                      ring.front().idx.end());
      tail.last_col = ring.front().last_col + image.cols;
      ring.erase(ring.begin());
    }
    for (auto& rr : ring) runs.push_back(std::move(rr));
  }
  return runs;
}

}  // namespace

FeatureCloud extract_features(const Cloud& denoised, const RangeImage& image,
                              const std::vector<int>& denoised_index,
                              const PreprocessParams& params) {
  FeatureCloud out;
  const int K = params.curvature_neighbors;

  const auto runs = ring_runs(image, denoised_index);
  for (const RingRun& run : runs) {
    const int n = int(run.idx.size());
    if (n < 2 * K + 1) continue;  // ring segment too short

    std::vector<double> curv(n, 0.0);
    std::vector<char> picked(n, 0);
    for (int i = K; i < n - K; ++i) {
      Vec3 sum = Vec3::Zero();
      for (int j = -K; j <= K; ++j) {
        if (j == 0) continue;
        sum += denoised[run.idx[i + j]].p - denoised[run.idx[i]].p;
      }
      curv[i] = sum.norm() / (2.0 * K * denoised[run.idx[i]].p.norm());
    }
    // Border points have one-sided neighborhoods; never pick them.
    for (int i = 0; i < std::min(K, n); ++i) picked[i] = 1;
    for (int i = std::max(0, n - K); i < n; ++i) picked[i] = 1;

    auto suppress = [&](int i) {
      picked[i] = 1;
      for (int l = 1; l <= K && i + l < n; ++l) {
        if ((denoised[run.idx[i + l]].p - denoised[run.idx[i + l - 1]].p)
                .squaredNorm() > 0.05)
          break;
        picked[i + l] = 1;
      }
      for (int l = 1; l <= K && i - l >= 0; ++l) {
        if ((denoised[run.idx[i - l]].p - denoised[run.idx[i - l + 1]].p)
                .squaredNorm() > 0.05)
          break;
        picked[i - l] = 1;
      }
    };

    for (int s = 0; s < params.sectors; ++s) {
      const int sp = s * n / params.sectors;
      const int ep = (s + 1) * n / params.sectors;
      if (ep - sp < 2) continue;
      std::vector<int> order(ep - sp);
      std::iota(order.begin(), order.end(), sp);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return curv[a] > curv[b] || (curv[a] == curv[b] && a < b);
      });

      // Edges: highest curvature above the threshold.
      int edge_count = 0;
      for (int i : order) {
        if (edge_count >= params.max_edge_per_sector) break;
        if (picked[i] || curv[i] <= params.curvature_threshold) continue;
        ++edge_count;
        if (edge_count <= params.max_sharp_per_sector)
          out.sharp_edges.push_back(denoised[run.idx[i]]);
        out.edges.push_back(denoised[run.idx[i]]);
        suppress(i);
      }
      // Flattest points below the threshold.
      int flat_count = 0;
      for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int i = *it;
        if (flat_count >= params.max_flat_per_sector) break;
        if (picked[i] || curv[i] > params.curvature_threshold) continue;
        ++flat_count;
        out.flat_planars.push_back(denoised[run.idx[i]]);
        out.planars.push_back(denoised[run.idx[i]]);
        suppress(i);
      }
      // Remaining low-curvature points, decimated by a fixed stride.
      int count = 0;
      for (int i = sp; i < ep; ++i) {
        if (picked[i] || curv[i] > params.curvature_threshold) continue;
        if (count++ % params.planar_stride == 0)
          out.planars.push_back(denoised[run.idx[i]]);
      }
    }
  }
  return out;
}

FeatureCloud extract_frame(const Cloud& cloud, const PreprocessParams& params) {
  const RangeImage image = project(cloud, params);
  const SegmentationResult seg = segment(cloud, image, params);
  return extract_features(seg.denoised, image, seg.denoised_index, params);
}

std::vector<Correspondence> match_scan_to_scan(const FeatureCloud& prev,
                                               const FeatureCloud& curr,
                                               const PreprocessParams& params) {
  std::vector<Correspondence> out;

  std::vector<Vec3> edge_pts(prev.edges.size());
  for (size_t i = 0; i < prev.edges.size(); ++i) edge_pts[i] = prev.edges[i].p;
  std::vector<Vec3> planar_pts(prev.planars.size());
  for (size_t i = 0; i < prev.planars.size(); ++i)
    planar_pts[i] = prev.planars[i].p;
  KdTree3 edge_tree(edge_pts);
  KdTree3 planar_tree(planar_pts);

  for (const PointT& pt : curr.sharp_edges) {
    if (edge_tree.size() < 2) break;
    const auto nn = edge_tree.knn(pt.p, 2, params.nn_match_dist);
    if (nn.size() < 2) continue;
    const Vec3 a = edge_pts[nn[0]], b = edge_pts[nn[1]];
    if ((b - a).norm() < 1e-6) continue;  // degenerate pair
    Correspondence c;
    c.kind = Correspondence::kEdge;
    c.p = pt.p;
    c.tau = pt.tau;
    c.line_p = a;
    c.line_dir = (b - a).normalized();
    out.push_back(c);
  }

  for (const PointT& pt : curr.flat_planars) {
    if (planar_tree.size() < 3) break;
    const auto nn = planar_tree.knn(pt.p, 5, params.nn_match_dist);
    if (nn.size() < 3) continue;
    const Vec3 a = planar_pts[nn[0]], b = planar_pts[nn[1]],
               e = planar_pts[nn[2]];
    const Vec3 cross = (b - a).cross(e - a);
    if (cross.norm() < 1e-8) continue;  // collinear triple
    Correspondence c;
    c.kind = Correspondence::kPlanar;
    c.p = pt.p;
    c.tau = pt.tau;
    c.w = cross.normalized();
    c.d = -c.w.dot(a);
    // The local neighborhood must actually form a plane; triples straddling
    // a corner leave further neighbors far off the fitted patch.
    bool planar_ok = true;
    for (size_t j = 3; j < nn.size(); ++j) {
      if (std::abs(c.w.dot(planar_pts[nn[j]]) + c.d) >
          params.plane_inlier_dist) {
        planar_ok = false;
        break;
      }
    }
    if (!planar_ok) continue;
    out.push_back(c);
  }
  return out;
}

std::vector<Correspondence> match_edges_to_map(const std::vector<Vec3>& query,
                                               const Cloud& original,
                                               const KdTree3& edge_tree,
                                               const PreprocessParams& params) {
  std::vector<Correspondence> out;
  const int k = params.map_neighbors;
  if (int(edge_tree.size()) < k) return out;
  for (size_t qi = 0; qi < query.size(); ++qi) {
    const auto nn = edge_tree.knn(query[qi], k, params.map_match_radius);
    if (int(nn.size()) < k) continue;
    Vec3 mean = Vec3::Zero();
    for (int i : nn) mean += edge_tree.point(i);
    mean /= k;
    Mat3 cov = Mat3::Zero();
    for (int i : nn) {
      const Vec3 d = edge_tree.point(i) - mean;
      cov += d * d.transpose();
    }
    cov /= k;
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    // The neighborhood must be line-like: dominant eigenvalue well separated.
    if (es.eigenvalues()(2) < params.edge_eigen_ratio * es.eigenvalues()(1))
      continue;
    Correspondence c;
    c.kind = Correspondence::kEdge;
    c.p = original[qi].p;
    c.tau = original[qi].tau;
    c.line_p = mean;
    c.line_dir = es.eigenvectors().col(2).normalized();
    out.push_back(c);
  }
  return out;
}

std::vector<Correspondence> match_planars_to_map(
    const std::vector<Vec3>& query, const Cloud& original,
    const KdTree3& planar_tree, const PreprocessParams& params) {
  std::vector<Correspondence> out;
  const int k = params.map_neighbors;
  if (int(planar_tree.size()) < k) return out;
  for (size_t qi = 0; qi < query.size(); ++qi) {
    const auto nn = planar_tree.knn(query[qi], k, params.map_match_radius);
    if (int(nn.size()) < k) continue;
    Vec3 mean = Vec3::Zero();
    for (int i : nn) mean += planar_tree.point(i);
    mean /= k;
    Mat3 cov = Mat3::Zero();
    for (int i : nn) {
      const Vec3 d = planar_tree.point(i) - mean;
      cov += d * d.transpose();
    }
    cov /= k;
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    // A near-collinear neighborhood fits a plane with an arbitrary normal
    // and still satisfies the inlier test; demand genuine planar spread.
    if (es.eigenvalues()(1) < 0.2 * es.eigenvalues()(2)) continue;
    const Vec3 w = es.eigenvectors().col(0).normalized();
    const double d = -w.dot(mean);
    bool ok = true;
    for (int i : nn) {
      if (std::abs(w.dot(planar_tree.point(i)) + d) >
          params.plane_inlier_dist) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    Correspondence c;
    c.kind = Correspondence::kPlanar;
    c.p = original[qi].p;
    c.tau = original[qi].tau;
    c.w = w;
    c.d = d;
    out.push_back(c);
  }
  return out;
}

}  // namespace mloam
