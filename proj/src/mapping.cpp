#include "mloam/mapping.h"

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <tuple>

namespace mloam {

void GlobalMap::rebuild_trees() {
  std::vector<Vec3> pe(edges.size()), ph(planars.size());
  for (size_t i = 0; i < edges.size(); ++i) pe[i] = edges[i].point.mean;
  for (size_t i = 0; i < planars.size(); ++i) ph[i] = planars[i].point.mean;
  edge_tree.build(pe);
  planar_tree.build(ph);
}

void propagate_point_covariances(const GaussianPose& pose, const Cloud& cloud,
                                 const Mat3& point_noise, Kernel kernel,
                                 std::vector<GaussianPoint>* out) {
  out->resize(cloud.size());
  auto one = [&](int i) {
    (*out)[i] =
        transform_gaussian_point(pose, GaussianPoint(cloud[i].p, point_noise));
  };
  const int n = int(cloud.size());
  if (kernel == Kernel::OpenMP) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
}

GaussianPoint fuse_cell(const std::vector<MapPoint>& pts, double w_gate_cm2) {
  double norm = 0.0;
  for (const MapPoint& mp : pts) norm += w_gate_cm2 - mp.trace_cm2;
  GaussianPoint out;
  if (pts.empty()) return out;
  if (norm <= 0.0) {
    // All mass at the gate; plain average as the degenerate limit.
    for (const MapPoint& mp : pts) out.mean += mp.point.mean / double(pts.size());
    out.cov = pts.front().point.cov;
    return out;
  }
  for (const MapPoint& mp : pts) {
    const double w = (w_gate_cm2 - mp.trace_cm2) / norm;
    out.mean += w * mp.point.mean;
    out.cov += w * w * mp.point.cov;
  }
  return out;
}

Mapper::Mapper(int num_lidars, const MappingOptions& opts)
    : num_lidars_(num_lidars),
      opts_(opts),
      extrinsics_(num_lidars, Pose()),
      ext_cov_(num_lidars, Mat6::Zero()) {}

void Mapper::set_extrinsics(const std::vector<Pose>& ext,
                            const std::vector<Mat6>& calib_cov) {
  extrinsics_ = ext;
  for (int i = 0; i < num_lidars_; ++i) {
    ext_cov_[i] = opts_.alpha * calib_cov[i];
  }
}

MappingStep Mapper::process(const std::vector<FeatureCloud>& features,
                            const Pose& odom_rel) {
  MappingStep step;
  if (!initialized_) {
    pose_ = Pose();
    pose_cov_ = Mat6::Zero();
    insert_features(features);
    downsample_map();
    map_.rebuild_trees();
    initialized_ = true;
    step.pose = pose_;
    step.pose_cov = pose_cov_;
    step.solved = true;
    return step;
  }

  pose_ = pose_ * odom_rel;  // odometry-chained prior

  PreprocessParams pp;
  for (int outer = 0; outer < opts_.outer_iterations; ++outer) {
    State state;
    state.add_pose(pose_);

    std::vector<std::unique_ptr<ChainPlaneBlock>> owned;
    std::vector<const ResidualBlock*> blocks;
    int corr = 0;

    for (int i = 0; i < num_lidars_; ++i) {
      const FeatureCloud& f = features[i];
      const Pose anchor = pose_ * extrinsics_[i];

      // Residual weights: propagated point covariance (pose prior compounded
      // with the extrinsic perturbation), or plain sensor noise when the
      // uncertainty-aware path is off.
      GaussianPose noisy_pose;
      if (opts_.uncertainty_aware) {
        GaussianPose base(pose_.matrix(),
                          left_cov_from_local(pose_, pose_cov_));
        GaussianPose ext(extrinsics_[i].matrix(),
                         left_cov_from_local(extrinsics_[i], ext_cov_[i]));
        noisy_pose = compound_poses(base, ext);
      } else {
        noisy_pose = GaussianPose(anchor.matrix(), Mat6::Zero());
      }

      auto add_set = [&](const Cloud& pts, bool planar) {
        std::vector<Vec3> q;
        q.reserve(pts.size());
        for (const PointT& pt : pts) q.push_back(anchor * pt.p);
        std::vector<GaussianPoint> covs;
        propagate_point_covariances(noisy_pose, pts, opts_.point_noise,
                                    opts_.kernel, &covs);
        std::vector<Correspondence> cs;
        if (planar) {
          cs = match_planars_to_map(q, pts, map_.planar_tree, pp);
        } else {
          cs = match_edges_to_map(q, pts, map_.edge_tree, pp);
        }
        // Correspondences keep the query order; recover indices by matching
        // the stored reference point against the input sequence.
        size_t cursor = 0;
        for (const auto& c : cs) {
          while (cursor < pts.size() && pts[cursor].p != c.p) ++cursor;
          if (cursor >= pts.size()) break;
          const Mat3 sigma = covs[cursor].cov;
          ChainPlaneBlock::Slot pivot{-1, Pose()};
          ChainPlaneBlock::Slot mid{0, Pose()};
          ChainPlaneBlock::Slot ext{-1, extrinsics_[i]};
          if (planar) {
            auto blk = std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p,
                                                         c.w, c.d);
            blk->set_sigma(sigma);
            blk->set_robust(true);
            blocks.push_back(blk.get());
            owned.push_back(std::move(blk));
            ++corr;
          } else {
            const auto planes = edge_planes(c.line_p, c.line_dir, anchor * c.p);
            if (!planes) continue;
            for (const auto& [w, d] : {std::pair{planes->w1, planes->d1},
                                       {planes->w2, planes->d2}}) {
              auto blk =
                  std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p, w, d);
              blk->set_sigma(sigma);
              blk->set_robust(true);
              blocks.push_back(blk.get());
              owned.push_back(std::move(blk));
            }
            ++corr;
          }
        }
      };
      add_set(f.planars, true);
      add_set(f.edges, false);
    }

    step.correspondences = corr;
    if (corr < 10) break;

    SolveOptions sopts;
    sopts.max_iterations = opts_.max_iterations;
    sopts.remap_threshold = opts_.remap_threshold;
    sopts.kernel = opts_.kernel;
    auto res = solve(blocks, nullptr, state, sopts);
    if (res.status == SolveStatus::kNonFinite) break;
    pose_ = res.state.blocks[0].pose;
    step.solved = true;

    if (outer + 1 == opts_.outer_iterations) {
      // Lambda^-1 through the eigendecomposition, flooring near-null
      // directions so degenerate scenes yield large-but-finite variances.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(res.information);
      const double max_ev = std::max(es.eigenvalues().maxCoeff(), 1e-12);
      Mat6 cov = Mat6::Zero();
      for (int k = 0; k < 6; ++k) {
        const double ev = std::max(es.eigenvalues()(k), 1e-8 * max_ev);
        cov += es.eigenvectors().col(k) * es.eigenvectors().col(k).transpose() /
               ev;
      }
      pose_cov_ = cov;
    }
  }

  if (step.solved) {
    const int before = int(map_.size());
    insert_features(features);
    step.inserted = int(map_.size()) - before;
    downsample_map();
    map_.rebuild_trees();
  }
  step.pose = pose_;
  step.pose_cov = pose_cov_;
  return step;
}

void Mapper::insert_features(const std::vector<FeatureCloud>& features) {
  for (int i = 0; i < num_lidars_; ++i) {
    GaussianPose noisy;
    if (opts_.uncertainty_aware) {
      GaussianPose base(pose_.matrix(), left_cov_from_local(pose_, pose_cov_));
      GaussianPose ext(extrinsics_[i].matrix(),
                       left_cov_from_local(extrinsics_[i], ext_cov_[i]));
      noisy = compound_poses(base, ext);
    } else {
      noisy = GaussianPose((pose_ * extrinsics_[i]).matrix(), Mat6::Zero());
    }

    auto insert_set = [&](const Cloud& pts, std::vector<MapPoint>* dst) {
      std::vector<GaussianPoint> propagated;
      propagate_point_covariances(noisy, pts, opts_.point_noise, opts_.kernel,
                                  &propagated);
      for (const auto& gp : propagated) {
        MapPoint mp;
        mp.point = gp;
        mp.trace_cm2 = gp.cov.trace() * 1e4;
        if (opts_.uncertainty_aware && mp.trace_cm2 >= opts_.trace_gate_cm2) {
          continue;  // too uncertain to keep
        }
        dst->push_back(mp);
      }
    };
    insert_set(features[i].edges, &map_.edges);
    insert_set(features[i].planars, &map_.planars);
  }
}

void Mapper::downsample_map() {
  auto filter = [&](std::vector<MapPoint>* pts) {
    std::map<std::tuple<int64_t, int64_t, int64_t>, std::vector<MapPoint>>
        cells;
    const double leaf = opts_.voxel_leaf;
    for (const MapPoint& mp : *pts) {
      const auto key =
          std::make_tuple(int64_t(std::floor(mp.point.mean.x() / leaf)),
                          int64_t(std::floor(mp.point.mean.y() / leaf)),
                          int64_t(std::floor(mp.point.mean.z() / leaf)));
      cells[key].push_back(mp);
    }
    pts->clear();
    for (const auto& [key, cell] : cells) {
      MapPoint fused;
      if (opts_.uncertainty_aware) {
        fused.point = fuse_cell(cell, opts_.trace_gate_cm2);
      } else {
        for (const MapPoint& mp : cell)
          fused.point.mean += mp.point.mean / double(cell.size());
        fused.point.cov = opts_.point_noise;
      }
      fused.trace_cm2 = fused.point.cov.trace() * 1e4;
      pts->push_back(fused);
    }
  };
  filter(&map_.edges);
  filter(&map_.planars);
}

void Mapper::export_text(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  char buf[256];
  for (const MapPoint& mp : map_.edges) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.8f edge\n",
                  mp.point.mean.x(), mp.point.mean.y(), mp.point.mean.z(),
                  mp.trace_cm2 * 1e-4);
    f << buf;
  }
  for (const MapPoint& mp : map_.planars) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.8f planar\n",
                  mp.point.mean.x(), mp.point.mean.y(), mp.point.mean.z(),
                  mp.trace_cm2 * 1e-4);
    f << buf;
  }
}

}  // namespace mloam
