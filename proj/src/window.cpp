#include "mloam/window.h"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <tuple>

namespace mloam {

Cloud voxel_downsample(const Cloud& cloud, double leaf) {
  struct Acc {
    Vec3 sum = Vec3::Zero();
    double tau = 0.0;
    int ring = 0;
    int count = 0;
  };
  std::map<std::tuple<int64_t, int64_t, int64_t>, Acc> cells;
  for (const PointT& pt : cloud) {
    const auto key = std::make_tuple(int64_t(std::floor(pt.p.x() / leaf)),
                                     int64_t(std::floor(pt.p.y() / leaf)),
                                     int64_t(std::floor(pt.p.z() / leaf)));
    Acc& acc = cells[key];
    acc.sum += pt.p;
    acc.tau += pt.tau;
    acc.ring = pt.ring;
    ++acc.count;
  }
  Cloud out;
  out.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    PointT pt;
    pt.p = acc.sum / acc.count;
    pt.tau = acc.tau / acc.count;
    pt.ring = acc.ring;
    out.push_back(pt);
  }
  return out;
}

WindowEstimator::WindowEstimator(int num_lidars, const WindowOptions& opts)
    : num_lidars_(num_lidars),
      opts_(opts),
      status_(num_lidars > 1 ? CalibStatus::kAwaitingInit
                             : CalibStatus::kConverged),
      extrinsics_(num_lidars, Pose()),
      ext_converged_(num_lidars, num_lidars == 1),
      calib_candidates_(num_lidars),
      calib_cov_(num_lidars, Mat6::Zero()) {
  if (opts_.pivot != 2) {
    throw std::invalid_argument("window estimator expects pivot index 2");
  }
  ext_converged_[0] = true;  // the primary LiDAR defines the base frame
}

void WindowEstimator::set_initial_extrinsics(const std::vector<Pose>& ext) {
  extrinsics_ = ext;
  if (status_ == CalibStatus::kAwaitingInit) status_ = CalibStatus::kOngoing;
}

void WindowEstimator::freeze_extrinsics(const std::vector<Pose>& ext,
                                        const std::vector<Mat6>& cov) {
  extrinsics_ = ext;
  calib_cov_ = cov;
  std::fill(ext_converged_.begin(), ext_converged_.end(), true);
  status_ = CalibStatus::kConverged;
}

LocalMap build_local_map_from(const std::vector<const FeatureCloud*>& frames,
                              const std::vector<Pose>& poses,
                              const Pose& pivot_pose, const Pose& ext,
                              double leaf) {
  LocalMap map;
  const Pose pivot_inv = pivot_pose.inverse();
  Cloud edges, planars;
  for (size_t k = 0; k < frames.size(); ++k) {
    const Pose rel = pivot_inv * poses[k] * ext;
    for (const PointT& pt : frames[k]->edges) {
      PointT moved = pt;
      moved.p = rel * pt.p;
      edges.push_back(moved);
    }
    for (const PointT& pt : frames[k]->planars) {
      PointT moved = pt;
      moved.p = rel * pt.p;
      planars.push_back(moved);
    }
  }
  map.edges = voxel_downsample(edges, leaf);
  map.planars = voxel_downsample(planars, leaf);
  std::vector<Vec3> pe(map.edges.size()), ph(map.planars.size());
  for (size_t i = 0; i < map.edges.size(); ++i) pe[i] = map.edges[i].p;
  for (size_t i = 0; i < map.planars.size(); ++i) ph[i] = map.planars[i].p;
  map.edge_tree.build(pe);
  map.planar_tree.build(ph);
  return map;
}

Pose average_poses(const std::vector<Pose>& poses, Mat6* cov) {
  Vec3 t_mean = Vec3::Zero();
  Eigen::Matrix4d qq = Eigen::Matrix4d::Zero();
  for (const Pose& c : poses) {
    t_mean += c.t;
    const Eigen::Vector4d qv = c.q.coeffs();
    qq += qv * qv.transpose();  // sign-invariant rotation average
  }
  t_mean /= double(poses.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(qq);
  const Eigen::Vector4d qv = es.eigenvectors().col(3);
  const Pose mean(t_mean, Quat(qv(3), qv(0), qv(1), qv(2)));
  if (cov) {
    cov->setZero();
    for (const Pose& c : poses) {
      const Vec6 xi = c.local_minus(mean);
      *cov += xi * xi.transpose();
    }
    *cov /= std::max<double>(1.0, double(poses.size()) - 1.0);
  }
  return mean;
}

LocalMap WindowEstimator::build_local_map(int lidar) const {
  // Features of the first N frames, expressed in the pivot base frame.
  const int pivot_idx = opts_.pivot - 1;
  std::vector<const FeatureCloud*> frames;
  std::vector<Pose> poses;
  for (size_t k = 0; k + 1 < frames_.size(); ++k) {
    frames.push_back(&frames_[k][lidar]);
    poses.push_back(poses_[k]);
  }
  return build_local_map_from(frames, poses, poses_[pivot_idx],
                              extrinsics_[lidar], opts_.local_leaf);
}

WindowStep WindowEstimator::push_frame(
    const std::vector<FeatureCloud>& features, const Pose& primary_rel) {
  WindowStep step;
  step.lambda_ext.assign(num_lidars_, 0.0);

  if (poses_.empty()) {
    poses_.push_back(Pose());  // the first frame anchors the world frame
  } else {
    poses_.push_back(poses_.back() * primary_rel);
  }
  frames_.push_back(features);
  step.latest_pose = poses_.back();

  if (int(poses_.size()) < opts_.window + 1) return step;

  solve_window(&step);
  step.latest_pose = poses_.back();
  return step;
}

namespace {

struct BlockSet {
  std::vector<std::unique_ptr<ChainPlaneBlock>> owned;
  std::vector<const ResidualBlock*> all;

  void add(std::unique_ptr<ChainPlaneBlock> blk, const Mat3& sigma) {
    blk->set_sigma(sigma);
    blk->set_robust(true);
    all.push_back(blk.get());
    owned.push_back(std::move(blk));
  }
};

// Plane and edge blocks for one feature cloud matched against a local map.
// `anchor` maps sensor points into the map (pivot) frame for matching.
void add_map_constraints(const FeatureCloud& feat, const LocalMap& map,
                         const Pose& anchor, ChainPlaneBlock::Slot pivot,
                         ChainPlaneBlock::Slot mid, ChainPlaneBlock::Slot ext,
                         const PreprocessParams& pp, const Mat3& sigma,
                         BlockSet* blocks) {
  std::vector<Vec3> q;
  q.reserve(feat.flat_planars.size());
  for (const PointT& pt : feat.flat_planars) q.push_back(anchor * pt.p);
  for (const auto& c :
       match_planars_to_map(q, feat.flat_planars, map.planar_tree, pp)) {
    blocks->add(
        std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p, c.w, c.d),
        sigma);
  }
  q.clear();
  for (const PointT& pt : feat.sharp_edges) q.push_back(anchor * pt.p);
  for (const auto& c :
       match_edges_to_map(q, feat.sharp_edges, map.edge_tree, pp)) {
    const auto planes = edge_planes(c.line_p, c.line_dir, anchor * c.p);
    if (!planes) continue;
    blocks->add(std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p,
                                                  planes->w1, planes->d1),
                sigma);
    blocks->add(std::make_unique<ChainPlaneBlock>(pivot, mid, ext, c.p,
                                                  planes->w2, planes->d2),
                sigma);
  }
}

}  // namespace

void WindowEstimator::solve_window(WindowStep* step) {
  const int N = opts_.window;
  const int pivot_idx = opts_.pivot - 1;
  const bool calibrating = status_ == CalibStatus::kOngoing;
  const bool have_ext = status_ != CalibStatus::kAwaitingInit;

  PreprocessParams pp;  // map-matching parameters only

  State solution;
  Eigen::MatrixXd information;
  Eigen::VectorXd gradient;

  for (int outer = 0; outer < opts_.outer_iterations; ++outer) {
    // Blocks: poses 1..N (block k-1; the pivot stays constant), then the
    // auxiliary extrinsics.
    State state;
    for (int k = 1; k <= N; ++k) {
      state.add_pose(poses_[k], /*constant=*/k == pivot_idx);
    }
    std::vector<int> ext_block(num_lidars_, -1);
    if (have_ext) {
      for (int i = 1; i < num_lidars_; ++i) {
        ext_block[i] =
            state.add_pose(extrinsics_[i], /*constant=*/ext_converged_[i]);
      }
    }

    BlockSet blocks;
    const Pose pivot_inv = poses_[pivot_idx].inverse();

    // Primary features of the latest frames against the primary local map.
    const LocalMap map_b = build_local_map(0);
    for (int k = pivot_idx + 1; k <= N; ++k) {
      const Pose anchor = pivot_inv * poses_[k];
      add_map_constraints(frames_[k][0], map_b, anchor,
                          {pivot_idx - 1, Pose()}, {k - 1, Pose()},
                          {-1, Pose()}, pp, opts_.point_cov, &blocks);
    }

    if (calibrating) {
      // Auxiliary features at the pivot frame against the primary map
      // constrain the unconverged extrinsics (registration-style).
      for (int i = 1; i < num_lidars_; ++i) {
        if (ext_converged_[i]) continue;
        add_map_constraints(frames_[pivot_idx][i], map_b, extrinsics_[i],
                            {-1, Pose()}, {-1, Pose()}, {ext_block[i], Pose()},
                            pp, opts_.point_cov, &blocks);
      }
    }
    if (have_ext) {
      // LiDARs with settled extrinsics constrain the poses through their own
      // local maps.
      for (int i = 1; i < num_lidars_; ++i) {
        if (!ext_converged_[i]) continue;
        const LocalMap map_i = build_local_map(i);
        for (int k = pivot_idx + 1; k <= N; ++k) {
          const Pose anchor = pivot_inv * poses_[k] * extrinsics_[i];
          add_map_constraints(frames_[k][i], map_i, anchor,
                              {pivot_idx - 1, Pose()}, {k - 1, Pose()},
                              {-1, extrinsics_[i]}, pp, opts_.point_cov,
                              &blocks);
        }
      }
    }

    if (int(blocks.all.size()) < 10) {
      step->solved = false;
      return;
    }

    PriorBlock prior;
    PriorBlock* prior_ptr = nullptr;
    if (prior_ && opts_.use_prior) {
      prior.J = prior_->J;
      prior.r = prior_->r;
      State lin;
      for (int k = 1; k <= N; ++k) {
        lin.add_pose(k - 1 < int(prior_->lin_poses.size())
                         ? prior_->lin_poses[k - 1]
                         : poses_[k],
                     k == pivot_idx);
      }
      if (have_ext) {
        for (int i = 1; i < num_lidars_; ++i) {
          lin.add_pose(prior_->lin_exts.empty() ? extrinsics_[i]
                                                : prior_->lin_exts[i - 1],
                       ext_converged_[i]);
        }
      }
      if (prior.J.cols() == lin.tangent_dim()) {
        prior.linearization_point = std::move(lin);
        prior_ptr = &prior;
      }
    }

    SolveOptions sopts;
    sopts.max_iterations = opts_.max_iterations;
    sopts.remap_threshold = opts_.remap_threshold;
    sopts.kernel = opts_.kernel;
    auto res = solve(blocks.all, prior_ptr, state, sopts);
    if (res.status == SolveStatus::kNonFinite) {
      step->solved = false;
      return;
    }

    for (int k = 1; k <= N; ++k) poses_[k] = res.state.blocks[k - 1].pose;
    if (have_ext) {
      for (int i = 1; i < num_lidars_; ++i) {
        if (!ext_converged_[i])
          extrinsics_[i] = res.state.blocks[ext_block[i]].pose;
      }
    }
    solution = std::move(res.state);
    information = std::move(res.information);
    gradient = std::move(res.gradient);
    step->solved = true;
  }

  if (!step->solved) return;

  if (calibrating) {
    // Convergence monitor: accept the refined extrinsic as a candidate only
    // when the degeneracy factor of its information clears the threshold;
    // terminate once enough candidates agree.
    const LocalMap map_b = build_local_map(0);
    for (int i = 1; i < num_lidars_; ++i) {
      if (ext_converged_[i]) continue;
      State ext_state;
      ext_state.add_pose(extrinsics_[i]);
      BlockSet blocks;
      add_map_constraints(frames_[pivot_idx][i], map_b, extrinsics_[i],
                          {-1, Pose()}, {-1, Pose()}, {0, Pose()}, pp,
                          opts_.point_cov, &blocks);
      if (blocks.all.empty()) continue;
      Eigen::MatrixXd H;
      Eigen::VectorXd g;
      double cost;
      bool finite;
      linearize(blocks.all, ext_state, 1.0, opts_.kernel, &H, &g, &cost,
                &finite);
      if (!finite) continue;
      const double lambda = degeneracy_factor(H);
      step->lambda_ext[i] = lambda;
      if (lambda <= opts_.lambda_calib) continue;
      calib_candidates_[i].push_back(extrinsics_[i]);
      if (int(calib_candidates_[i].size()) <= opts_.calib_candidates) continue;

      Mat6 cov;
      extrinsics_[i] = average_poses(calib_candidates_[i], &cov);
      calib_cov_[i] = cov;
      ext_converged_[i] = true;
    }
    if (std::all_of(ext_converged_.begin(), ext_converged_.end(),
                    [](bool b) { return b; })) {
      status_ = CalibStatus::kConverged;
    }
  }

  slide_and_marginalize(solution, information, gradient);
}

void WindowEstimator::slide_and_marginalize(const State& solution,
                                            const Eigen::MatrixXd& information,
                                            const Eigen::VectorXd& gradient) {
  const int N = opts_.window;
  const int pivot_idx = opts_.pivot - 1;  // == 1; pivot is block 0

  std::vector<int> marg_idx{0, 1, 2, 3, 4, 5};
  auto marg = marginalize(information, gradient, marg_idx);

  // marg covers [pose 2..N, exts]. The next window sees those poses as
  // blocks 0..N-2, a fresh pose as block N-1, then the extrinsics: insert
  // six zero columns for the fresh pose.
  const int pose_cols = 6 * (N - 1);
  const int ext_cols = int(marg.J.cols()) - pose_cols;
  WindowPrior next;
  next.J.setZero(marg.J.rows(), pose_cols + 6 + ext_cols);
  next.J.leftCols(pose_cols) = marg.J.leftCols(pose_cols);
  if (ext_cols > 0) next.J.rightCols(ext_cols) = marg.J.rightCols(ext_cols);
  next.r = marg.r;
  for (int k = pivot_idx + 1; k <= N; ++k) {
    next.lin_poses.push_back(solution.blocks[k - 1].pose);
  }
  for (size_t b = N; b < solution.blocks.size(); ++b) {
    next.lin_exts.push_back(solution.blocks[b].pose);
  }
  prior_ = std::move(next);

  poses_.erase(poses_.begin());
  frames_.pop_front();
}

}  // namespace mloam
