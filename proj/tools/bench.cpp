// Benchmark comparing the OpenMP kernels against their serial references:
// ray casting, residual linearization, point-covariance propagation.

#include <chrono>
#include <cstdio>
#include <memory>
#include <random>

#include "mloam/mapping.h"
#include "mloam/nls.h"
#include "mloam/odometry.h"
#include "mloam/rng.h"
#include "mloam/sim.h"

using namespace mloam;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double omp_ms) {
  std::printf("%-28s serial %8.2f ms   openmp %8.2f ms   speedup %.2fx\n",
              name, serial_ms, omp_ms, serial_ms / omp_ms);
}

}  // namespace

int main() {
  std::printf("threads: %d (openmp %s)\n\n", num_threads(),
              openmp_enabled() ? "on" : "off");

  // Ray casting: one dense 16-beam scan of the cylinder room.
  {
    Environment env = make_room_with_cylinders(20, 15, 5);
    Rig rig = make_sr_rig(0.2, 0.0);
    TrajectorySpec traj;
    traj.times = {0.0, 10.0};
    traj.waypoints = {Pose(Vec3(0, 0, 1.5), Quat::Identity()),
                      Pose(Vec3(3, 2, 1.5),
                           Quat(Eigen::AngleAxisd(1.0, Vec3::UnitZ())))};
    std::vector<double> ranges;
    const double s = time_ms(
        [&] { render_ranges(env, rig.lidars[0], traj, 0.2, Kernel::Serial, &ranges); },
        5);
    const double p = time_ms(
        [&] { render_ranges(env, rig.lidars[0], traj, 0.2, Kernel::OpenMP, &ranges); },
        5);
    report("ray casting (28.8k rays)", s, p);
  }

  // Residual linearization: 4000 point-to-plane blocks over one pose.
  {
    auto rng = make_rng(1);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<std::unique_ptr<ChainPlaneBlock>> owned;
    std::vector<const ResidualBlock*> blocks;
    const Mat3 Z = 0.0025 * Mat3::Identity();
    for (int i = 0; i < 4000; ++i) {
      const Vec3 p(u(rng), u(rng), u(rng));
      Vec3 w(u(rng), u(rng), u(rng));
      w.normalize();
      auto blk = std::make_unique<ChainPlaneBlock>(
          ChainPlaneBlock::Slot{-1, Pose()}, ChainPlaneBlock::Slot{0, Pose()},
          ChainPlaneBlock::Slot{-1, Pose()}, p, w, u(rng));
      blk->set_sigma(Z);
      blk->set_robust(true);
      blocks.push_back(blk.get());
      owned.push_back(std::move(blk));
    }
    State x;
    x.add_pose(Pose(Vec3(0.1, -0.2, 0.3),
                    Quat(Eigen::AngleAxisd(0.3, Vec3::UnitZ()))));
    Eigen::MatrixXd H;
    Eigen::VectorXd g;
    double cost;
    bool finite;
    const double s = time_ms(
        [&] { linearize(blocks, x, 1.0, Kernel::Serial, &H, &g, &cost, &finite); },
        20);
    const double p = time_ms(
        [&] { linearize(blocks, x, 1.0, Kernel::OpenMP, &H, &g, &cost, &finite); },
        20);
    report("linearize (4k blocks)", s, p);
  }

  // Covariance propagation: 20k points through a noisy pose.
  {
    auto rng = make_rng(2);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    Cloud cloud;
    for (int i = 0; i < 20000; ++i) {
      PointT pt;
      pt.p = Vec3(u(rng), u(rng), u(rng));
      cloud.push_back(pt);
    }
    GaussianPose pose(exp_se3((Vec6() << 1, 2, 0.5, 0.2, -0.1, 0.3).finished()),
                      1e-4 * Mat6::Identity());
    const Mat3 Z = 0.0025 * Mat3::Identity();
    std::vector<GaussianPoint> out;
    const double s = time_ms(
        [&] { propagate_point_covariances(pose, cloud, Z, Kernel::Serial, &out); },
        10);
    const double p = time_ms(
        [&] { propagate_point_covariances(pose, cloud, Z, Kernel::OpenMP, &out); },
        10);
    report("covariance propagation (20k)", s, p);
  }

  return 0;
}
