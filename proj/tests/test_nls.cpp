#include "doctest.h"

#include <memory>
#include <random>

#include "mloam/nls.h"
#include "mloam/rng.h"

using namespace mloam;

namespace {

// r = A x - b over a single Euclidean block.
class LinearBlock : public ResidualBlock {
 public:
  LinearBlock(Eigen::MatrixXd A, Eigen::VectorXd b, int param)
      : A_(std::move(A)), b_(std::move(b)), params_{param} {}
  const std::vector<int>& params() const override { return params_; }
  int residual_dim() const override { return int(b_.size()); }
  void evaluate(const State& x, Eigen::VectorXd* r,
                std::vector<Eigen::MatrixXd>* J) const override {
    *r = A_ * x.blocks[params_[0]].vec - b_;
    if (J) *J = {A_};
  }

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  std::vector<int> params_;
};

// Rosenbrock as residuals: r = (10 (y - x^2), 1 - x).
class RosenbrockBlock : public ResidualBlock {
 public:
  explicit RosenbrockBlock(int param) : params_{param} {}
  const std::vector<int>& params() const override { return params_; }
  int residual_dim() const override { return 2; }
  void evaluate(const State& x, Eigen::VectorXd* r,
                std::vector<Eigen::MatrixXd>* J) const override {
    const double a = x.blocks[params_[0]].vec(0);
    const double b = x.blocks[params_[0]].vec(1);
    r->resize(2);
    (*r) << 10.0 * (b - a * a), 1.0 - a;
    if (J) {
      Eigen::MatrixXd Jm(2, 2);
      Jm << -20.0 * a, 10.0, -1.0, 0.0;
      *J = {Jm};
    }
  }

 private:
  std::vector<int> params_;
};

// Point-to-plane residual over a single pose block, the registration form
// used throughout the pipeline: r = (w^T (R p + t) + d) w.
class PlaneBlock : public ResidualBlock {
 public:
  PlaneBlock(const Vec3& p, const Vec3& w, double d, int param)
      : p_(p), w_(w), d_(d), params_{param} {}
  const std::vector<int>& params() const override { return params_; }
  int residual_dim() const override { return 3; }
  void evaluate(const State& x, Eigen::VectorXd* r,
                std::vector<Eigen::MatrixXd>* J) const override {
    const Pose& pose = x.blocks[params_[0]].pose;
    const Mat3 R = pose.rotation();
    const double a = w_.dot(R * p_ + pose.t) + d_;
    *r = a * w_;
    if (J) {
      const Mat3 W = w_ * w_.transpose();
      Eigen::MatrixXd Jm(3, 6);
      Jm.leftCols<3>() = W;
      Jm.rightCols<3>() = -W * R * skew(p_);
      *J = {Jm};
    }
  }

 private:
  Vec3 p_, w_;
  double d_;
  std::vector<int> params_;
};

}  // namespace

TEST_CASE("linear weighted least squares is solved exactly") {
  auto rng = make_rng(20);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd A(8, 3);
  Eigen::VectorXd b(8);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 3; ++j) A(i, j) = n(rng);
    b(i) = n(rng);
  }
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(8, 8);
  for (int i = 0; i < 8; ++i) sigma(i, i) = 0.1 + i * 0.05;

  LinearBlock blk(A, b, 0);
  blk.set_sigma(sigma);

  State x0;
  x0.add_vector(Eigen::Vector3d::Zero());
  auto res = solve({&blk}, nullptr, x0);

  const Eigen::MatrixXd W = sigma.inverse();
  const Eigen::Vector3d closed =
      (A.transpose() * W * A).ldlt().solve(A.transpose() * W * b);
  CHECK((res.state.blocks[0].vec - closed).norm() < 1e-10);
  CHECK((res.information - A.transpose() * W * A).norm() /
            res.information.norm() <
        1e-10);
}

TEST_CASE("huber loss suppresses a gross outlier") {
  auto rng = make_rng(21);
  std::normal_distribution<double> n(0.0, 0.01);
  std::vector<std::unique_ptr<LinearBlock>> owned;
  std::vector<const ResidualBlock*> inliers, all;
  const Eigen::MatrixXd I1 = Eigen::MatrixXd::Identity(1, 1);
  for (int i = 0; i < 30; ++i) {
    Eigen::MatrixXd A(1, 1);
    A << 1.0;
    Eigen::VectorXd b(1);
    b << 2.0 + n(rng);
    owned.push_back(std::make_unique<LinearBlock>(A, b, 0));
    owned.back()->set_sigma(0.01 * 0.01 * I1);
    owned.back()->set_robust(true);
  }
  for (auto& o : owned) inliers.push_back(o.get());
  // One gross outlier.
  Eigen::MatrixXd A(1, 1);
  A << 1.0;
  Eigen::VectorXd b(1);
  b << 50.0;
  auto outlier = std::make_unique<LinearBlock>(A, b, 0);
  outlier->set_sigma(0.01 * 0.01 * I1);
  outlier->set_robust(true);
  all = inliers;
  all.push_back(outlier.get());

  State x0;
  x0.add_vector(Eigen::VectorXd::Zero(1));
  SolveOptions opts;
  opts.max_iterations = 60;
  const double clean = solve(inliers, nullptr, x0, opts).state.blocks[0].vec(0);
  const double robust = solve(all, nullptr, x0, opts).state.blocks[0].vec(0);
  CHECK(std::abs(robust - clean) < 1e-3);
}

TEST_CASE("Rosenbrock converges to (1, 1)") {
  RosenbrockBlock blk(0);
  State x0;
  Eigen::VectorXd v(2);
  v << -1.2, 1.0;
  x0.add_vector(v);
  SolveOptions opts;
  opts.max_iterations = 200;
  auto res = solve({&blk}, nullptr, x0, opts);
  CHECK((res.state.blocks[0].vec - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-6);
  CHECK(res.status == SolveStatus::kConverged);
}

TEST_CASE("non-finite residuals abort with diagnostic") {
  Eigen::MatrixXd A(1, 1);
  A << std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
  LinearBlock blk(A, b, 0);
  State x0;
  x0.add_vector(Eigen::VectorXd::Ones(1));
  auto res = solve({&blk}, nullptr, x0);
  CHECK(res.status == SolveStatus::kNonFinite);
  CHECK(!res.message.empty());
}

TEST_CASE("degeneracy factor") {
  CHECK(degeneracy_factor(Eigen::MatrixXd::Identity(6, 6)) ==
        doctest::Approx(1.0));
  Eigen::VectorXd d(6);
  d << 5, 3, 0.01, 7, 2, 4;
  CHECK(degeneracy_factor(Eigen::MatrixXd(d.asDiagonal())) ==
        doctest::Approx(0.01));
}

TEST_CASE("plane-only registration is degenerate in x, y, yaw") {
  // All planes share the normal (0,0,1): nothing constrains x, y, yaw.
  auto rng = make_rng(22);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<std::unique_ptr<PlaneBlock>> owned;
  std::vector<const ResidualBlock*> blocks;
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    owned.push_back(std::make_unique<PlaneBlock>(p, Vec3(0, 0, 1), -p.z(), 0));
    blocks.push_back(owned.back().get());
  }
  State x0;
  x0.add_pose(Pose::Identity());
  auto res = solve(blocks, nullptr, x0);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(res.information);
  const double lmax = es.eigenvalues().maxCoeff();
  // Three near-null directions (x, y, yaw).
  CHECK(es.eigenvalues()(0) < 1e-3 * lmax);
  CHECK(es.eigenvalues()(1) < 1e-3 * lmax);
  CHECK(es.eigenvalues()(2) < 1e-3 * lmax);
  CHECK(es.eigenvalues()(3) > 1e-3 * lmax);
}

TEST_CASE("solution remap") {
  Eigen::VectorXd delta(3);
  delta << 1.0, 2.0, 3.0;
  Eigen::VectorXd d(3);
  d << 5.0, 4.0, 3.0;
  const Eigen::MatrixXd lam = d.asDiagonal();

  CHECK((solution_remap(delta, lam, 1.0) - delta).norm() < 1e-12);
  CHECK(solution_remap(delta, lam, 100.0).norm() == 0.0);

  Eigen::VectorXd d2(3);
  d2 << 5.0, 1e-6, 3.0;
  const Eigen::VectorXd r =
      solution_remap(delta, Eigen::MatrixXd(d2.asDiagonal()), 0.5);
  CHECK(r(0) == doctest::Approx(1.0));
  CHECK(r(1) == doctest::Approx(0.0));
  CHECK(r(2) == doctest::Approx(3.0));

  // Idempotence.
  auto rng = make_rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd A(6, 6);
  for (int i = 0; i < 36; ++i) A(i / 6, i % 6) = n(rng);
  const Eigen::MatrixXd lam2 = A * A.transpose();
  Eigen::VectorXd v(6);
  for (int i = 0; i < 6; ++i) v(i) = n(rng);
  const Eigen::VectorXd once = solution_remap(v, lam2, 1.0);
  const Eigen::VectorXd twice = solution_remap(once, lam2, 1.0);
  CHECK((once - twice).norm() < 1e-12);
}

TEST_CASE("marginalization: block-diagonal leaves the remaining blocks alone") {
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(4, 4);
  lam.topLeftCorner<2, 2>() << 4, 1, 1, 3;
  lam.bottomRightCorner<2, 2>() << 2, 0.5, 0.5, 5;
  Eigen::VectorXd g(4);
  g << 1, 2, 3, 4;
  auto out = marginalize(lam, g, {0, 1});
  CHECK((out.lambda_rr - lam.bottomRightCorner<2, 2>()).norm() < 1e-12);
  CHECK((out.g_r - g.tail<2>()).norm() < 1e-12);
}

TEST_CASE("marginalization matches direct Gaussian marginalization") {
  // Two scalar variables with joint precision Lambda; marginalizing one must
  // leave exactly 1/Var of the true marginal.
  Eigen::MatrixXd lam(2, 2);
  lam << 2.0, 0.8, 0.8, 1.5;
  const Eigen::MatrixXd cov = lam.inverse();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(2);
  auto out = marginalize(lam, g, {0});
  CHECK(out.lambda_rr(0, 0) == doctest::Approx(1.0 / cov(1, 1)).epsilon(1e-10));
}

TEST_CASE("marginalization equals a dense Schur-complement oracle") {
  auto rng = make_rng(24);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd A(12, 12);
  for (int i = 0; i < 144; ++i) A(i / 12, i % 12) = n(rng);
  const Eigen::MatrixXd lam =
      A * A.transpose() + Eigen::MatrixXd::Identity(12, 12);
  Eigen::VectorXd g(12);
  for (int i = 0; i < 12; ++i) g(i) = n(rng);

  std::vector<int> marg{0, 1, 2, 3, 4, 5};
  auto out = marginalize(lam, g, marg);

  const Eigen::MatrixXd Lmm = lam.topLeftCorner<6, 6>();
  const Eigen::MatrixXd Lmr = lam.topRightCorner<6, 6>();
  const Eigen::MatrixXd Lrr = lam.bottomRightCorner<6, 6>();
  const Eigen::MatrixXd schur = Lrr - Lmr.transpose() * Lmm.inverse() * Lmr;
  const Eigen::VectorXd gs =
      g.tail<6>() - Lmr.transpose() * Lmm.inverse() * g.head<6>();

  CHECK((out.lambda_rr - schur).norm() < 1e-9);
  CHECK((out.g_r - gs).norm() < 1e-9);
  CHECK((out.J.transpose() * out.J - schur).norm() / schur.norm() < 1e-8);
  CHECK((out.J.transpose() * out.r - gs).norm() / gs.norm() < 1e-8);
}

TEST_CASE("marginalize-then-solve equals solve-then-discard on linear problems") {
  auto rng = make_rng(25);
  std::normal_distribution<double> n(0.0, 1.0);
  // Two coupled Euclidean blocks of dim 2; each residual touches both.
  Eigen::MatrixXd A(6, 4);
  Eigen::VectorXd b(6);
  for (int i = 0; i < 24; ++i) A(i / 4, i % 4) = n(rng);
  for (int i = 0; i < 6; ++i) b(i) = n(rng);

  class TwoBlock : public ResidualBlock {
   public:
    TwoBlock(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
        : A_(A), b_(b), params_{0, 1} {}
    const std::vector<int>& params() const override { return params_; }
    int residual_dim() const override { return int(b_.size()); }
    void evaluate(const State& x, Eigen::VectorXd* r,
                  std::vector<Eigen::MatrixXd>* J) const override {
      Eigen::VectorXd stacked(4);
      stacked << x.blocks[0].vec, x.blocks[1].vec;
      *r = A_ * stacked - b_;
      if (J) *J = {A_.leftCols<2>(), A_.rightCols<2>()};
    }
    Eigen::MatrixXd A_;
    Eigen::VectorXd b_;
    std::vector<int> params_;
  } blk(A, b);

  State x0;
  x0.add_vector(Eigen::Vector2d::Zero());
  x0.add_vector(Eigen::Vector2d::Zero());

  // Full solve, then discard block 0.
  auto full = solve({&blk}, nullptr, x0);
  const Eigen::Vector2d full_tail = full.state.blocks[1].vec;

  // Marginalize block 0 from the information at x0, then solve the prior-only
  // problem over block 1.
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost;
  bool finite;
  linearize({&blk}, x0, 1.0, Kernel::Serial, &H, &g, &cost, &finite);
  auto marg = marginalize(H, g, {0, 1});

  PriorBlock prior;
  prior.J = marg.J;
  prior.r = marg.r;
  State lin;
  lin.add_vector(Eigen::Vector2d::Zero());
  prior.linearization_point = lin;
  prior.offsets = {0};

  State x1;
  x1.add_vector(Eigen::Vector2d::Zero());
  auto reduced = solve({}, &prior, x1);
  CHECK((reduced.state.blocks[0].vec - full_tail).norm() < 1e-8);

  // Marginal covariance agreement.
  const Eigen::MatrixXd cov_full =
      full.information.inverse().bottomRightCorner<2, 2>();
  const Eigen::MatrixXd cov_red = reduced.information.inverse();
  CHECK((cov_full - cov_red).norm() < 1e-6);
}

TEST_CASE("OpenMP linearization matches the serial reference bit-for-bit") {
  auto rng = make_rng(26);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<std::unique_ptr<PlaneBlock>> owned;
  std::vector<const ResidualBlock*> blocks;
  for (int i = 0; i < 500; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    Vec3 w(u(rng), u(rng), u(rng));
    w.normalize();
    owned.push_back(std::make_unique<PlaneBlock>(p, w, u(rng), 0));
    owned.back()->set_robust(true);
    blocks.push_back(owned.back().get());
  }
  State x;
  x.add_pose(
      Pose(Vec3(0.1, -0.2, 0.3), Quat(Eigen::AngleAxisd(0.4, Vec3::UnitZ()))));

  Eigen::MatrixXd H1, H2;
  Eigen::VectorXd g1, g2;
  double c1, c2;
  bool f1, f2;
  linearize(blocks, x, 1.0, Kernel::Serial, &H1, &g1, &c1, &f1);
  linearize(blocks, x, 1.0, Kernel::OpenMP, &H2, &g2, &c2, &f2);
  CHECK((H1 - H2).norm() == 0.0);
  CHECK((g1 - g2).norm() == 0.0);
  CHECK(c1 == c2);
}
