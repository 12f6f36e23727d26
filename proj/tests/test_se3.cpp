#include "doctest.h"

#include <random>

#include "mloam/rng.h"
#include "mloam/se3.h"

using namespace mloam;

namespace {

Vec3 random_vec3(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec3(n(rng), n(rng), n(rng));
}

Mat6 random_spd6(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Mat6 A;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) A(i, j) = n(rng);
  return A * A.transpose() + 1e-12 * Mat6::Identity();
}

Mat3 random_spd3(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Mat3 A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = n(rng);
  return A * A.transpose() + 1e-14 * Mat3::Identity();
}

Mat4 random_transform(std::mt19937_64& rng) {
  Vec6 xi;
  xi.head<3>() = random_vec3(rng, 2.0);
  xi.tail<3>() = random_vec3(rng, 0.8);
  return exp_se3(xi);
}

// Draws from N(0, C) via Cholesky-like factorization (C must be PSD).
template <int N>
Eigen::Matrix<double, N, 1> sample_gaussian(
    const Eigen::Matrix<double, N, N>& C, std::mt19937_64& rng) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(C);
  Eigen::Matrix<double, N, N> L =
      es.eigenvectors() *
      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix<double, N, 1> u;
  for (int i = 0; i < N; ++i) u(i) = n(rng);
  return L * u;
}

// Monte-Carlo covariance of the compounded left perturbation.
Mat6 mc_compound_cov(const GaussianPose& a, const GaussianPose& b, int samples,
                     uint64_t seed) {
  const Mat4 mean = a.mean * b.mean;
  const Mat4 mean_inv = mean.inverse();
  auto rng = make_rng(seed);
  Mat6 acc = Mat6::Zero();
  Vec6 mu = Vec6::Zero();
  std::vector<Vec6> draws(samples);
  for (int s = 0; s < samples; ++s) {
    const Vec6 xi1 = sample_gaussian<6>(a.cov, rng);
    const Vec6 xi2 = sample_gaussian<6>(b.cov, rng);
    const Mat4 T = exp_se3(xi1) * a.mean * exp_se3(xi2) * b.mean;
    draws[s] = log_se3(T * mean_inv);
    mu += draws[s];
  }
  mu /= samples;
  for (const Vec6& d : draws) acc += (d - mu) * (d - mu).transpose();
  return acc / (samples - 1);
}

Mat3 mc_point_cov(const GaussianPose& pose, const GaussianPoint& pt,
                  int samples, uint64_t seed) {
  auto rng = make_rng(seed);
  Vec3 mu = Vec3::Zero();
  std::vector<Vec3> draws(samples);
  for (int s = 0; s < samples; ++s) {
    const Vec6 xi = sample_gaussian<6>(pose.cov, rng);
    const Vec3 zeta = sample_gaussian<3>(pt.cov, rng);
    Vec4 ph;
    ph << pt.mean + zeta, 1.0;
    draws[s] = (exp_se3(xi) * pose.mean * ph).head<3>();
    mu += draws[s];
  }
  mu /= samples;
  Mat3 acc = Mat3::Zero();
  for (const Vec3& d : draws) acc += (d - mu) * (d - mu).transpose();
  return acc / (samples - 1);
}

}  // namespace

TEST_CASE("exp_so3 basics") {
  CHECK((exp_so3(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);

  Mat3 yaw90;
  yaw90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((exp_so3(Vec3(0, 0, M_PI / 2)) - yaw90).norm() < 1e-12);

  auto rng = make_rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vec3 phi = random_vec3(rng, 1.0);
    CHECK((exp_so3(phi) * exp_so3(-phi) - Mat3::Identity()).norm() < 1e-12);
    const Mat3 R = exp_so3(phi);
    CHECK(std::abs(R.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("log_so3 round trips, including near pi") {
  CHECK(log_so3(Mat3::Identity()).norm() == 0.0);
  CHECK((log_so3(exp_so3(Vec3(0, 0, M_PI / 2))) - Vec3(0, 0, M_PI / 2)).norm() <
        1e-12);

  auto rng = make_rng(2);
  for (int i = 0; i < 50; ++i) {
    Vec3 axis = random_vec3(rng, 1.0).normalized();
    const Vec3 phi = axis * (M_PI - 1e-4);
    const Mat3 R = exp_so3(phi);
    CHECK((exp_so3(log_so3(R)) - R).norm() < 1e-6);
    CHECK(log_so3(R).norm() <= M_PI + 1e-12);
  }

  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 1.5;
  CHECK_THROWS_AS(log_so3(bad), std::invalid_argument);
}

TEST_CASE("exp_se3/log_se3 are mutual inverses") {
  CHECK((exp_se3(Vec6::Zero()) - Mat4::Identity()).norm() == 0.0);

  Vec6 pure_t;
  pure_t << 1, 2, 3, 0, 0, 0;
  const Mat4 T = exp_se3(pure_t);
  CHECK((T.topRightCorner<3, 1>() - Vec3(1, 2, 3)).norm() < 1e-15);
  CHECK((T.topLeftCorner<3, 3>() - Mat3::Identity()).norm() < 1e-15);

  auto rng = make_rng(3);
  for (int i = 0; i < 50; ++i) {
    Vec6 xi;
    xi.head<3>() = random_vec3(rng, 2.0);
    Vec3 phi = random_vec3(rng, 1.0);
    if (phi.norm() >= M_PI) phi *= (M_PI - 1e-3) / phi.norm();  // principal branch
    xi.tail<3>() = phi;
    CHECK((log_se3(exp_se3(xi)) - xi).norm() < 1e-9);
    const Mat4 T = exp_se3(xi);
    CHECK((exp_se3(log_se3(T)) - T).norm() < 1e-9);
  }
}

TEST_CASE("odot layout and first-order action") {
  Vec4 ph;
  ph << 0, 0, 0, 1;
  auto M = odot(ph);
  CHECK((M.topLeftCorner<3, 3>() - Mat3::Identity()).norm() == 0.0);
  CHECK(M.block<3, 3>(0, 3).norm() == 0.0);
  CHECK(M.row(3).norm() == 0.0);

  ph << 1, 2, 3, 1;
  Mat3 expect;
  expect << 0, 3, -2, -3, 0, 1, 2, -1, 0;
  CHECK((odot(ph).block<3, 3>(0, 3) - expect).norm() == 0.0);

  Vec4 bad;
  bad << 1, 2, 3, 0.5;
  CHECK_THROWS_AS(odot(bad), std::invalid_argument);

  // (exp(xi^) p_h - p_h) == odot(p_h) xi + O(|xi|^2)
  auto rng = make_rng(4);
  for (int i = 0; i < 20; ++i) {
    Vec6 xi;
    xi.head<3>() = random_vec3(rng, 1.0);
    xi.tail<3>() = random_vec3(rng, 1.0);
    const double eps = 1e-4;
    Vec4 p;
    p << random_vec3(rng, 3.0), 1.0;
    const Vec4 moved = exp_se3(Vec6(eps * xi)) * p;
    const Vec4 lin = p + odot(p) * (eps * xi);
    CHECK((moved - lin).norm() < 10.0 * eps * eps * xi.squaredNorm() *
                                     (1.0 + p.head<3>().norm()));
  }
}

TEST_CASE("Pose round trips and quaternion double cover") {
  auto rng = make_rng(5);
  for (int i = 0; i < 20; ++i) {
    const Mat4 T = random_transform(rng);
    const Pose p(T);
    CHECK((p.matrix() - T).norm() < 1e-9);
    CHECK(std::abs(p.q.norm() - 1.0) < 1e-9);

    Quat neg;
    neg.coeffs() = -p.q.coeffs();
    CHECK((neg.toRotationMatrix() - p.q.toRotationMatrix()).norm() < 1e-15);

    const Pose pi = p.inverse();
    CHECK(((p * pi).matrix() - Mat4::Identity()).norm() < 1e-12);
  }
}

TEST_CASE("compound_poses trivial cases") {
  auto rng = make_rng(6);
  GaussianPose a(random_transform(rng), Mat6::Zero());
  GaussianPose b(random_transform(rng), Mat6::Zero());
  auto out = compound_poses(a, b);
  CHECK((out.mean - a.mean * b.mean).norm() < 1e-12);
  CHECK(out.cov.norm() == 0.0);

  const Mat6 Xi = random_spd6(rng, 0.05);
  GaussianPose ident(Mat4::Identity(), Xi);
  auto out2 = compound_poses(ident, b);
  CHECK((out2.cov - Xi).norm() / Xi.norm() < 1e-9);
}

TEST_CASE("compound_poses matches Monte-Carlo covariance") {
  auto rng = make_rng(7);
  const int kSamples = 200000;
  for (int c = 0; c < 3; ++c) {
    GaussianPose a(random_transform(rng), random_spd6(rng, 0.005));
    GaussianPose b(random_transform(rng), random_spd6(rng, 0.005));
    const auto out = compound_poses(a, b);
    const Mat6 mc = mc_compound_cov(a, b, kSamples, 100 + c);
    CHECK((out.cov - mc).norm() / mc.norm() < 0.05);
  }
}

TEST_CASE("fourth-order correction beats second-order at large noise") {
  auto rng = make_rng(8);
  GaussianPose a(random_transform(rng), Mat6::Zero());
  GaussianPose b(random_transform(rng), Mat6::Zero());
  a.cov.diagonal() << 0.04, 0.04, 0.04, 0.16, 0.16, 0.16;  // sigma_phi = 0.4
  b.cov.diagonal() << 0.04, 0.04, 0.04, 0.16, 0.16, 0.16;

  const Mat6 Ad = adjoint(a.mean);
  const Mat6 second = a.cov + Ad * b.cov * Ad.transpose();
  const Mat6 fourth = compound_poses(a, b).cov;
  const Mat6 mc = mc_compound_cov(a, b, 400000, 9);

  const double err2 = (second - mc).norm() / mc.norm();
  const double err4 = (fourth - mc).norm() / mc.norm();
  CHECK(err4 < err2);
  CHECK(err4 < 0.02);
}

TEST_CASE("transform_gaussian_point trivial and rotation cases") {
  const Mat3 Z = 0.0025 * Mat3::Identity();
  GaussianPoint pt(Vec3(1, 2, 3), Z);

  GaussianPose ident(Mat4::Identity(), Mat6::Zero());
  auto out = transform_gaussian_point(ident, pt);
  CHECK((out.cov - Z).norm() == 0.0);
  CHECK((out.mean - pt.mean).norm() == 0.0);

  auto rng = make_rng(9);
  const Mat3 R = exp_so3(random_vec3(rng, 1.0));
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = R;
  GaussianPose rot(T, Mat6::Zero());
  const Mat3 Z2 = random_spd3(rng, 0.05);
  auto out2 = transform_gaussian_point(rot, GaussianPoint(Vec3(1, 0, 2), Z2));
  CHECK((out2.cov - R * Z2 * R.transpose()).norm() < 1e-15);
}

TEST_CASE("transform_gaussian_point matches Monte-Carlo covariance") {
  auto rng = make_rng(10);
  for (int c = 0; c < 3; ++c) {
    GaussianPose pose(random_transform(rng), random_spd6(rng, 0.005));
    GaussianPoint pt(random_vec3(rng, 4.0), random_spd3(rng, 0.02));
    const auto out = transform_gaussian_point(pose, pt);
    const Mat3 mc = mc_point_cov(pose, pt, 200000, 200 + c);
    CHECK((out.cov - mc).norm() / mc.norm() < 0.05);
  }
}

TEST_CASE("pose uncertainty never shrinks total point variance") {
  auto rng = make_rng(11);
  const Mat3 Z = 0.0025 * Mat3::Identity();
  for (int i = 0; i < 1000; ++i) {
    const Mat4 T = random_transform(rng);
    GaussianPose noisy(T, random_spd6(rng, 0.02));
    GaussianPose clean(T, Mat6::Zero());
    GaussianPoint pt(random_vec3(rng, 5.0), Z);
    const double tr_noisy = transform_gaussian_point(noisy, pt).cov.trace();
    const double tr_clean = transform_gaussian_point(clean, pt).cov.trace();
    CHECK(tr_noisy >= tr_clean - 1e-12);
  }
}

TEST_CASE("compound covariance associativity holds at small noise") {
  auto rng = make_rng(12);
  GaussianPose a(random_transform(rng), random_spd6(rng, 0.004));
  GaussianPose b(random_transform(rng), random_spd6(rng, 0.004));
  GaussianPose c(random_transform(rng), random_spd6(rng, 0.004));
  const auto left = compound_poses(compound_poses(a, b), c);
  const auto right = compound_poses(a, compound_poses(b, c));
  CHECK((left.mean - right.mean).norm() < 1e-9);
  CHECK((left.cov - right.cov).norm() / right.cov.norm() < 0.05);
}

TEST_CASE("left_cov_from_local is a congruence by the expected map") {
  auto rng = make_rng(13);
  const Pose p(random_transform(rng));
  const Mat6 C = random_spd6(rng, 0.01);
  const Mat6 out = left_cov_from_local(p, C);
  // Spot-check: a pure body-frame rotation perturbation becomes a coupled
  // rotation/translation perturbation in the world frame.
  Mat6 G = Mat6::Zero();
  G.topLeftCorner<3, 3>() = Mat3::Identity();
  G.topRightCorner<3, 3>() = skew(p.t) * p.rotation();
  G.bottomRightCorner<3, 3>() = p.rotation();
  CHECK((out - G * C * G.transpose()).norm() < 1e-12);

  // Consistency: retracting a local delta reproduces exp(G delta ^) * T.
  const Vec6 d = 1e-5 * Vec6::Ones();
  const Pose moved = p.retract(d);
  const Mat4 via_left = exp_se3(G * d) * p.matrix();
  CHECK((moved.matrix() - via_left).norm() < 1e-8);
}
