#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "mloam/parallel.h"
#include "mloam/se3.h"

// Robust nonlinear least-squares on block-structured states.
//
// A state is a list of blocks, each either a Pose (6-dim tangent: additive
// translation, body-frame rotation) or a plain Euclidean vector. Residual
// blocks reference state blocks by index and provide analytic Jacobians in
// the tangent space. Residuals are whitened by Sigma^{-1/2}; the Huber loss
// acts on whitened norms with scale delta = 1.

namespace mloam {

struct State {
  struct Block {
    bool is_pose = false;
    Pose pose;
    Eigen::VectorXd vec;
    bool constant = false;

    int tangent_dim() const { return is_pose ? 6 : int(vec.size()); }
  };

  std::vector<Block> blocks;

  int add_pose(const Pose& p, bool constant = false);
  int add_vector(const Eigen::VectorXd& v, bool constant = false);

  int tangent_dim() const;
  int tangent_offset(int block) const;

  State retracted(const Eigen::VectorXd& delta) const;
  /// Blockwise tangent difference this (-) base, used by prior residuals.
  Eigen::VectorXd minus(const State& base) const;
};

class ResidualBlock {
 public:
  virtual ~ResidualBlock() = default;

  virtual const std::vector<int>& params() const = 0;
  virtual int residual_dim() const = 0;

  /// Evaluate the raw (unwhitened) residual; when J is non-null, fill one
  /// tangent-space Jacobian per referenced parameter block.
  virtual void evaluate(const State& x, Eigen::VectorXd* r,
                        std::vector<Eigen::MatrixXd>* J) const = 0;

  /// Residual covariance; identity if empty.
  const Eigen::MatrixXd& sigma() const { return sigma_; }
  void set_sigma(const Eigen::MatrixXd& sigma);
  /// Sigma^{-1/2} used for whitening (identity if sigma was never set).
  const Eigen::MatrixXd& sqrt_info() const { return sqrt_info_; }

  bool robust() const { return robust_; }
  void set_robust(bool r) { robust_ = r; }

 private:
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sqrt_info_;
  bool robust_ = false;
};

/// Linear prior from marginalization: r(x) = r* + J* (x [-] x0).
struct PriorBlock {
  Eigen::MatrixXd J;
  Eigen::VectorXd r;
  State linearization_point;
  /// Tangent offset of each linearization block inside J's columns.
  std::vector<int> offsets;
};

struct SolveOptions {
  int max_iterations = 30;
  double initial_damping = 1e-4;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-10;
  double cost_relative_tolerance = 1e-8;
  double huber_delta = 1.0;
  /// When >= 0, apply solution remapping with this eigenvalue threshold.
  double remap_threshold = -1.0;
  Kernel kernel = Kernel::OpenMP;
};

enum class SolveStatus { kConverged, kMaxIterations, kNonFinite };

struct SolveResult {
  State state;
  /// Full robust-weighted information J^T Sigma^-1 J at the final iterate,
  /// over all blocks (constant ones included).
  Eigen::MatrixXd information;
  /// Gradient J^T Sigma^-1 r at the final iterate.
  Eigen::VectorXd gradient;
  SolveStatus status = SolveStatus::kMaxIterations;
  double final_cost = 0.0;
  int iterations = 0;
  std::string message;
};

SolveResult solve(const std::vector<const ResidualBlock*>& blocks,
                  const PriorBlock* prior, const State& init,
                  const SolveOptions& opts = {});

/// Smallest eigenvalue of a symmetric matrix (the degeneracy factor).
double degeneracy_factor(const Eigen::MatrixXd& lambda);
/// Same, restricted to the dim x dim diagonal sub-block at `offset`.
double degeneracy_factor(const Eigen::MatrixXd& lambda, int offset, int dim);

/// Zero the components of `delta` along eigenvectors of `lambda` whose
/// eigenvalue falls below `threshold`.
Eigen::VectorXd solution_remap(const Eigen::VectorXd& delta,
                               const Eigen::MatrixXd& lambda,
                               double threshold);

struct MarginalizeResult {
  Eigen::MatrixXd J;          // J* with J*^T J* = Lambda_rr^*
  Eigen::VectorXd r;          // r* with J*^T r* = g_r^*
  Eigen::MatrixXd lambda_rr;  // the Schur complement itself
  Eigen::VectorXd g_r;
  bool floored = false;       // Lambda_mm needed the eigenvalue floor
};

/// Schur-complement marginalization of the tangent indices `marg_idx` out of
/// (lambda, g). Lambda_mm is inverted through an eigendecomposition with a
/// relative floor of 1e-8 * max eigenvalue.
MarginalizeResult marginalize(const Eigen::MatrixXd& lambda,
                              const Eigen::VectorXd& g,
                              const std::vector<int>& marg_idx);

/// Assembles H = sum J^T Sigma^-1 J and g = sum J^T Sigma^-1 r over the given
/// residual blocks at state x (robust-weighted). Exposed for convergence
/// monitoring and for the kernel benchmark; `kernel` picks the OpenMP or the
/// serial reference implementation (identical results).
void linearize(const std::vector<const ResidualBlock*>& blocks, const State& x,
               double huber_delta, Kernel kernel, Eigen::MatrixXd* H,
               Eigen::VectorXd* g, double* cost, bool* all_finite);

}  // namespace mloam
