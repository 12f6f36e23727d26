#include "mloam/nls.h"

#include <cmath>
#include <stdexcept>

namespace mloam {

int State::add_pose(const Pose& p, bool constant) {
  Block b;
  b.is_pose = true;
  b.pose = p;
  b.constant = constant;
  blocks.push_back(std::move(b));
  return int(blocks.size()) - 1;
}

int State::add_vector(const Eigen::VectorXd& v, bool constant) {
  Block b;
  b.is_pose = false;
  b.vec = v;
  b.constant = constant;
  blocks.push_back(std::move(b));
  return int(blocks.size()) - 1;
}

int State::tangent_dim() const {
  int n = 0;
  for (const auto& b : blocks) n += b.tangent_dim();
  return n;
}

int State::tangent_offset(int block) const {
  int n = 0;
  for (int i = 0; i < block; ++i) n += blocks[i].tangent_dim();
  return n;
}

State State::retracted(const Eigen::VectorXd& delta) const {
  State out = *this;
  int off = 0;
  for (auto& b : out.blocks) {
    const int d = b.tangent_dim();
    if (!b.constant) {
      if (b.is_pose) {
        b.pose = b.pose.retract(delta.segment<6>(off));
      } else {
        b.vec += delta.segment(off, d);
      }
    }
    off += d;
  }
  return out;
}

Eigen::VectorXd State::minus(const State& base) const {
  Eigen::VectorXd d(tangent_dim());
  int off = 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const int n = blocks[i].tangent_dim();
    if (blocks[i].is_pose) {
      d.segment<6>(off) = blocks[i].pose.local_minus(base.blocks[i].pose);
    } else {
      d.segment(off, n) = blocks[i].vec - base.blocks[i].vec;
    }
    off += n;
  }
  return d;
}

void ResidualBlock::set_sigma(const Eigen::MatrixXd& sigma) {
  sigma_ = sigma;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-16);
  sqrt_info_ = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
               es.eigenvectors().transpose();
}

namespace {

// Huber on squared whitened norm s: rho(s) = s for s <= d^2, else
// 2 d sqrt(s) - d^2. The IRLS weight is rho'(s).
inline void huber(double s, double delta, double* rho, double* w) {
  const double d2 = delta * delta;
  if (s <= d2) {
    *rho = s;
    *w = 1.0;
  } else {
    const double sq = std::sqrt(s);
    *rho = 2.0 * delta * sq - d2;
    *w = delta / sq;
  }
}

struct BlockEval {
  Eigen::VectorXd u;                // whitened residual
  std::vector<Eigen::MatrixXd> Jw;  // whitened Jacobians
  double rho = 0.0;
  double w = 1.0;
  bool finite = true;
};

void eval_one(const ResidualBlock& blk, const State& x, double huber_delta,
              bool with_jacobians, BlockEval* out) {
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> J;
  blk.evaluate(x, &r, with_jacobians ? &J : nullptr);
  if (!r.allFinite()) {
    out->finite = false;
    return;
  }
  const bool white = blk.sqrt_info().size() > 0;
  out->u = white ? Eigen::VectorXd(blk.sqrt_info() * r) : r;
  const double s = out->u.squaredNorm();
  if (blk.robust()) {
    huber(s, huber_delta, &out->rho, &out->w);
  } else {
    out->rho = s;
    out->w = 1.0;
  }
  if (with_jacobians) {
    out->Jw.resize(J.size());
    for (size_t i = 0; i < J.size(); ++i) {
      out->Jw[i] = white ? Eigen::MatrixXd(blk.sqrt_info() * J[i]) : J[i];
    }
  }
}

double total_cost(const std::vector<const ResidualBlock*>& blocks,
                  const State& x, double huber_delta, const PriorBlock* prior,
                  bool* finite) {
  *finite = true;
  double cost = 0.0;
  for (const ResidualBlock* b : blocks) {
    BlockEval ev;
    eval_one(*b, x, huber_delta, false, &ev);
    if (!ev.finite) {
      *finite = false;
      return 0.0;
    }
    cost += ev.rho;
  }
  if (prior) {
    const Eigen::VectorXd rp =
        prior->r + prior->J * x.minus(prior->linearization_point);
    cost += rp.squaredNorm();
  }
  return cost;
}

}  // namespace

void linearize(const std::vector<const ResidualBlock*>& blocks, const State& x,
               double huber_delta, Kernel kernel, Eigen::MatrixXd* H,
               Eigen::VectorXd* g, double* cost, bool* all_finite) {
  const int n = x.tangent_dim();
  const int m = int(blocks.size());
  std::vector<BlockEval> evals(m);

  // Each block writes only its own slot; accumulation stays serial so the
  // result is independent of scheduling.
  if (kernel == Kernel::OpenMP) {
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < m; ++i) {
      eval_one(*blocks[i], x, huber_delta, true, &evals[i]);
    }
  } else {
    for (int i = 0; i < m; ++i) {
      eval_one(*blocks[i], x, huber_delta, true, &evals[i]);
    }
  }

  H->setZero(n, n);
  g->setZero(n);
  *cost = 0.0;
  *all_finite = true;
  std::vector<int> offsets(x.blocks.size());
  for (size_t i = 0; i < x.blocks.size(); ++i)
    offsets[i] = x.tangent_offset(int(i));

  for (int i = 0; i < m; ++i) {
    const BlockEval& ev = evals[i];
    if (!ev.finite) {
      *all_finite = false;
      return;
    }
    *cost += ev.rho;
    const auto& params = blocks[i]->params();
    for (size_t a = 0; a < params.size(); ++a) {
      const int oa = offsets[params[a]];
      const int da = x.blocks[params[a]].tangent_dim();
      g->segment(oa, da) += ev.w * ev.Jw[a].transpose() * ev.u;
      for (size_t b = 0; b < params.size(); ++b) {
        const int ob = offsets[params[b]];
        const int db = x.blocks[params[b]].tangent_dim();
        H->block(oa, ob, da, db) += ev.w * ev.Jw[a].transpose() * ev.Jw[b];
      }
    }
  }
}

SolveResult solve(const std::vector<const ResidualBlock*>& blocks,
                  const PriorBlock* prior, const State& init,
                  const SolveOptions& opts) {
  SolveResult res;
  res.state = init;
  const int n = init.tangent_dim();

  // Mask selecting the free tangent dimensions.
  std::vector<int> free_idx;
  for (size_t i = 0; i < init.blocks.size(); ++i) {
    if (init.blocks[i].constant) continue;
    const int off = init.tangent_offset(int(i));
    for (int d = 0; d < init.blocks[i].tangent_dim(); ++d)
      free_idx.push_back(off + d);
  }
  const int nf = int(free_idx.size());

  double mu = opts.initial_damping;
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd g(n);
  double cost = 0.0;
  bool finite = true;

  auto add_prior = [&](Eigen::MatrixXd* Hp, Eigen::VectorXd* gp,
                       const State& x) -> double {
    if (!prior) return 0.0;
    const Eigen::VectorXd rp =
        prior->r + prior->J * x.minus(prior->linearization_point);
    *Hp += prior->J.transpose() * prior->J;
    *gp += prior->J.transpose() * rp;
    return rp.squaredNorm();
  };

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter + 1;
    linearize(blocks, res.state, opts.huber_delta, opts.kernel, &H, &g, &cost,
              &finite);
    if (!finite) {
      res.status = SolveStatus::kNonFinite;
      res.message = "non-finite residual during linearization";
      return res;
    }
    cost += add_prior(&H, &g, res.state);

    Eigen::MatrixXd Hf(nf, nf);
    Eigen::VectorXd gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf(a) = g(free_idx[a]);
      for (int b = 0; b < nf; ++b) Hf(a, b) = H(free_idx[a], free_idx[b]);
    }

    if (gf.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
      res.status = SolveStatus::kConverged;
      break;
    }

    // Try the pure Gauss-Newton step first; fall back to the damping ladder
    // when it fails to descend. Damping is scaled by the dominant curvature
    // so the step stays bounded even when H is singular along some
    // directions.
    const double scale = std::max(1.0, Hf.diagonal().maxCoeff());
    bool stepped = false;
    for (int attempt = 0; attempt < 9; ++attempt) {
      Eigen::MatrixXd Hd = Hf;
      if (attempt > 0) Hd.diagonal().array() += mu * scale;
      Eigen::VectorXd df = Hd.ldlt().solve(-gf);
      if (!df.allFinite() || (attempt == 0 && df.norm() > 1e8)) {
        if (attempt > 0) mu *= 10.0;
        continue;
      }
      if (opts.remap_threshold >= 0.0) {
        df = solution_remap(df, Hf, opts.remap_threshold);
      }
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
      for (int a = 0; a < nf; ++a) delta(free_idx[a]) = df(a);

      const State trial = res.state.retracted(delta);
      bool trial_finite = true;
      const double trial_cost =
          total_cost(blocks, trial, opts.huber_delta, prior, &trial_finite);
      if (trial_finite && trial_cost <= cost) {
        res.state = trial;
        if (attempt > 0) mu = std::max(mu / 3.0, 1e-12);
        stepped = true;
        if (df.norm() < opts.step_tolerance ||
            cost - trial_cost < opts.cost_relative_tolerance * (1.0 + cost)) {
          res.status = SolveStatus::kConverged;
        }
        break;
      }
      if (attempt > 0) mu *= 10.0;
    }
    if (!stepped) {
      // No downhill step at any damping level: accept the current iterate.
      res.status = SolveStatus::kConverged;
    }
    if (res.status == SolveStatus::kConverged) break;
  }

  linearize(blocks, res.state, opts.huber_delta, opts.kernel, &res.information,
            &res.gradient, &res.final_cost, &finite);
  res.final_cost += add_prior(&res.information, &res.gradient, res.state);
  if (!finite) {
    res.status = SolveStatus::kNonFinite;
    res.message = "non-finite residual at solution";
  }
  return res;
}

double degeneracy_factor(const Eigen::MatrixXd& lambda) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
  return es.eigenvalues().minCoeff();
}

double degeneracy_factor(const Eigen::MatrixXd& lambda, int offset, int dim) {
  return degeneracy_factor(lambda.block(offset, offset, dim, dim));
}

Eigen::VectorXd solution_remap(const Eigen::VectorXd& delta,
                               const Eigen::MatrixXd& lambda,
                               double threshold) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(delta.size());
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) >= threshold) {
      const Eigen::VectorXd v = es.eigenvectors().col(i);
      out += v * (v.dot(delta));
    }
  }
  return out;
}

MarginalizeResult marginalize(const Eigen::MatrixXd& lambda,
                              const Eigen::VectorXd& g,
                              const std::vector<int>& marg_idx) {
  const int n = int(lambda.rows());
  std::vector<bool> is_m(n, false);
  for (int i : marg_idx) is_m.at(i) = true;
  std::vector<int> m_idx, r_idx;
  for (int i = 0; i < n; ++i) (is_m[i] ? m_idx : r_idx).push_back(i);
  const int nm = int(m_idx.size());
  const int nr = int(r_idx.size());

  auto pick = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < cols.size(); ++j)
        out(i, j) = lambda(rows[i], cols[j]);
    return out;
  };

  const Eigen::MatrixXd Lmm = pick(m_idx, m_idx);
  const Eigen::MatrixXd Lmr = pick(m_idx, r_idx);
  const Eigen::MatrixXd Lrm = pick(r_idx, m_idx);
  const Eigen::MatrixXd Lrr = pick(r_idx, r_idx);
  Eigen::VectorXd gm(nm), gr(nr);
  for (int i = 0; i < nm; ++i) gm(i) = g(m_idx[i]);
  for (int i = 0; i < nr; ++i) gr(i) = g(r_idx[i]);

  MarginalizeResult out;

  // Pseudo-inverse of Lambda_mm with a relative eigenvalue floor; degenerate
  // pivot states do occur under planar motion.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esm(Lmm);
  const double max_ev = std::max(esm.eigenvalues().maxCoeff(), 0.0);
  const double floor = 1e-8 * std::max(max_ev, 1e-300);
  Eigen::VectorXd inv_ev(nm);
  for (int i = 0; i < nm; ++i) {
    if (esm.eigenvalues()(i) > floor) {
      inv_ev(i) = 1.0 / esm.eigenvalues()(i);
    } else {
      inv_ev(i) = 0.0;
      out.floored = true;
    }
  }
  const Eigen::MatrixXd Lmm_inv = esm.eigenvectors() * inv_ev.asDiagonal() *
                                  esm.eigenvectors().transpose();

  out.lambda_rr = Lrr - Lrm * Lmm_inv * Lmr;
  out.lambda_rr = 0.5 * (out.lambda_rr + out.lambda_rr.transpose());
  out.g_r = gr - Lrm * Lmm_inv * gm;

  // Factor Lambda_rr^* = P Psi P^T; J* = sqrt(Psi) P^T over the retained
  // spectrum, r* = sqrt(Psi^-1) P^T g_r^*.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esr(out.lambda_rr);
  const double rmax = std::max(esr.eigenvalues().maxCoeff(), 0.0);
  const double rfloor = 1e-12 * std::max(rmax, 1e-300);
  std::vector<int> keep;
  for (int i = 0; i < nr; ++i)
    if (esr.eigenvalues()(i) > rfloor) keep.push_back(i);

  out.J.resize(keep.size(), nr);
  out.r.resize(keep.size());
  for (size_t k = 0; k < keep.size(); ++k) {
    const double ev = esr.eigenvalues()(keep[k]);
    const Eigen::VectorXd v = esr.eigenvectors().col(keep[k]);
    out.J.row(k) = std::sqrt(ev) * v.transpose();
    out.r(k) = (1.0 / std::sqrt(ev)) * v.dot(out.g_r);
  }
  return out;
}

}  // namespace mloam
