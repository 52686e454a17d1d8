#include "emid/em_dist.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "emid/kalman.hpp"

namespace emid {

namespace {

Mat floor_cov(const Mat& s, double min_eig) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (s + s.transpose()));
  Vec d = eig.eigenvalues().cwiseMax(min_eig);
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

ExplicitModel em_dist_iterate(const ExplicitModel& model, const Mat& u,
                              const Mat& y, const EmDistOptions& opts,
                              EmDistIter* info) {
  EStepBundle bundle = estep(model, u, y);
  ExplicitModel next = model;
  mstep_alpha(next, bundle.posterior);
  mstep_beta(next, bundle);
  if (next.Sigma1.norm() > 0) next.Sigma1 = floor_cov(next.Sigma1, opts.min_cov_eig);
  if (next.Sigmaw.norm() > 0) next.Sigmaw = floor_cov(next.Sigmaw, opts.min_cov_eig);

  std::vector<SimErrorInstance> instances = make_instances(
      bundle.posterior, u, y, model.nx(), model.nw(), opts.mstep.omega_tol);
  Mat omega_cols = rank_one_decompose(bundle.posterior.Omega, opts.mstep.omega_tol);

  ImplicitModel eta_k = to_implicit(model);
  Certificate cert = fit_multiplier(eta_k, instances[0], opts.mstep);
  eta_k.P = cert.P;
  MstepResult res = solve_mstep(eta_k, cert, instances, omega_cols, opts.mstep);

  ThetaGamma g = to_explicit(res.eta);
  next.A = g.A;
  next.B = g.B;
  next.G = g.G;
  next.C = g.C;
  next.D = g.D;
  next.Sigmav = g.Sigmav;

  if (info) {
    info->loglik = bundle.loglik;
    info->merit_start = res.objective_start;
    info->merit_end = res.objective_end;
    info->fell_back = res.fell_back;
    info->newton_steps = res.newton_steps;
  }
  return next;
}

EmDistResult em_dist_run(const ExplicitModel& init, const Mat& u, const Mat& y,
                         const EmDistOptions& opts) {
  EmDistResult out;
  out.model = init;
  double prev = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < opts.max_iters; ++k) {
    EmDistIter it;
    ExplicitModel next = em_dist_iterate(out.model, u, y, opts, &it);
    out.history.push_back(it);
    if (std::isfinite(prev) &&
        it.loglik - prev < opts.rel_tol * (1.0 + std::abs(it.loglik))) {
      out.converged = true;
      out.model = next;
      break;
    }
    prev = it.loglik;
    out.model = next;
  }
  out.loglik = log_likelihood(out.model, u, y);
  return out;
}

}  // namespace emid
