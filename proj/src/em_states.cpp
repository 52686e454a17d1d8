#include "emid/em_states.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace emid {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

double logdet_pd(const Mat& sigma, const char* what) {
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + " is not positive definite");
  double ld = 0.0;
  for (int i = 0; i < sigma.rows(); ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
  return ld;
}

Mat floor_cov(const Mat& s, double eps) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym(s));
  Vec lam = es.eigenvalues().cwiseMax(eps);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

void check_states_em_applicable(const ExplicitModel& model) {
  if (model.nw() != model.nx())
    throw SingularModelError("latent-states EM needs a square disturbance (nw == nx)");
  if ((model.G - Mat::Identity(model.nx(), model.nx())).norm() > 1e-12)
    throw SingularModelError("latent-states EM needs G == I");
  Eigen::LLT<Mat> llt(model.Sigmaw);
  if (llt.info() != Eigen::Success || model.Sigmaw.norm() < 1e-300)
    throw SingularModelError(
        "latent-states EM needs a positive definite Sigmaw: the state "
        "transition density does not exist");
}

double q_ls_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
                 const SmoothedStates& s) {
  const int T = static_cast<int>(y.cols());
  const int nx = theta.nx();
  const int ny = theta.ny();

  // Initial-state term.
  Vec d = s.xs.col(0) - theta.mu;
  Eigen::LLT<Mat> l1(theta.Sigma1);
  if (l1.info() != Eigen::Success)
    throw std::runtime_error("Sigma1 is not positive definite");
  double q = -0.5 * (nx * kLog2Pi + logdet_pd(theta.Sigma1, "Sigma1") +
                     l1.solve(s.Ps[0] + d * d.transpose()).trace());

  // Transition terms: E[(x_{t+1} - A x_t - B u_t)(.)'].
  Eigen::LLT<Mat> lw(theta.Sigmaw);
  if (lw.info() != Eigen::Success)
    throw std::runtime_error("Sigmaw is not positive definite");
  const double ldw = logdet_pd(theta.Sigmaw, "Sigmaw");
  for (int t = 0; t + 1 < T; ++t) {
    Vec r = s.xs.col(t + 1) - theta.A * s.xs.col(t) - theta.B * u.col(t);
    Mat E = r * r.transpose() + s.Ps[t + 1] -
            theta.A * s.lag1[t].transpose() - s.lag1[t] * theta.A.transpose() +
            theta.A * s.Ps[t] * theta.A.transpose();
    q += -0.5 * (nx * kLog2Pi + ldw + lw.solve(sym(E)).trace());
  }

  // Output terms: E[(y_t - C x_t - D u_t)(.)'].
  Eigen::LLT<Mat> lv(theta.Sigmav);
  if (lv.info() != Eigen::Success)
    throw std::runtime_error("Sigmav is not positive definite");
  const double ldv = logdet_pd(theta.Sigmav, "Sigmav");
  for (int t = 0; t < T; ++t) {
    Vec r = y.col(t) - theta.C * s.xs.col(t) - theta.D * u.col(t);
    Mat E = r * r.transpose() + theta.C * s.Ps[t] * theta.C.transpose();
    q += -0.5 * (ny * kLog2Pi + ldv + lv.solve(sym(E)).trace());
  }
  return q;
}

ExplicitModel em_states_iterate(const ExplicitModel& model, const Mat& u,
                                const Mat& y, double* loglik_out,
                                double min_cov_eig) {
  check_states_em_applicable(model);
  const int T = static_cast<int>(y.cols());
  const int nx = model.nx();
  const int nu = model.nu();
  const int ny = model.ny();
  if (loglik_out) *loglik_out = log_likelihood(model, u, y);
  SmoothedStates s = rts_smoother(model, u, y);

  auto Ezz = [&](int t) {  // E[[x;u][x;u]'] at t
    Mat z(nx + nu, nx + nu);
    z.topLeftCorner(nx, nx) = s.Ps[t] + s.xs.col(t) * s.xs.col(t).transpose();
    z.topRightCorner(nx, nu) = s.xs.col(t) * u.col(t).transpose();
    z.bottomLeftCorner(nu, nx) = z.topRightCorner(nx, nu).transpose();
    z.bottomRightCorner(nu, nu) = u.col(t) * u.col(t).transpose();
    return z;
  };
  auto Ez = [&](int t) {
    Vec z(nx + nu);
    z.head(nx) = s.xs.col(t);
    z.tail(nu) = u.col(t);
    return z;
  };

  ExplicitModel out = model;
  out.mu = s.xs.col(0);
  out.Sigma1 = floor_cov(s.Ps[0], min_cov_eig);

  // Transition regression x_{t+1} = [A B] z_t + w_t over t = 1..T-1.
  Mat Szz = Mat::Zero(nx + nu, nx + nu);
  Mat Sxz = Mat::Zero(nx, nx + nu);   // sum E[x_{t+1} z_t']
  Mat Sxx = Mat::Zero(nx, nx);        // sum E[x_{t+1} x_{t+1}']
  for (int t = 0; t + 1 < T; ++t) {
    Szz += Ezz(t);
    Mat xz(nx, nx + nu);
    xz.leftCols(nx) = s.lag1[t] + s.xs.col(t + 1) * s.xs.col(t).transpose();
    xz.rightCols(nu) = s.xs.col(t + 1) * u.col(t).transpose();
    Sxz += xz;
    Sxx += s.Ps[t + 1] + s.xs.col(t + 1) * s.xs.col(t + 1).transpose();
  }
  Mat AB = Szz.ldlt().solve(Sxz.transpose()).transpose();
  out.A = AB.leftCols(nx);
  out.B = AB.rightCols(nu);
  Mat Sw = Sxx - AB * Sxz.transpose() - Sxz * AB.transpose() + AB * Szz * AB.transpose();
  out.Sigmaw = floor_cov(Sw / (T - 1), min_cov_eig);

  // Output regression y_t = [C D] z_t + v_t over t = 1..T.
  Mat Szz2 = Mat::Zero(nx + nu, nx + nu);
  Mat Syz = Mat::Zero(ny, nx + nu);
  Mat Syy = Mat::Zero(ny, ny);
  for (int t = 0; t < T; ++t) {
    Szz2 += Ezz(t);
    Syz += y.col(t) * Ez(t).transpose();
    Syy += y.col(t) * y.col(t).transpose();
  }
  Mat CD = Szz2.ldlt().solve(Syz.transpose()).transpose();
  out.C = CD.leftCols(nx);
  out.D = CD.rightCols(nu);
  Mat Sv = Syy - CD * Syz.transpose() - Syz * CD.transpose() + CD * Szz2 * CD.transpose();
  out.Sigmav = floor_cov(Sv / T, min_cov_eig);
  return out;
}

EmRunResult em_states_run(const ExplicitModel& init, const Mat& u, const Mat& y,
                          const EmOptions& opts) {
  EmRunResult res;
  res.model = init;
  for (int k = 0; k < opts.max_iters; ++k) {
    double ll = 0.0;
    ExplicitModel next = em_states_iterate(res.model, u, y, &ll, opts.min_cov_eig);
    res.loglik.push_back(ll);
    if (k > 0 && res.loglik[k] - res.loglik[k - 1] <
                     opts.rel_tol * (1.0 + std::abs(res.loglik[k]))) {
      res.converged = true;
      res.model = next;
      break;
    }
    res.model = next;
  }
  res.loglik.push_back(log_likelihood(res.model, u, y));
  return res;
}

}  // namespace emid
