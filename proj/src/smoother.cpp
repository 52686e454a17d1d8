#include "emid/smoother.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "emid/kalman.hpp"
#include "emid/lifted.hpp"

namespace emid {

namespace {
inline Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }
}  // namespace

SmoothedPosterior disturbance_smoother(const ExplicitModel& model, const Mat& u,
                                       const Mat& y) {
  const FilterOutput f = kalman_filter(model, u, y);
  const int T = static_cast<int>(y.cols());
  const int nx = model.nx();
  const int nw = model.nw();
  const int nz = nx + (T - 1) * nw;

  // Backward information recursions:
  //   r_{t-1} = C' S_t^{-1} e_t + L_t' r_t,  N_{t-1} = C' S_t^{-1} C + L_t' N_t L_t.
  std::vector<Vec> r(T + 1, Vec::Zero(nx));
  std::vector<Mat> N(T + 1, Mat::Zero(nx, nx));
  for (int t = T - 1; t >= 0; --t) {
    const Eigen::LLT<Mat> llt(f.S[t]);
    const Mat CtSi = (llt.solve(model.C)).transpose();  // C' S^{-1}
    r[t] = CtSi * f.innov.col(t) + f.Lmat[t].transpose() * r[t + 1];
    N[t] = sym(CtSi * model.C + f.Lmat[t].transpose() * N[t + 1] * f.Lmat[t]);
  }

  SmoothedPosterior post;
  post.x1_mean = model.mu + model.Sigma1 * r[0];
  post.x1_cov = sym(model.Sigma1 - model.Sigma1 * N[0] * model.Sigma1);

  const Mat GSw = model.G * model.Sigmaw;  // nx x nw
  post.Zhat = Vec::Zero(nz);
  post.Zhat.head(nx) = post.x1_mean;
  for (int t = 1; t < T; ++t)
    post.Zhat.segment(nx + (t - 1) * nw, nw) = GSw.transpose() * r[t];

  post.Omega = Mat::Zero(nz, nz);
  post.Omega.topLeftCorner(nx, nx) = post.x1_cov;
  // Diagonal blocks: Var(w_t | y) = Sigmaw - Sigmaw G' N_t G Sigmaw.
  for (int t = 1; t < T; ++t) {
    post.Omega.block(nx + (t - 1) * nw, nx + (t - 1) * nw, nw, nw) =
        sym(model.Sigmaw - GSw.transpose() * N[t] * GSw);
  }
  // Cross blocks: Cov(r_t, r_s) = L_t' ... L_{s-1}' N_s for t < s, hence
  //   Cov(w_t, w_s | y) = -Sigmaw G' (L_t' ... L_{s-1}') N_s G Sigmaw,
  //   Cov(x_1, w_s | y) = -Sigma1 (L_0' ... L_{s-1}') N_s G Sigmaw.
  for (int s = 1; s < T; ++s) {
    Mat prod = N[s] * GSw;                            // accumulates L' products
    for (int t = s - 1; t >= 1; --t) {
      prod = f.Lmat[t].transpose() * prod;
      const Mat block = -GSw.transpose() * prod;      // Cov(w_t, w_s | y)
      post.Omega.block(nx + (t - 1) * nw, nx + (s - 1) * nw, nw, nw) = block;
      post.Omega.block(nx + (s - 1) * nw, nx + (t - 1) * nw, nw, nw) = block.transpose();
    }
    const Mat x1block =
        -model.Sigma1 * (f.Lmat[0].transpose() * prod);  // Cov(x_1, w_s | y)
    post.Omega.block(0, nx + (s - 1) * nw, nx, nw) = x1block;
    post.Omega.block(nx + (s - 1) * nw, 0, nw, nx) = x1block.transpose();
  }

  // Per-step second moments; w_T never influences y_{1:T}, so it keeps its prior.
  post.W2.resize(T);
  for (int t = 1; t < T; ++t) {
    const Vec wm = post.Zhat.segment(nx + (t - 1) * nw, nw);
    post.W2[t - 1] =
        post.Omega.block(nx + (t - 1) * nw, nx + (t - 1) * nw, nw, nw) + wm * wm.transpose();
  }
  post.W2[T - 1] = model.Sigmaw;

  // Smoothed output residual via the noiseless simulation at the posterior mean.
  Mat what = Mat::Zero(nw, T);
  for (int t = 1; t < T; ++t) what.col(t - 1) = post.Zhat.segment(nx + (t - 1) * nw, nw);
  const Mat xbar = simulate(model, u, post.x1_mean, what);
  const Mat resid = y - model.C * xbar - model.D * u;
  post.Delta = Vec(T * model.ny());
  for (int t = 0; t < T; ++t) post.Delta.segment(t * model.ny(), model.ny()) = resid.col(t);
  return post;
}

OracleResult lifted_conditioning_oracle(const ExplicitModel& model, const Mat& u,
                                        const Mat& y) {
  const int T = static_cast<int>(y.cols());
  if (T > 100)
    throw std::invalid_argument("lifted_conditioning_oracle: horizon too large (T > 100)");
  const int nx = model.nx();
  const int nw = model.nw();
  const int ny = model.ny();
  const int nz = nx + (T - 1) * nw;

  const LiftedSystem sys = build_lifted(model, T);
  const Mat H = sys.Cbar * sys.Fbar;  // T ny x nz
  const Mat GD = sys.Cbar * sys.Gbar + sys.Dbar;

  Vec U(T * model.nu()), Y(T * ny);
  for (int t = 0; t < T; ++t) {
    U.segment(t * model.nu(), model.nu()) = u.col(t);
    Y.segment(t * ny, ny) = y.col(t);
  }

  Vec mZ = Vec::Zero(nz);
  mZ.head(nx) = model.mu;
  Mat PZ = Mat::Zero(nz, nz);
  PZ.topLeftCorner(nx, nx) = model.Sigma1;
  for (int t = 0; t < T - 1; ++t) PZ.block(nx + t * nw, nx + t * nw, nw, nw) = model.Sigmaw;

  const Mat Sy = sym(H * PZ * H.transpose() + sys.SigmaYbar);
  Eigen::LLT<Mat> llt(Sy);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("lifted output covariance is not positive definite");

  const Vec ybar = H * mZ + GD * U;
  const Vec eY = Y - ybar;
  const Mat PZH = PZ * H.transpose();

  OracleResult out;
  out.posterior.Zhat = mZ + PZH * llt.solve(eY);
  out.posterior.Omega = sym(PZ - PZH * llt.solve(PZH.transpose()));
  out.posterior.x1_mean = out.posterior.Zhat.head(nx);
  out.posterior.x1_cov = out.posterior.Omega.topLeftCorner(nx, nx);
  out.posterior.W2.resize(T);
  for (int t = 1; t < T; ++t) {
    const Vec wm = out.posterior.Zhat.segment(nx + (t - 1) * nw, nw);
    out.posterior.W2[t - 1] =
        out.posterior.Omega.block(nx + (t - 1) * nw, nx + (t - 1) * nw, nw, nw) +
        wm * wm.transpose();
  }
  out.posterior.W2[T - 1] = model.Sigmaw;
  out.posterior.Delta = Y - H * out.posterior.Zhat - GD * U;

  double logdet = 0.0;
  for (int i = 0; i < Sy.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  out.loglik = -0.5 * (Sy.rows() * std::log(2.0 * M_PI) + logdet + eY.dot(llt.solve(eY)));
  return out;
}

}  // namespace emid
