#include "emid/kalman.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace emid {

namespace {
inline Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }
}  // namespace

FilterOutput kalman_filter(const ExplicitModel& model, const Mat& u, const Mat& y) {
  const int T = static_cast<int>(y.cols());
  const int nx = model.nx();
  const int ny = model.ny();
  if (u.cols() != T) throw std::invalid_argument("u and y must share length T");
  if (y.rows() != ny || u.rows() != model.nu())
    throw std::invalid_argument("u/y dimension mismatch");

  const Mat Q = model.G * model.Sigmaw * model.G.transpose();
  const Mat I = Mat::Identity(nx, nx);

  FilterOutput out;
  out.xpred = Mat(nx, T);
  out.xfilt = Mat(nx, T);
  out.innov = Mat(ny, T);
  out.Ppred.resize(T);
  out.Pfilt.resize(T);
  out.S.resize(T);
  out.Lmat.resize(T);

  Vec xp = model.mu;
  Mat Pp = sym(model.Sigma1);
  const double log2pi = std::log(2.0 * M_PI);

  for (int t = 0; t < T; ++t) {
    out.xpred.col(t) = xp;
    out.Ppred[t] = Pp;

    const Mat S = sym(model.C * Pp * model.C.transpose() + model.Sigmav);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("innovation covariance is not positive definite");
    const Vec e = y.col(t) - model.C * xp - model.D * u.col(t);

    out.S[t] = S;
    out.innov.col(t) = e;
    double logdet = 0.0;
    for (int i = 0; i < ny; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    out.loglik += -0.5 * (ny * log2pi + logdet + e.dot(llt.solve(e)));

    const Mat K = llt.solve(model.C * Pp).transpose();  // Pp C' S^{-1}
    out.xfilt.col(t) = xp + K * e;
    const Mat IKC = I - K * model.C;
    out.Pfilt[t] = sym(IKC * Pp * IKC.transpose() + K * model.Sigmav * K.transpose());
    out.Lmat[t] = model.A * IKC;

    xp = model.A * out.xfilt.col(t) + model.B * u.col(t);
    Pp = sym(model.A * out.Pfilt[t] * model.A.transpose() + Q);
  }
  return out;
}

double log_likelihood(const ExplicitModel& model, const Mat& u, const Mat& y) {
  return kalman_filter(model, u, y).loglik;
}

SmoothedStates rts_smoother(const ExplicitModel& model, const Mat& u, const Mat& y) {
  const FilterOutput f = kalman_filter(model, u, y);
  const int T = static_cast<int>(y.cols());
  const int nx = model.nx();

  SmoothedStates out;
  out.xs = Mat(nx, T);
  out.Ps.resize(T);
  out.lag1.resize(T > 1 ? T - 1 : 0);

  out.xs.col(T - 1) = f.xfilt.col(T - 1);
  out.Ps[T - 1] = f.Pfilt[T - 1];
  for (int t = T - 2; t >= 0; --t) {
    // J_t = Pfilt_t A' Ppred_{t+1}^+ (pseudo-inverse covers singular predictions).
    const Mat J = (f.Ppred[t + 1].completeOrthogonalDecomposition().solve(
                       model.A * f.Pfilt[t]))
                      .transpose();
    out.xs.col(t) = f.xfilt.col(t) + J * (out.xs.col(t + 1) - f.xpred.col(t + 1));
    out.Ps[t] = sym(f.Pfilt[t] + J * (out.Ps[t + 1] - f.Ppred[t + 1]) * J.transpose());
    out.lag1[t] = out.Ps[t + 1] * J.transpose();  // Cov(x_{t+1}, x_t | y)
  }
  return out;
}

}  // namespace emid
