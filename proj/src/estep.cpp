#include "emid/estep.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "emid/kalman.hpp"

namespace emid {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log det of a PSD matrix with Dirac handling: zero matrix contributes the
// indicator described at q1_eval/q2_eval. Throws if sigma is indefinite.
bool is_zero(const Mat& m) { return m.size() == 0 || m.norm() < 1e-300; }

double logdet_pd(const Mat& sigma) {
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("covariance is not positive definite");
  double ld = 0.0;
  for (int i = 0; i < sigma.rows(); ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
  return ld;
}

}  // namespace

EStepBundle estep(const ExplicitModel& model, const Mat& u, const Mat& y) {
  EStepBundle b;
  b.posterior = disturbance_smoother(model, u, y);
  const int T = static_cast<int>(y.cols());
  Mat acc = Mat::Zero(model.nw(), model.nw());
  for (const Mat& w2 : b.posterior.W2) acc += w2;
  b.Sigmahat_w = acc / T;
  b.loglik = log_likelihood(model, u, y);
  return b;
}

double q1_eval(const Vec& mu, const Mat& Sigma1, const SmoothedPosterior& post) {
  const int nx = static_cast<int>(mu.size());
  const Vec d = post.x1_mean - mu;
  if (is_zero(Sigma1)) {
    if (d.norm() > 1e-9 || post.x1_cov.norm() > 1e-9)
      return -std::numeric_limits<double>::infinity();
    return 0.0;
  }
  Eigen::LLT<Mat> llt(Sigma1);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("Sigma1 is not positive definite");
  const Mat M = post.x1_cov + d * d.transpose();
  return -0.5 * (nx * kLog2Pi + logdet_pd(Sigma1) + llt.solve(M).trace());
}

double q2_eval(const Mat& Sigmaw, const SmoothedPosterior& post, int T) {
  const int nw = static_cast<int>(Sigmaw.rows());
  if (is_zero(Sigmaw)) {
    for (const Mat& w2 : post.W2)
      if (w2.norm() > 1e-9) return -std::numeric_limits<double>::infinity();
    return 0.0;
  }
  Eigen::LLT<Mat> llt(Sigmaw);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("Sigmaw is not positive definite");
  Mat acc = Mat::Zero(nw, nw);
  for (const Mat& w2 : post.W2) acc += w2;
  return -0.5 * (T * (nw * kLog2Pi + logdet_pd(Sigmaw)) + llt.solve(acc).trace());
}

double q3_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
               const SmoothedPosterior& post) {
  const int T = static_cast<int>(y.cols());
  const int ny = theta.ny();
  std::vector<SimErrorInstance> inst =
      make_instances(post, u, y, theta.nx(), theta.nw());
  const double cost = expected_output_cost(theta, inst);
  return -0.5 * (T * (ny * kLog2Pi + logdet_pd(theta.Sigmav)) + cost);
}

double q_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
              const SmoothedPosterior& post) {
  const int T = static_cast<int>(y.cols());
  return q1_eval(theta.mu, theta.Sigma1, post) + q2_eval(theta.Sigmaw, post, T) +
         q3_eval(theta, u, y, post);
}

void mstep_alpha(ExplicitModel& model, const SmoothedPosterior& post) {
  model.mu = post.x1_mean;
  model.Sigma1 = post.x1_cov;
}

void mstep_beta(ExplicitModel& model, const EStepBundle& bundle) {
  model.Sigmaw = bundle.Sigmahat_w;
}

Mat rank_one_decompose(const Mat& omega, double tol) {
  Eigen::SelfAdjointEigenSolver<Mat> es(omega);
  const Vec& lam = es.eigenvalues();
  const double lmax = lam.size() ? std::max(lam.maxCoeff(), 0.0) : 0.0;
  const double cut = tol * lmax;
  int r = 0;
  for (int i = 0; i < lam.size(); ++i)
    if (lam(i) > cut && lam(i) > 0.0) ++r;
  Mat cols(omega.rows(), r);
  int j = 0;
  for (int i = 0; i < lam.size(); ++i)
    if (lam(i) > cut && lam(i) > 0.0)
      cols.col(j++) = std::sqrt(lam(i)) * es.eigenvectors().col(i);
  return cols;
}

std::vector<SimErrorInstance> make_instances(const SmoothedPosterior& post,
                                             const Mat& u, const Mat& y, int nx,
                                             int nw, double tol) {
  const int T = static_cast<int>(y.cols());
  auto unpack = [&](const Vec& z, const Mat& uu, const Mat& yy) {
    SimErrorInstance s;
    s.x1 = z.head(nx);
    s.w = Mat::Zero(nw, T);
    for (int t = 1; t < T; ++t) s.w.col(t - 1) = z.segment(nx + (t - 1) * nw, nw);
    s.u = uu;
    s.y = yy;
    return s;
  };
  std::vector<SimErrorInstance> out;
  out.push_back(unpack(post.Zhat, u, y));
  const Mat cols = rank_one_decompose(post.Omega, tol);
  const Mat zu = Mat::Zero(u.rows(), T);
  const Mat zy = Mat::Zero(y.rows(), T);
  for (int j = 0; j < cols.cols(); ++j) out.push_back(unpack(cols.col(j), zu, zy));
  return out;
}

double expected_output_cost(const ExplicitModel& gamma,
                            const std::vector<SimErrorInstance>& instances) {
  double total = 0.0;
  for (const SimErrorInstance& s : instances)
    total += simulation_error(gamma, s.u, s.y, s.x1, s.w);
  return total;
}

}  // namespace emid
