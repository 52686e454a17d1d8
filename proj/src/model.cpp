#include "emid/model.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>
#include <sstream>

#include "emid/rng.hpp"

namespace emid {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool is_symmetric(const Mat& m, double tol = 1e-10) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + m.cwiseAbs().maxCoeff());
}

void check_psd(const Mat& m, const std::string& name) {
  require(is_symmetric(m), name + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  require(es.eigenvalues().minCoeff() >= -1e-10 * scale, name + " must be PSD");
}

void check_pd(const Mat& m, const std::string& name) {
  require(is_symmetric(m), name + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() > 0.0, name + " must be positive definite");
}

}  // namespace

void Dimensions::validate() const {
  require(nx >= 1 && nu >= 1 && ny >= 1 && nw >= 1 && T >= 1,
          "all dimensions must be >= 1");
  require(nw <= nx, "nw > nx is not a valid disturbance dimension");
}

void ExplicitModel::validate() const {
  const int n = nx();
  require(A.rows() == n && A.cols() == n, "A must be square");
  require(mu.size() == n, "mu/A dimension mismatch");
  require(Sigma1.rows() == n && Sigma1.cols() == n, "Sigma1 dimension mismatch");
  require(B.rows() == n, "B row dimension mismatch");
  require(G.rows() == n, "G row dimension mismatch");
  require(G.cols() <= n, "nw > nx is not a valid disturbance dimension");
  require(Sigmaw.rows() == nw() && Sigmaw.cols() == nw(), "Sigmaw dimension mismatch");
  require(C.cols() == n, "C column dimension mismatch");
  require(D.rows() == ny() && D.cols() == nu(), "D dimension mismatch");
  require(Sigmav.rows() == ny() && Sigmav.cols() == ny(), "Sigmav dimension mismatch");
  check_psd(Sigma1, "Sigma1");
  check_psd(Sigmaw, "Sigmaw");
  check_pd(Sigmav, "Sigmav");
}

Mat simulate(const ExplicitModel& model, const Mat& u, const Vec& x1, const Mat& w) {
  const int T = static_cast<int>(u.cols());
  require(w.cols() == T, "u and w must share length T");
  require(x1.size() == model.nx(), "x1 dimension mismatch");
  require(u.rows() == model.nu(), "u dimension mismatch");
  require(w.rows() == model.nw(), "w dimension mismatch");
  Mat x(model.nx(), T);
  x.col(0) = x1;
  for (int t = 0; t + 1 < T; ++t) {
    x.col(t + 1) = model.A * x.col(t) + model.B * u.col(t) + model.G * w.col(t);
  }
  return x;
}

Mat psd_sqrt(const Mat& sigma, double tol) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sigma);
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -tol * scale)
    throw std::invalid_argument("covariance is not PSD");
  Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

Trajectory sample_trajectory(const ExplicitModel& model, const Mat& u, std::uint64_t seed) {
  model.validate();
  const int T = static_cast<int>(u.cols());
  Rng rng(seed);
  const Mat S1 = psd_sqrt(model.Sigma1);
  const Mat Sw = psd_sqrt(model.Sigmaw);
  const Mat Sv = psd_sqrt(model.Sigmav);

  auto draw = [&rng](int n) {
    Vec z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.gaussian();
    return z;
  };

  Trajectory traj;
  traj.u = u;
  const Vec x1 = model.mu + S1 * draw(model.nx());
  traj.w = Mat(model.nw(), T);
  traj.v = Mat(model.ny(), T);
  for (int t = 0; t < T; ++t) traj.w.col(t) = Sw * draw(model.nw());
  for (int t = 0; t < T; ++t) traj.v.col(t) = Sv * draw(model.ny());
  traj.x = simulate(model, u, x1, traj.w);
  traj.y = model.C * traj.x + model.D * u + traj.v;
  return traj;
}

ThetaGamma to_explicit(const ImplicitModel& eta) {
  Eigen::JacobiSVD<Mat> svd(eta.E, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) > 1e12)
    throw std::runtime_error("E is numerically singular: stability certificate violated");
  ThetaGamma g;
  Eigen::PartialPivLU<Mat> lu(eta.E);
  g.A = lu.solve(eta.F);
  g.B = lu.solve(eta.K);
  g.G = lu.solve(eta.L);
  g.C = eta.C;
  g.D = eta.D;
  g.Sigmav = eta.Sigmav;
  return g;
}

ExplicitModel with_gamma(const ExplicitModel& base, const ThetaGamma& gamma) {
  ExplicitModel m = base;
  m.A = gamma.A;
  m.B = gamma.B;
  m.G = gamma.G;
  m.C = gamma.C;
  m.D = gamma.D;
  m.Sigmav = gamma.Sigmav;
  return m;
}

ImplicitModel to_implicit(const ExplicitModel& model) {
  ImplicitModel eta;
  eta.E = Mat::Identity(model.nx(), model.nx());
  eta.F = model.A;
  eta.K = model.B;
  eta.L = model.G;
  eta.C = model.C;
  eta.D = model.D;
  eta.Sigmav = model.Sigmav;
  eta.P = Mat::Identity(model.nx(), model.nx());
  return eta;
}

double spectral_radius(const Mat& A) {
  require(A.rows() == A.cols(), "spectral_radius needs a square matrix");
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

ExplicitModel make_random_system(const Dimensions& dims, double target_radius,
                                        std::uint64_t seed, const RandomSystemOptions& opts) {
  dims.validate();
  require(target_radius > 0.0, "target_radius must be positive");
  if (opts.g_identity) require(dims.nw == dims.nx, "G = I requires nw == nx");
  Rng rng(seed);
  auto draw = [&rng](int r, int c) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = rng.gaussian();
    return m;
  };

  Mat A;
  double rho = 0.0;
  do {
    A = draw(dims.nx, dims.nx) / std::sqrt(static_cast<double>(dims.nx));
    rho = spectral_radius(A);
  } while (rho < 1e-12);
  A *= target_radius / rho;

  ExplicitModel m;
  m.A = A;
  m.B = draw(dims.nx, dims.nu);
  m.G = opts.g_identity ? Mat::Identity(dims.nx, dims.nx) : draw(dims.nx, dims.nw);
  m.C = draw(dims.ny, dims.nx);
  m.D = draw(dims.ny, dims.nu);
  m.mu = Vec::Zero(dims.nx);
  m.Sigma1 = opts.sigma1_scale * Mat::Identity(dims.nx, dims.nx);
  m.Sigmaw = opts.sigmaw_scale * Mat::Identity(dims.nw, dims.nw);
  m.Sigmav = opts.sigmav_scale * Mat::Identity(dims.ny, dims.ny);
  return m;
}

ExplicitModel mass_spring_damper(double m, double c, double k, double dt,
                                 const MsdOptions& opts) {
  require(m > 0.0 && dt > 0.0, "mass and time step must be positive");
  ExplicitModel model;
  model.A = Mat(2, 2);
  model.A << 1.0, dt, -k * dt / m, 1.0 - c * dt / m;
  model.B = Mat(2, 1);
  model.B << 0.0, dt;
  model.G = model.B;
  model.C = Mat(1, 2);
  model.C << 1.0, 0.0;
  model.D = Mat::Zero(1, 1);
  model.mu = Vec::Zero(2);
  model.Sigma1 = opts.sigma1_scale * Mat::Identity(2, 2);
  model.Sigmaw = opts.sigmaw * Mat::Identity(1, 1);
  model.Sigmav = opts.sigmav * Mat::Identity(1, 1);
  return model;
}

double simulation_error(const ExplicitModel& model, const Mat& u, const Mat& y,
                        const Vec& x1, const Mat& w) {
  const Mat x = simulate(model, u, x1, w);
  const Mat resid = y - model.C * x - model.D * u;
  const Eigen::LLT<Mat> llt(model.Sigmav);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("Sigmav must be positive definite");
  double err = 0.0;
  for (int t = 0; t < resid.cols(); ++t)
    err += resid.col(t).dot(llt.solve(resid.col(t)));
  return err;
}

namespace {

nlohmann::ordered_json matrix_to_json(const Mat& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Mat matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

}  // namespace

std::string model_to_json(const ExplicitModel& model) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json mu = nlohmann::ordered_json::array();
  for (int i = 0; i < model.mu.size(); ++i) mu.push_back(model.mu(i));
  j["mu"] = mu;
  j["Sigma1"] = matrix_to_json(model.Sigma1);
  j["Sigmaw"] = matrix_to_json(model.Sigmaw);
  j["Sigmav"] = matrix_to_json(model.Sigmav);
  j["A"] = matrix_to_json(model.A);
  j["B"] = matrix_to_json(model.B);
  j["G"] = matrix_to_json(model.G);
  j["C"] = matrix_to_json(model.C);
  j["D"] = matrix_to_json(model.D);
  return j.dump(2);
}

ExplicitModel model_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ExplicitModel m;
  const auto& mu = j.at("mu");
  m.mu = Vec(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) m.mu(static_cast<int>(i)) = mu.at(i).get<double>();
  m.Sigma1 = matrix_from_json(j.at("Sigma1"));
  m.Sigmaw = matrix_from_json(j.at("Sigmaw"));
  m.Sigmav = matrix_from_json(j.at("Sigmav"));
  m.A = matrix_from_json(j.at("A"));
  m.B = matrix_from_json(j.at("B"));
  m.G = matrix_from_json(j.at("G"));
  m.C = matrix_from_json(j.at("C"));
  m.D = matrix_from_json(j.at("D"));
  return m;
}

}  // namespace emid
