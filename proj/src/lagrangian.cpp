#include "emid/lagrangian.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "emid/lifted.hpp"

namespace emid {

namespace {

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

Mat stability_lmi_hp(const ImplicitModel& eta, const Mat& H, const Mat& P,
                     bool with_const) {
  const int nx = eta.nx(), ny = eta.ny();
  Mat m = Mat::Zero(2 * nx + ny, 2 * nx + ny);
  m.block(0, 0, nx, nx) = H.transpose() * eta.E + eta.E.transpose() * H - P;
  m.block(0, nx, nx, nx) = eta.F.transpose() * H;
  m.block(nx, 0, nx, nx) = m.block(0, nx, nx, nx).transpose();
  m.block(nx, nx, nx, nx) = P;
  if (with_const) {
    m.block(2 * nx, 0, ny, nx) = eta.C;
    m.block(0, 2 * nx, nx, ny) = eta.C.transpose();
    m.block(2 * nx, 2 * nx, ny, ny) = eta.Sigmav;
  }
  return m;
}

struct LiftedInstance {
  LiftedSystem sys;
  Vec Y, U;
  Vec resid;   // Y - Dbar U
  Mat Lambda;  // I kron H
};

LiftedInstance lift(const ImplicitModel& eta, const SimErrorInstance& inst,
                    const Mat& H) {
  LiftedInstance L;
  L.sys = build_lifted(eta, inst.u, inst.x1, inst.w);
  const int T = static_cast<int>(inst.y.cols());
  const int ny = eta.ny(), nu = eta.nu();
  L.Y = Vec(T * ny);
  L.U = Vec(T * nu);
  for (int t = 0; t < T; ++t) {
    L.Y.segment(t * ny, ny) = inst.y.col(t);
    L.U.segment(t * nu, nu) = inst.u.col(t);
  }
  L.resid = L.Y - L.sys.Dbar * L.U;
  L.Lambda = kron_identity(T, H);
  return L;
}

}  // namespace

Mat stability_lmi(const ImplicitModel& eta, const Mat& H) {
  return stability_lmi_hp(eta, H, eta.P, true);
}

bool in_stable_set(const ImplicitModel& eta, const Mat& H, double margin) {
  Eigen::SelfAdjointEigenSolver<Mat> es(stability_lmi(eta, H),
                                        Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > margin;
}

RelaxationQuadratic build_relaxation_quadratic(const ImplicitModel& eta,
                                               const SimErrorInstance& inst,
                                               const Mat& H, const Vec& h) {
  LiftedInstance L = lift(eta, inst, H);
  Eigen::LLT<Mat> lv(L.sys.SigmaYbar);
  if (lv.info() != Eigen::Success)
    throw std::runtime_error("Sigmav is not positive definite");
  RelaxationQuadratic q;
  const Mat SiC = lv.solve(L.sys.Cbar);
  q.Psi = sym(L.sys.Cbar.transpose() * SiC - L.Lambda.transpose() * L.sys.Fi -
              L.sys.Fi.transpose() * L.Lambda);
  q.b = -SiC.transpose() * L.resid - L.Lambda.transpose() * L.sys.eps -
        L.sys.Fi.transpose() * h;
  q.c = L.resid.dot(lv.solve(L.resid)) - 2.0 * h.dot(L.sys.eps);
  return q;
}

double quad_eval(const RelaxationQuadratic& q, const Vec& x) {
  return x.dot(q.Psi * x) + 2.0 * q.b.dot(x) + q.c;
}

double jhat(const ImplicitModel& eta, const SimErrorInstance& inst, const Mat& H,
            const Vec& h) {
  RelaxationQuadratic q = build_relaxation_quadratic(eta, inst, H, h);
  Eigen::LLT<Mat> llt(Mat(-q.Psi));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("relaxed cost is unbounded: Psi is not negative definite");
  return q.c + q.b.dot(llt.solve(q.b));
}

Vec compute_h(const ImplicitModel& eta, const SimErrorInstance& inst, const Mat& H) {
  LiftedInstance L = lift(eta, inst, H);
  Eigen::LLT<Mat> lv(L.sys.SigmaYbar);
  if (lv.info() != Eigen::Success)
    throw std::runtime_error("Sigmav is not positive definite");
  const Mat SiC = lv.solve(L.sys.Cbar);
  const Mat Psi = sym(L.sys.Cbar.transpose() * SiC - L.Lambda.transpose() * L.sys.Fi -
                      L.sys.Fi.transpose() * L.Lambda);

  // Noiseless trajectory of the instance under the explicit image of eta.
  ThetaGamma g = to_explicit(eta);
  const int T = static_cast<int>(inst.y.cols());
  const int nx = eta.nx();
  Mat xs(nx, T);
  xs.col(0) = inst.x1;
  for (int t = 0; t + 1 < T; ++t)
    xs.col(t + 1) = g.A * xs.col(t) + g.B * inst.u.col(t) + g.G * inst.w.col(t);
  Vec xstar(T * nx);
  for (int t = 0; t < T; ++t) xstar.segment(t * nx, nx) = xs.col(t);

  // Stationarity of the relaxed quadratic at xstar: Psi x* + b = 0 gives
  // Fi'h = Psi x* - C'Sigma^{-1}(Y - Dbar U) - Lambda'eps.
  const Vec rhs = Psi * xstar - SiC.transpose() * L.resid -
                  L.Lambda.transpose() * L.sys.eps;
  return L.sys.Fi.transpose().partialPivLu().solve(rhs);
}

Mat epigraph_lmi(const ImplicitModel& eta, const SimErrorInstance& inst,
                 const Mat& H, const Vec& h, double s) {
  LiftedInstance L = lift(eta, inst, H);
  const int T = static_cast<int>(inst.y.cols());
  const int nX = T * eta.nx(), nY = T * eta.ny();
  Mat n = Mat::Zero(1 + nX + nY, 1 + nX + nY);
  n(0, 0) = s + 2.0 * h.dot(L.sys.eps);
  n.block(0, 1, 1, nX) =
      (L.sys.Fi.transpose() * h + L.Lambda.transpose() * L.sys.eps).transpose();
  n.block(0, 1 + nX, 1, nY) = L.resid.transpose();
  n.block(1, 1, nX, nX) = sym(L.Lambda.transpose() * L.sys.Fi +
                              L.sys.Fi.transpose() * L.Lambda);
  n.block(1, 1 + nX, nX, nY) = -L.sys.Cbar.transpose();
  n.block(1 + nX, 1 + nX, nY, nY) = L.sys.SigmaYbar;
  n.block(1, 0, nX, 1) = n.block(0, 1, 1, nX).transpose();
  n.block(1 + nX, 0, nY, 1) = n.block(0, 1 + nX, 1, nY).transpose();
  n.block(1 + nX, 1, nY, nX) = n.block(1, 1 + nX, nX, nY).transpose();
  return n;
}

double epigraph_optimal_s(const ImplicitModel& eta, const SimErrorInstance& inst,
                          const Mat& H, const Vec& h) {
  LiftedInstance L = lift(eta, inst, H);
  const int T = static_cast<int>(inst.y.cols());
  const int nX = T * eta.nx(), nY = T * eta.ny();
  Mat M(nX + nY, nX + nY);
  M.topLeftCorner(nX, nX) = sym(L.Lambda.transpose() * L.sys.Fi +
                                L.sys.Fi.transpose() * L.Lambda);
  M.topRightCorner(nX, nY) = -L.sys.Cbar.transpose();
  M.bottomLeftCorner(nY, nX) = -L.sys.Cbar;
  M.bottomRightCorner(nY, nY) = L.sys.SigmaYbar;
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("epigraph trailing block is not positive definite");
  Vec q(nX + nY);
  q.head(nX) = L.sys.Fi.transpose() * h + L.Lambda.transpose() * L.sys.eps;
  q.tail(nY) = L.resid;
  return q.dot(llt.solve(q)) - 2.0 * h.dot(L.sys.eps);
}

Mat discrete_lyapunov(const Mat& A, const Mat& Q) {
  const int n = static_cast<int>(A.rows());
  Mat K = Mat::Identity(n * n, n * n);
  // vec(A'PA) = (A kron A)' vec(P)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      K.block(i * n, j * n, n, n) -= A(j, i) * A.transpose();
  Vec vq(n * n);
  for (int j = 0; j < n; ++j) vq.segment(j * n, n) = Q.col(j);
  Vec vp = K.partialPivLu().solve(vq);
  Mat P(n, n);
  for (int j = 0; j < n; ++j) P.col(j) = vp.segment(j * n, n);
  return sym(P);
}

Certificate initial_certificate(const ImplicitModel& eta, double delta) {
  ThetaGamma g = to_explicit(eta);
  if (spectral_radius(g.A) >= 1.0)
    throw std::runtime_error("initial_certificate requires a strictly stable model");
  Eigen::LLT<Mat> lv(eta.Sigmav);
  if (lv.info() != Eigen::Success)
    throw std::runtime_error("Sigmav is not positive definite");
  const int nx = eta.nx();
  Mat Q = eta.C.transpose() * lv.solve(eta.C) + delta * Mat::Identity(nx, nx);
  Certificate cert;
  cert.P = discrete_lyapunov(g.A, Q);
  cert.H = eta.E.transpose().partialPivLu().solve(cert.P);
  return cert;
}

bool lmi_feasibility_search(const ImplicitModel& eta, double bound,
                            Certificate* cert) {
  const int nx = eta.nx(), ny = eta.ny();
  // Variables: H row-major (nx^2), then the lower triangle of P.
  const int nH = nx * nx;
  const int nP = nx * (nx + 1) / 2;
  ConicProgram prog;
  prog.nvar = nH + nP;
  prog.c = Vec::Zero(prog.nvar);

  PsdBlock blk;
  blk.dim = 2 * nx + ny;
  auto push_dense = [&blk](int var, const Mat& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j <= i; ++j)
        if (m(i, j) != 0.0) blk.entries.push_back({var, i, j, m(i, j)});
  };
  const Mat Z = Mat::Zero(nx, nx);
  const Mat M0 = stability_lmi_hp(eta, Z, Z, true);
  push_dense(-1, M0);
  int v = 0;
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < nx; ++b, ++v) {
      Mat E = Z;
      E(a, b) = 1.0;
      push_dense(v, stability_lmi_hp(eta, E, Z, false));
    }
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j <= i; ++j, ++v) {
      Mat E = Z;
      E(i, j) = E(j, i) = 1.0;
      push_dense(v, stability_lmi_hp(eta, Z, E, false));
    }
  prog.blocks.push_back(std::move(blk));
  // Box |x_k| <= bound keeps the homogeneous directions compact.
  for (int k = 0; k < prog.nvar; ++k) {
    prog.blocks.push_back({1, {{-1, 0, 0, bound}, {k, 0, 0, -1.0}}});
    prog.blocks.push_back({1, {{-1, 0, 0, bound}, {k, 0, 0, 1.0}}});
  }

  SolveOptions opts;
  opts.feasibility_only = true;
  SolveResult res = solve_conic(prog, opts);
  if (res.status != SolveStatus::kOptimal) return false;
  if (cert) {
    cert->H = Mat(nx, nx);
    int k = 0;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b < nx; ++b, ++k) cert->H(a, b) = res.x(k);
    cert->P = Mat::Zero(nx, nx);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j <= i; ++j, ++k) cert->P(i, j) = cert->P(j, i) = res.x(k);
  }
  return true;
}

}  // namespace emid
