#include "emid/lifted.hpp"

namespace emid {

Mat kron_identity(int T, const Mat& block) {
  Mat out = Mat::Zero(T * block.rows(), T * block.cols());
  for (int t = 0; t < T; ++t)
    out.block(t * block.rows(), t * block.cols(), block.rows(), block.cols()) = block;
  return out;
}

LiftedSystem build_lifted(const ExplicitModel& model, int T) {
  const int nx = model.nx();
  const int nw = model.nw();
  const int nu = model.nu();
  if (T < 1) throw std::invalid_argument("T must be >= 1");

  LiftedSystem sys;
  sys.Fbar = Mat::Zero(T * nx, nx + (T - 1) * nw);
  sys.Gbar = Mat::Zero(T * nx, T * nu);

  // Row block t (0-based) of Fbar: [A^t, A^{t-1}G, ..., G, 0, ...].
  sys.Fbar.topLeftCorner(nx, nx) = Mat::Identity(nx, nx);
  for (int t = 1; t < T; ++t) {
    sys.Fbar.block(t * nx, 0, nx, nx) = model.A * sys.Fbar.block((t - 1) * nx, 0, nx, nx);
    for (int j = 1; j < t; ++j) {
      sys.Fbar.block(t * nx, nx + (j - 1) * nw, nx, nw) =
          model.A * sys.Fbar.block((t - 1) * nx, nx + (j - 1) * nw, nx, nw);
    }
    sys.Fbar.block(t * nx, nx + (t - 1) * nw, nx, nw) = model.G;
  }
  for (int t = 1; t < T; ++t) {
    for (int j = 1; j < t; ++j) {
      sys.Gbar.block(t * nx, (j - 1) * nu, nx, nu) =
          model.A * sys.Gbar.block((t - 1) * nx, (j - 1) * nu, nx, nu);
    }
    sys.Gbar.block(t * nx, (t - 1) * nu, nx, nu) = model.B;
  }

  sys.Cbar = kron_identity(T, model.C);
  sys.Dbar = kron_identity(T, model.D);
  sys.SigmaYbar = kron_identity(T, model.Sigmav);
  return sys;
}

LiftedSystem build_lifted(const ImplicitModel& eta, const Mat& u, const Vec& x1,
                          const Mat& w) {
  const int T = static_cast<int>(u.cols());
  const int nx = eta.nx();
  if (w.cols() != T) throw std::invalid_argument("u and w must share length T");
  if (x1.size() != nx || u.rows() != eta.nu() || w.rows() != eta.nw())
    throw std::invalid_argument("instance dimension mismatch");

  LiftedSystem sys;
  sys.Fi = Mat::Zero(T * nx, T * nx);
  sys.eps = Vec::Zero(T * nx);
  for (int t = 0; t < T; ++t) {
    sys.Fi.block(t * nx, t * nx, nx, nx) = eta.E;
    if (t > 0) sys.Fi.block(t * nx, (t - 1) * nx, nx, nx) = -eta.F;
  }
  sys.eps.head(nx) = -eta.E * x1;
  for (int t = 1; t < T; ++t)
    sys.eps.segment(t * nx, nx) = -(eta.K * u.col(t - 1) + eta.L * w.col(t - 1));

  sys.Cbar = kron_identity(T, eta.C);
  sys.Dbar = kron_identity(T, eta.D);
  sys.SigmaYbar = kron_identity(T, eta.Sigmav);
  return sys;
}

}  // namespace emid
