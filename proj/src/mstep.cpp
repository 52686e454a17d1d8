#include "emid/mstep.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "emid/banded.hpp"
#include "emid/lifted.hpp"

namespace emid {

namespace {

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Variable layout shared by the fast solver and the literal assembly:
// E, F (nx^2 each, row-major), K (nx*nu), L (nx*nw), C (ny*nx), D (ny*nu),
// then lower triangles of Sigmav and P.
struct VarLayout {
  int nx, nu, ny, nw;
  int oE, oF, oK, oL, oC, oD, oSv, oP, total;

  explicit VarLayout(const ImplicitModel& eta)
      : nx(eta.nx()), nu(eta.nu()), ny(eta.ny()), nw(eta.nw()) {
    oE = 0;
    oF = oE + nx * nx;
    oK = oF + nx * nx;
    oL = oK + nx * nu;
    oC = oL + nx * nw;
    oD = oC + ny * nx;
    oSv = oD + ny * nu;
    oP = oSv + ny * (ny + 1) / 2;
    total = oP + nx * (nx + 1) / 2;
  }

  Vec pack(const ImplicitModel& eta) const {
    Vec v(total);
    int k = 0;
    auto put = [&](const Mat& m) {
      for (int a = 0; a < m.rows(); ++a)
        for (int b = 0; b < m.cols(); ++b) v(k++) = m(a, b);
    };
    auto put_lower = [&](const Mat& m) {
      for (int a = 0; a < m.rows(); ++a)
        for (int b = 0; b <= a; ++b) v(k++) = m(a, b);
    };
    put(eta.E);
    put(eta.F);
    put(eta.K);
    put(eta.L);
    put(eta.C);
    put(eta.D);
    put_lower(eta.Sigmav);
    put_lower(eta.P);
    return v;
  }

  ImplicitModel unpack(const ImplicitModel& shape, const Vec& v) const {
    ImplicitModel eta = shape;
    int k = 0;
    auto get = [&](Mat& m) {
      for (int a = 0; a < m.rows(); ++a)
        for (int b = 0; b < m.cols(); ++b) m(a, b) = v(k++);
    };
    auto get_lower = [&](Mat& m) {
      for (int a = 0; a < m.rows(); ++a)
        for (int b = 0; b <= a; ++b) m(a, b) = m(b, a) = v(k++);
    };
    get(eta.E);
    get(eta.F);
    get(eta.K);
    get(eta.L);
    get(eta.C);
    get(eta.D);
    get_lower(eta.Sigmav);
    get_lower(eta.P);
    return eta;
  }
};

// Interleaved banded kernel M(E, F, C, Sigmav; H): per time step an
// [x_t; y_t] superblock with diagonal [[H'E + E'H, -C'], [-C, Sigmav]] and
// coupling M[x_t, x_{t-1}] = -H'F. This is the trailing principal block of
// the epigraph LMI under a symmetric interleaving permutation.
void build_kernel(const Mat& E, const Mat& F, const Mat& C, const Mat& Sv,
                  const Mat& H, int T, BandedMatrix* M) {
  const int nx = static_cast<int>(E.rows());
  const int ny = static_cast<int>(C.rows());
  const int bs = nx + ny;
  M->resize(T * bs, 2 * nx + ny - 1);
  const Mat S0 = H.transpose() * E + E.transpose() * H;
  const Mat X = -(H.transpose() * F);
  for (int t = 0; t < T; ++t) {
    const int xo = t * bs, yo = xo + nx;
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j <= i; ++j)
        M->at(xo + i, xo + j) = 0.5 * (S0(i, j) + S0(j, i));
    for (int a = 0; a < ny; ++a) {
      for (int b = 0; b < nx; ++b) M->at(yo + a, xo + b) = -C(a, b);
      for (int b = 0; b <= a; ++b) M->at(yo + a, yo + b) = Sv(a, b);
    }
    if (t > 0) {
      const int po = (t - 1) * bs;
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j) M->at(xo + i, po + j) = X(i, j);
    }
  }
}

// Small affine LMI block: constant + sum_k x_(idx_k) * coeff_k > 0.
struct AffineLmi {
  Mat constant;
  std::vector<std::pair<int, Mat>> coeff;

  Mat value(const Vec& v) const {
    Mat m = constant;
    for (const auto& [idx, cm] : coeff) m += v(idx) * cm;
    return m;
  }
  // Adds -logdet to *val and, when grad is given, its derivatives.
  bool accumulate(const Vec& v, double* val, Vec* grad, Mat* hess) const {
    Mat S = value(v);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) return false;
    for (int i = 0; i < S.rows(); ++i)
      *val -= 2.0 * std::log(llt.matrixL()(i, i));
    if (!grad) return true;
    std::vector<Mat> SiF(coeff.size());
    for (size_t k = 0; k < coeff.size(); ++k) {
      SiF[k] = llt.solve(coeff[k].second);
      (*grad)(coeff[k].first) -= SiF[k].trace();
    }
    for (size_t k = 0; k < coeff.size(); ++k)
      for (size_t l = k; l < coeff.size(); ++l) {
        const double h = (SiF[k].transpose().cwiseProduct(SiF[l])).sum();
        (*hess)(coeff[k].first, coeff[l].first) += h;
        if (k != l) (*hess)(coeff[l].first, coeff[k].first) += h;
      }
    return true;
  }
};

int lower_index(int offset, int a, int b) {  // a >= b
  return offset + a * (a + 1) / 2 + b;
}

// Stability LMI M_s(E, F, C, Sigmav, P; H fixed) as an affine block in the
// M-step variables. Every block is linear, so the constant part is zero.
AffineLmi stability_block(const VarLayout& L, const Mat& H) {
  const int nx = L.nx, ny = L.ny;
  const int ds = 2 * nx + ny;
  AffineLmi lmi;
  lmi.constant = Mat::Zero(ds, ds);
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < nx; ++b) {
      Mat mE = Mat::Zero(ds, ds);
      for (int j = 0; j < nx; ++j) {  // d(H'E + E'H)/dE_ab in block (0,0)
        mE(b, j) += H(a, j);
        mE(j, b) += H(a, j);
      }
      lmi.coeff.push_back({L.oE + a * nx + b, mE});
      Mat mF = Mat::Zero(ds, ds);
      for (int j = 0; j < nx; ++j) {  // d(F'H)/dF_ab in block (0,1) + sym
        mF(b, nx + j) += H(a, j);
        mF(nx + j, b) += H(a, j);
      }
      lmi.coeff.push_back({L.oF + a * nx + b, mF});
    }
  for (int a = 0; a < ny; ++a)
    for (int b = 0; b < nx; ++b) {
      Mat m = Mat::Zero(ds, ds);
      m(2 * nx + a, b) = 1.0;
      m(b, 2 * nx + a) = 1.0;
      lmi.coeff.push_back({L.oC + a * nx + b, m});
    }
  for (int a = 0; a < ny; ++a)
    for (int b = 0; b <= a; ++b) {
      Mat m = Mat::Zero(ds, ds);
      m(2 * nx + a, 2 * nx + b) = 1.0;
      m(2 * nx + b, 2 * nx + a) = 1.0;
      lmi.coeff.push_back({lower_index(L.oSv, a, b), m});
    }
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b <= a; ++b) {
      Mat m = Mat::Zero(ds, ds);
      m(a, b) = m(b, a) = -1.0;
      m(nx + a, nx + b) = m(nx + b, nx + a) = 1.0;
      lmi.coeff.push_back({lower_index(L.oP, a, b), m});
    }
  return lmi;
}

AffineLmi sigmav_floor_block(const VarLayout& L, double floor) {
  AffineLmi lmi;
  lmi.constant = -floor * Mat::Identity(L.ny, L.ny);
  for (int a = 0; a < L.ny; ++a)
    for (int b = 0; b <= a; ++b) {
      Mat m = Mat::Zero(L.ny, L.ny);
      m(a, b) = m(b, a) = 1.0;
      lmi.coeff.push_back({lower_index(L.oSv, a, b), m});
    }
  return lmi;
}

// ---------------------------------------------------------------------------
// Shared Newton-barrier driver for objectives of the form
//   f(v) = sum_j q_j(v)' M(v)^{-1} q_j(v) + affine(v),
// with q_j and M affine in v and M banded; small affine LMIs act as barriers.
// Since d^2 f = 2 R_i' M^{-1} R_k with R_i = dq_i - dM_i M^{-1} q, the exact
// Hessian is the Gram matrix of the forward-solved residual stacks.
struct FractionalProblem {
  int p = 0;      // decision variables
  int n = 0;      // kernel side
  int ncols = 0;  // instance columns
  double barrier_dim = 0;
  std::vector<AffineLmi> barriers;

  std::function<bool(const Vec&, BandedMatrix*)> kernel;
  std::function<void(const Vec&, Mat*)> fill_q;  // Q(v), n x ncols
  std::function<double(const Vec&)> affine_value;
  Vec affine_grad;
  // Writes dQ_i into r (arrives zeroed); false when variable i does not touch
  // the fractional term at all (apply_dm is then skipped too).
  std::function<bool(int, Mat*)> fill_dq;
  // Applies r -= dM_i W.
  std::function<void(int, const Mat&, Mat*)> apply_dm;
};

struct FractionalOptions {
  double t0 = 1.0;
  double mu = 10.0;
  double rel_tol = 1e-8;
  int max_newton = 200;
};

// Path-following on t * f - sum logdet(barriers). Returns false on breakdown
// (start not strictly feasible). v is updated in place.
bool fractional_newton(const FractionalProblem& pr, const FractionalOptions& o,
                       Vec& v, int* steps) {
  BandedMatrix M;
  Mat Q(pr.n, pr.ncols), W, R(pr.n, pr.ncols);
  Mat Z(pr.n * pr.ncols, pr.p);

  auto objective = [&](const Vec& x, double* fq, double* fb) -> bool {
    BandedMatrix Mx;
    if (!pr.kernel(x, &Mx) || !banded_cholesky_inplace(Mx)) return false;
    Mat Qx(pr.n, pr.ncols);
    pr.fill_q(x, &Qx);
    Mat Wx = Qx;
    banded_solve(Mx, Wx);
    *fq = (Qx.cwiseProduct(Wx)).sum() + pr.affine_value(x);
    *fb = 0.0;
    for (const AffineLmi& b : pr.barriers)
      if (!b.accumulate(x, fb, nullptr, nullptr)) return false;
    return true;
  };

  double t = o.t0;
  while (true) {
    for (int it = 0; it < o.max_newton; ++it) {
      if (!pr.kernel(v, &M) || !banded_cholesky_inplace(M)) return false;
      pr.fill_q(v, &Q);
      W = Q;
      banded_solve(M, W);
      const double fq = (Q.cwiseProduct(W)).sum() + pr.affine_value(v);

      Vec grad = t * pr.affine_grad;
      Z.setZero();
      for (int i = 0; i < pr.p; ++i) {
        R.setZero();
        if (!pr.fill_dq(i, &R)) continue;
        const double a = (R.cwiseProduct(W)).sum();  // dQ_i : W
        pr.apply_dm(i, W, &R);                       // R = dQ_i - dM_i W
        grad(i) += t * (a + (R.cwiseProduct(W)).sum());
        banded_forward_solve(M, R);
        Z.col(i) = Eigen::Map<const Vec>(R.data(), R.size());
      }
      Mat hess = Mat::Zero(pr.p, pr.p);
      hess.selfadjointView<Eigen::Lower>().rankUpdate(Z.transpose(), 2.0 * t);
      hess.triangularView<Eigen::StrictlyUpper>() =
          hess.transpose().triangularView<Eigen::StrictlyUpper>();
      double fbar = 0.0;
      for (const AffineLmi& b : pr.barriers)
        if (!b.accumulate(v, &fbar, &grad, &hess)) return false;

      // Relative per-coordinate damping: an absolute shift scaled by the
      // largest diagonal would swamp the barrier-only directions once t grows.
      const double dmax = hess.diagonal().cwiseAbs().maxCoeff();
      hess.diagonal() +=
          1e-12 * hess.diagonal().cwiseAbs().cwiseMax(1e-14 * dmax);
      Vec d = -Eigen::LDLT<Mat>(hess).solve(grad);
      const double lambda2 = -grad.dot(d);
      // Approximate centering suffices: overall accuracy is governed by
      // barrier_dim / t, and gradient rounding noise puts a floor on the
      // attainable decrement once t * fq is large.
      if (!(lambda2 > 0) ||
          lambda2 < std::max(1e-2, 2e-12 * (1.0 + std::abs(t * fq) +
                                            std::abs(fbar))))
        break;

      const double merit0 = t * fq + fbar;
      // The required decrease is floored so that rounding noise on a damped
      // step can never satisfy the test and spin the loop in place.
      const double floor_dec = 1e-12 * (1.0 + std::abs(merit0));
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 50; ++ls) {
        Vec vt = v + step * d;
        double fq2, fb2;
        if (objective(vt, &fq2, &fb2) &&
            t * fq2 + fb2 <=
                merit0 - std::max(0.25 * step * lambda2, floor_dec)) {
          v = vt;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (steps) ++*steps;
      if (std::getenv("EMID_NEWTON_TRACE"))
        std::fprintf(stderr, "t=%.3g it=%d lam2=%.3g step=%.3g merit=%.12g\n",
                     t, it, lambda2, moved ? step : 0.0, merit0);
      if (!moved) break;
    }
    double fq, fb;
    if (!objective(v, &fq, &fb)) return false;
    if (pr.barrier_dim / t < o.rel_tol * (1.0 + std::abs(fq))) return true;
    t *= o.mu;
  }
}

}  // namespace

double mstep_merit(const ImplicitModel& eta,
                   const std::vector<SimErrorInstance>& instances) {
  ThetaGamma g = to_explicit(eta);
  ExplicitModel m;
  m.A = g.A;
  m.B = g.B;
  m.G = g.G;
  m.C = g.C;
  m.D = g.D;
  m.Sigmav = g.Sigmav;
  Eigen::LLT<Mat> llt(eta.Sigmav);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("Sigmav is not positive definite");
  double ld = 0.0;
  for (int i = 0; i < eta.Sigmav.rows(); ++i)
    ld += 2.0 * std::log(llt.matrixL()(i, i));
  const int T = static_cast<int>(instances.front().y.cols());
  return expected_output_cost(m, instances) + T * ld;
}

// ---------------------------------------------------------------------------
// M step: minimize sum_j s_j(eta) + T tr(Sigmav_k^{-1} Sigmav) over the
// certified-stable set at a fixed multiplier, where s_j is the optimal
// epigraph value q_j' M^{-1} q_j - 2 h_j' eps_j.

MstepResult solve_mstep(const ImplicitModel& eta_k, const Certificate& cert,
                        const std::vector<SimErrorInstance>& instances,
                        const Mat& omega_cols, const MstepOptions& opts) {
  const VarLayout L(eta_k);
  const int nx = L.nx, nu = L.nu, ny = L.ny, nw = L.nw;
  const int T = static_cast<int>(instances.front().y.cols());
  const int bs = nx + ny;
  const int r = static_cast<int>(omega_cols.cols());
  const int N = 1 + r;
  const int nz = nx + (T - 1) * nw;
  const Mat& H = cert.H;
  const SimErrorInstance& data = instances.front();
  if (static_cast<int>(instances.size()) != N)
    throw std::invalid_argument("instance count does not match omega columns");

  // Tight offsets at eta_k: h_0 for the data instance; h_j = G_k omega_j for
  // the zero-data columns, with G_k = (Fi')^{-1}(Psi Fbar - Lambda' P(eta_k))
  // so every per-instance bound is exact at eta_k.
  const Vec h0 = compute_h(eta_k, data, H);
  Mat Gk;  // T nx x nz
  {
    ThetaGamma gk = to_explicit(eta_k);
    ExplicitModel mk;
    mk.A = gk.A;
    mk.B = gk.B;
    mk.G = gk.G;
    mk.C = gk.C;
    mk.D = gk.D;
    mk.Sigmav = gk.Sigmav;
    mk.mu = Vec::Zero(nx);
    mk.Sigma1 = Mat::Zero(nx, nx);
    mk.Sigmaw = Mat::Zero(nw, nw);
    LiftedSystem sys = build_lifted(eta_k, data.u, data.x1, data.w);
    LiftedSystem esys = build_lifted(mk, T);
    const Mat Lam = kron_identity(T, H);
    Eigen::LLT<Mat> lv(sys.SigmaYbar);
    const Mat SiC = lv.solve(sys.Cbar);
    const Mat Psi = sym(Mat(sys.Cbar.transpose() * SiC -
                            Lam.transpose() * sys.Fi -
                            sys.Fi.transpose() * Lam));
    Mat LamP = Mat::Zero(T * nx, nz);
    LamP.block(0, 0, nx, nx) = -(H.transpose() * eta_k.E);
    for (int t = 1; t < T; ++t)
      LamP.block(t * nx, nx + (t - 1) * nw, nx, nw) =
          -(H.transpose() * eta_k.L);
    Gk = sys.Fi.transpose().partialPivLu().solve(Mat(Psi * esys.Fbar - LamP));
  }
  Mat Hmat(T * nx, N);
  Hmat.col(0) = h0;
  Hmat.rightCols(r) = Gk * omega_cols;

  // Latent columns [x1; w stack]: data instance first, then omega columns.
  Mat Zmat(nz, N);
  Zmat.col(0).head(nx) = data.x1;
  for (int t = 1; t < T; ++t)
    Zmat.col(0).segment(nx + (t - 1) * nw, nw) = data.w.col(t - 1);
  Zmat.rightCols(r) = omega_cols;

  // Affine-part constants: -2 sum_{j>=1} h_j' eps_j(v) = 2 tr(E XE) +
  // 2 tr(L XL) with Maux = (sum_j omega_j omega_j') Gk'.
  const Mat Maux = (omega_cols * omega_cols.transpose()) * Gk.transpose();
  const Mat XE = Maux.block(0, 0, nx, nx);
  Mat XL = Mat::Zero(nw, nx);
  for (int t = 1; t < T; ++t)
    XL += Maux.block(nx + (t - 1) * nw, t * nx, nw, nx);
  Eigen::LLT<Mat> lvk(eta_k.Sigmav);
  const Mat Svk_inv = lvk.solve(Mat::Identity(ny, ny));

  FractionalProblem pr;
  pr.p = L.total;
  pr.n = T * bs;
  pr.ncols = N;
  const double floor =
      std::min(opts.sigmav_floor,
               0.5 * Eigen::SelfAdjointEigenSolver<Mat>(eta_k.Sigmav)
                         .eigenvalues()
                         .minCoeff());
  pr.barriers.push_back(stability_block(L, H));
  pr.barriers.push_back(sigmav_floor_block(L, floor));
  pr.barrier_dim = (2 * nx + ny) + ny;

  pr.kernel = [&, T](const Vec& v, BandedMatrix* M) {
    ImplicitModel e = L.unpack(eta_k, v);
    build_kernel(e.E, e.F, e.C, e.Sigmav, H, T, M);
    return true;
  };

  pr.fill_q = [&, T](const Vec& v, Mat* Q) {
    ImplicitModel e = L.unpack(eta_k, v);
    Q->setZero();
    const Mat Et = e.E.transpose(), Ft = e.F.transpose(), Ht = H.transpose();
    for (int t = 0; t < T; ++t) {
      const int xo = t * bs, yo = xo + nx;
      Mat qx = Et * Hmat.middleRows(t * nx, nx);
      if (t + 1 < T) qx -= Ft * Hmat.middleRows((t + 1) * nx, nx);
      if (t == 0) {  // plus Lambda' eps columns
        qx -= Ht * (e.E * Zmat.topRows(nx));
      } else {
        qx -= Ht * (e.L * Zmat.middleRows(nx + (t - 1) * nw, nw));
        qx.col(0) -= Ht * (e.K * data.u.col(t - 1));
      }
      Q->block(xo, 0, nx, N) = qx;
      Q->block(yo, 0, ny, 1) = data.y.col(t) - e.D * data.u.col(t);
    }
  };

  pr.affine_value = [&, T](const Vec& v) {
    ImplicitModel e = L.unpack(eta_k, v);
    double a = 2.0 * h0.head(nx).dot(e.E * data.x1);  // -2 h_0' eps_0(v)
    for (int t = 1; t < T; ++t)
      a += 2.0 * h0.segment(t * nx, nx)
                     .dot(e.K * data.u.col(t - 1) + e.L * data.w.col(t - 1));
    a += 2.0 * (e.E.cwiseProduct(XE.transpose())).sum();
    a += 2.0 * (e.L.cwiseProduct(XL.transpose())).sum();
    a += T * (Svk_inv.cwiseProduct(e.Sigmav)).sum();
    return a;
  };
  pr.affine_grad = Vec::Zero(L.total);
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < nx; ++b)
      pr.affine_grad(L.oE + a * nx + b) =
          2.0 * h0(a) * data.x1(b) + 2.0 * XE(b, a);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nw; ++j) {
      double g = 2.0 * XL(j, i);
      for (int t = 1; t < T; ++t) g += 2.0 * h0(t * nx + i) * data.w(j, t - 1);
      pr.affine_grad(L.oL + i * nw + j) = g;
    }
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nu; ++j) {
      double g = 0.0;
      for (int t = 1; t < T; ++t) g += 2.0 * h0(t * nx + i) * data.u(j, t - 1);
      pr.affine_grad(L.oK + i * nu + j) = g;
    }
  for (int a = 0; a < ny; ++a)
    for (int b = 0; b <= a; ++b)
      pr.affine_grad(lower_index(L.oSv, a, b)) =
          T * Svk_inv(a, b) * (a == b ? 1.0 : 2.0);

  pr.fill_dq = [&, T](int i, Mat* R) -> bool {
    if (i >= L.oP) return false;  // P enters the barrier only
    if (i < L.oF) {               // E_ab
      const int a = i / nx, b = i % nx;
      for (int t = 0; t < T; ++t)
        R->row(t * bs + b) += Hmat.row(t * nx + a);
      R->block(0, 0, nx, N) -=
          H.row(a).transpose() * Zmat.topRows(nx).row(b);
      return true;
    }
    if (i < L.oK) {  // F_ab
      const int a = (i - L.oF) / nx, b = (i - L.oF) % nx;
      for (int t = 0; t + 1 < T; ++t)
        R->row(t * bs + b) -= Hmat.row((t + 1) * nx + a);
      return true;
    }
    if (i < L.oL) {  // K_ij, data column only
      const int a = (i - L.oK) / nu, b = (i - L.oK) % nu;
      const Vec Ha = H.row(a).transpose();
      for (int t = 1; t < T; ++t)
        R->block(t * bs, 0, nx, 1) -= Ha * data.u(b, t - 1);
      return true;
    }
    if (i < L.oC) {  // L_ij
      const int a = (i - L.oL) / nw, b = (i - L.oL) % nw;
      const Vec Ha = H.row(a).transpose();
      for (int t = 1; t < T; ++t)
        R->block(t * bs, 0, nx, N) -= Ha * Zmat.row(nx + (t - 1) * nw + b);
      return true;
    }
    if (i < L.oD) return true;  // C: kernel derivative only
    if (i < L.oSv) {            // D_ab, data column only
      const int a = (i - L.oD) / nu, b = (i - L.oD) % nu;
      for (int t = 0; t < T; ++t) (*R)(t * bs + nx + a, 0) -= data.u(b, t);
      return true;
    }
    return true;  // Sigmav: kernel derivative only
  };

  pr.apply_dm = [&, T](int i, const Mat& W, Mat* R) {
    if (i < L.oF) {  // E_ab: dM[x_t,x_t] = H'e_a e_b' + e_b e_a'H
      const int a = i / nx, b = i % nx;
      const Vec Ha = H.row(a).transpose();
      for (int t = 0; t < T; ++t) {
        const int xo = t * bs;
        R->block(xo, 0, nx, N) -= Ha * W.block(xo + b, 0, 1, N);
        R->row(xo + b) -= H.row(a) * W.block(xo, 0, nx, N);
      }
      return;
    }
    if (i < L.oK) {  // F_ab: dM[x_t,x_{t-1}] = -H'e_a e_b'
      const int a = (i - L.oF) / nx, b = (i - L.oF) % nx;
      const Vec Ha = H.row(a).transpose();
      for (int t = 1; t < T; ++t) {
        const int xo = t * bs, po = (t - 1) * bs;
        R->block(xo, 0, nx, N) += Ha * W.block(po + b, 0, 1, N);
        R->row(po + b) += H.row(a) * W.block(xo, 0, nx, N);
      }
      return;
    }
    if (i < L.oC) return;  // K, L: offset derivative only
    if (i < L.oD) {        // C_ab: dM[y_t,x_t] = -e_a e_b'
      const int a = (i - L.oC) / nx, b = (i - L.oC) % nx;
      for (int t = 0; t < T; ++t) {
        const int xo = t * bs, yo = xo + nx;
        R->row(yo + a) += W.row(xo + b);
        R->row(xo + b) += W.row(yo + a);
      }
      return;
    }
    if (i < L.oSv) return;  // D: offset derivative only
    if (i < L.oP) {         // Sigmav_ab: dM[y_t,y_t] = e_ab + e_ba
      const int k = i - L.oSv;
      int a = 0;
      while ((a + 1) * (a + 2) / 2 <= k) ++a;
      const int b = k - a * (a + 1) / 2;
      for (int t = 0; t < T; ++t) {
        const int yo = t * bs + nx;
        R->row(yo + a) -= W.row(yo + b);
        if (a != b) R->row(yo + b) -= W.row(yo + a);
      }
    }
  };

  ImplicitModel warm = eta_k;
  warm.P = cert.P;
  Vec v = L.pack(warm);

  MstepResult res;
  res.objective_start = mstep_merit(eta_k, instances);
  FractionalOptions fo;
  fo.t0 = opts.barrier_t0;
  fo.mu = opts.barrier_mu;
  fo.rel_tol = opts.rel_tol;
  fo.max_newton = opts.max_newton;
  bool ok = fractional_newton(pr, fo, v, &res.newton_steps);
  ImplicitModel out = L.unpack(eta_k, v);
  double merit_out = res.objective_start;
  if (ok) {
    try {
      merit_out = mstep_merit(out, instances);
    } catch (const std::exception&) {
      ok = false;
    }
  }
  if (!ok || merit_out > res.objective_start +
                             1e-9 * (1.0 + std::abs(res.objective_start))) {
    res.eta = warm;
    res.objective_end = res.objective_start;
    res.fell_back = true;
  } else {
    res.eta = out;
    res.objective_end = merit_out;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Multiplier fit: minimize the zero-offset bound over (H, P) subject to the
// stability LMI at the fixed model. Single data column, h = 0, so
// q = [H'eps_t; y_t - D u_t] and only H touches the fractional term.

Certificate fit_multiplier(const ImplicitModel& eta,
                           const SimErrorInstance& data,
                           const MstepOptions& opts) {
  const int nx = eta.nx(), ny = eta.ny();
  const int T = static_cast<int>(data.y.cols());
  const int bs = nx + ny;
  const int nH = nx * nx, nP = nx * (nx + 1) / 2;

  LiftedSystem sys = build_lifted(eta, data.u, data.x1, data.w);
  Mat Yres(ny, T);
  for (int t = 0; t < T; ++t)
    Yres.col(t) = data.y.col(t) - eta.D * data.u.col(t);

  auto unpackH = [&](const Vec& v, Mat* Hm, Mat* Pm) {
    *Hm = Mat(nx, nx);
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b < nx; ++b) (*Hm)(a, b) = v(a * nx + b);
    *Pm = Mat(nx, nx);
    int k = nH;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b <= a; ++b) (*Pm)(a, b) = (*Pm)(b, a) = v(k++);
  };

  FractionalProblem pr;
  pr.p = nH + nP;
  pr.n = T * bs;
  pr.ncols = 1;
  pr.barrier_dim = 2 * nx + ny;
  {
    AffineLmi lmi;
    const int ds = 2 * nx + ny;
    lmi.constant = Mat::Zero(ds, ds);
    lmi.constant.block(2 * nx, 0, ny, nx) = eta.C;
    lmi.constant.block(0, 2 * nx, nx, ny) = eta.C.transpose();
    lmi.constant.block(2 * nx, 2 * nx, ny, ny) = eta.Sigmav;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b < nx; ++b) {
        Mat m = Mat::Zero(ds, ds);
        for (int j = 0; j < nx; ++j) {  // d(H'E + E'H)/dH_ab
          m(b, j) += eta.E(a, j);
          m(j, b) += eta.E(a, j);
        }
        for (int i = 0; i < nx; ++i) {  // d(F'H)/dH_ab in block (0,1) + sym
          m(i, nx + b) += eta.F(a, i);
          m(nx + b, i) += eta.F(a, i);
        }
        lmi.coeff.push_back({a * nx + b, m});
      }
    int k = nH;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b <= a; ++b, ++k) {
        Mat m = Mat::Zero(ds, ds);
        m(a, b) = m(b, a) = -1.0;
        m(nx + a, nx + b) = m(nx + b, nx + a) = 1.0;
        lmi.coeff.push_back({k, m});
      }
    pr.barriers.push_back(std::move(lmi));
  }

  pr.kernel = [&, T](const Vec& v, BandedMatrix* M) {
    Mat Hm, Pm;
    unpackH(v, &Hm, &Pm);
    build_kernel(eta.E, eta.F, eta.C, eta.Sigmav, Hm, T, M);
    return true;
  };
  pr.fill_q = [&, T](const Vec& v, Mat* Q) {
    Mat Hm, Pm;
    unpackH(v, &Hm, &Pm);
    Q->setZero();
    for (int t = 0; t < T; ++t) {
      Q->block(t * bs, 0, nx, 1) =
          Hm.transpose() * sys.eps.segment(t * nx, nx);
      Q->block(t * bs + nx, 0, ny, 1) = Yres.col(t);
    }
  };
  pr.affine_value = [](const Vec&) { return 0.0; };
  pr.affine_grad = Vec::Zero(pr.p);
  pr.fill_dq = [&, T](int i, Mat* R) -> bool {
    if (i >= nH) return false;
    const int a = i / nx, b = i % nx;
    for (int t = 0; t < T; ++t) (*R)(t * bs + b, 0) += sys.eps(t * nx + a);
    return true;
  };
  pr.apply_dm = [&, T](int i, const Mat& W, Mat* R) {
    const int a = i / nx, b = i % nx;
    const Vec Ea = eta.E.row(a).transpose();
    const Vec Fa = eta.F.row(a).transpose();
    for (int t = 0; t < T; ++t) {
      const int xo = t * bs;
      const auto Wx = W.block(xo, 0, nx, 1);
      R->row(xo + b) -= eta.E.row(a) * Wx;  // dM[x,x] = e_b e_a'E + E'e_a e_b'
      R->block(xo, 0, nx, 1) -= Ea * Wx.row(b);
      if (t > 0) {
        const int po = (t - 1) * bs;
        const auto Wp = W.block(po, 0, nx, 1);
        R->row(xo + b) += eta.F.row(a) * Wp;  // dM[x_t,x_{t-1}] = -e_b e_a'F
        R->block(po, 0, nx, 1) += Fa * Wx.row(b);
      }
    }
  };

  Certificate init = initial_certificate(eta, opts.cert_delta);
  Vec v(pr.p);
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < nx; ++b) v(a * nx + b) = init.H(a, b);
  int k = nH;
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b <= a; ++b) v(k++) = init.P(a, b);

  FractionalOptions fo;
  fo.t0 = opts.barrier_t0;
  fo.mu = opts.barrier_mu;
  fo.rel_tol = opts.rel_tol;
  fo.max_newton = opts.max_newton;
  int steps = 0;
  if (!fractional_newton(pr, fo, v, &steps)) return init;
  Certificate out;
  unpackH(v, &out.H, &out.P);
  ImplicitModel check = eta;
  check.P = out.P;
  if (!in_stable_set(check, out.H, 0.0)) return init;
  return out;
}

// ---------------------------------------------------------------------------
// Literal conic assembly for small-scale cross-checks: epigraph LMIs per
// instance plus the stability LMI and the Sigmav floor, all by affine
// differencing against the dense reference forms.

MstepProgram assemble_mstep_program(const ImplicitModel& eta_k, const Mat& H,
                                    const std::vector<SimErrorInstance>& instances,
                                    const std::vector<Vec>& h,
                                    const MstepOptions& opts) {
  const VarLayout L(eta_k);
  const int N = static_cast<int>(instances.size());
  const int T = static_cast<int>(instances.front().y.cols());
  MstepProgram out;
  out.n_eta_vars = L.total;
  ConicProgram& prog = out.program;
  prog.nvar = L.total + N;
  prog.c = Vec::Zero(prog.nvar);
  for (int j = 0; j < N; ++j) prog.c(L.total + j) = 1.0;
  Eigen::LLT<Mat> lvk(eta_k.Sigmav);
  const Mat Svk_inv = lvk.solve(Mat::Identity(L.ny, L.ny));
  for (int a = 0; a < L.ny; ++a)
    for (int b = 0; b <= a; ++b)
      prog.c(lower_index(L.oSv, a, b)) =
          T * Svk_inv(a, b) * (a == b ? 1.0 : 2.0);

  auto push_dense = [](PsdBlock* blk, int var, const Mat& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j <= i; ++j)
        if (m(i, j) != 0.0) blk->entries.push_back({var, i, j, m(i, j)});
  };

  ImplicitModel zero = eta_k;
  zero.E.setZero();
  zero.F.setZero();
  zero.K.setZero();
  zero.L.setZero();
  zero.C.setZero();
  zero.D.setZero();
  zero.Sigmav.setZero();
  zero.P.setZero();
  for (int j = 0; j < N; ++j) {
    const Mat base = epigraph_lmi(zero, instances[j], H, h[j], 0.0);
    PsdBlock blk;
    blk.dim = static_cast<int>(base.rows());
    push_dense(&blk, -1, base);
    for (int i = 0; i < L.total; ++i) {
      Vec e = Vec::Zero(L.total);
      e(i) = 1.0;
      ImplicitModel unit = L.unpack(zero, e);
      push_dense(&blk, i,
                 epigraph_lmi(unit, instances[j], H, h[j], 0.0) - base);
    }
    Mat es = Mat::Zero(blk.dim, blk.dim);
    es(0, 0) = 1.0;
    push_dense(&blk, L.total + j, es);
    prog.blocks.push_back(std::move(blk));
  }

  {
    AffineLmi s = stability_block(L, H);
    PsdBlock blk;
    blk.dim = static_cast<int>(s.constant.rows());
    push_dense(&blk, -1, s.constant);
    for (const auto& [idx, m] : s.coeff) push_dense(&blk, idx, m);
    prog.blocks.push_back(std::move(blk));
  }
  {
    AffineLmi s = sigmav_floor_block(L, opts.sigmav_floor);
    PsdBlock blk;
    blk.dim = L.ny;
    push_dense(&blk, -1, s.constant);
    for (const auto& [idx, m] : s.coeff) push_dense(&blk, idx, m);
    prog.blocks.push_back(std::move(blk));
  }
  return out;
}

ImplicitModel unpack_eta(const ImplicitModel& shape, const Vec& x) {
  const VarLayout L(shape);
  return L.unpack(shape, x.head(L.total));
}

}  // namespace emid
