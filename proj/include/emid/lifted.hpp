// Lifted (stacked over the horizon) forms of the dynamics:
//   explicit:  vec(x_{1:T}) = Fbar vec([x1, w_{1:T-1}]) + Gbar vec(u_{1:T}),
//              Y = Cbar Fbar Z + (Cbar Gbar + Dbar) U + V
//   implicit:  Fi vec(x_{1:T}) + eps = 0 with Fi block bidiagonal (E / -F)
//              and eps = [-E x1; -(K u_1 + L w_1); ...].
#pragma once

#include "emid/model.hpp"

namespace emid {

struct LiftedSystem {
  Mat Fbar;      // T nx x (nx + (T-1) nw)
  Mat Gbar;      // T nx x T nu
  Mat Cbar;      // T ny x T nx  (I_T (x) C)
  Mat Dbar;      // T ny x T nu  (I_T (x) D)
  Mat SigmaYbar; // T ny x T ny  (I_T (x) Sigmav)
  Mat Fi;        // T nx x T nx (implicit constraint; empty for explicit-only builds)
  Vec eps;       // T nx        (implicit constraint offset)
};

// Explicit blocks (Fbar, Gbar, Cbar, Dbar, SigmaYbar) for a horizon of T steps.
LiftedSystem build_lifted(const ExplicitModel& model, int T);

// Implicit constraint blocks for one simulation-error instance (u, w, x1):
// fills Fi and eps, plus Cbar/Dbar/SigmaYbar from eta.
LiftedSystem build_lifted(const ImplicitModel& eta, const Mat& u, const Vec& x1,
                          const Mat& w);

Mat kron_identity(int T, const Mat& block);  // I_T (x) block

}  // namespace emid
