// Relaxed M step over the implicit parametrization: minimize the summed
// epigraph bound of all simulation-error instances plus the affine tangent of
// T logdet Sigmav, subject to the stability LMI and a Sigmav floor.
//
// The per-instance epigraph variable is eliminated in closed form
// (s_j = q_j'M^{-1}q_j - 2 h_j'eps_j), leaving a matrix-fractional objective
// whose kernel M is block tridiagonal in a per-time-step interleaved ordering;
// Newton steps use a banded Cholesky of M and exact derivatives. A literal
// conic-program assembly of the same problem is kept for small-scale
// cross-checks of this solver.
#pragma once

#include "emid/conic.hpp"
#include "emid/estep.hpp"
#include "emid/lagrangian.hpp"
#include "emid/model.hpp"

namespace emid {

struct MstepOptions {
  double sigmav_floor = 1e-10;  // Sigmav >= floor * I barrier
  double barrier_t0 = 1.0;
  double barrier_mu = 10.0;
  double rel_tol = 1e-8;      // stop when barrier_dim / t < rel_tol * (1+|f|)
  int max_newton = 200;       // per barrier stage
  double omega_tol = 1e-12;   // spectral truncation of the posterior covariance
  double cert_delta = 1e-6;   // Lyapunov margin for the initial certificate
};

// Multiplier fit: min over (H, P) of the single-instance relaxed cost at eta
// with h = 0, subject to the stability LMI. Warm-started from the closed-form
// Lyapunov certificate.
Certificate fit_multiplier(const ImplicitModel& eta, const SimErrorInstance& data,
                           const MstepOptions& opts = {});

struct MstepResult {
  ImplicitModel eta;       // optimized parameters; P holds the certificate
  double objective_start = 0.0;  // true bound value at eta_k (tight)
  double objective_end = 0.0;    // true bound value at the returned eta
  bool fell_back = false;  // solver output rejected, eta_k kept
  int newton_steps = 0;
};

// Minimizes sum_j Jhat_j(eta) + T tr(Sigmav_k^{-1} Sigmav) over Theta(H) from
// the strictly feasible warm start (eta_k, cert). The multiplier offsets h_j
// are the tight ones at eta_k, so the bound touches the expected simulation
// cost there and the EM merit cannot decrease.
MstepResult solve_mstep(const ImplicitModel& eta_k, const Certificate& cert,
                        const std::vector<SimErrorInstance>& instances,
                        const Mat& omega_cols, const MstepOptions& opts = {});

// True (un-relaxed) M-step merit: expected output cost plus T logdet Sigmav.
double mstep_merit(const ImplicitModel& eta,
                   const std::vector<SimErrorInstance>& instances);

// Literal conic program for the same M step: variables are the entries of eta
// (E, F, K, L, C, D row-major, then lower triangles of Sigmav and P) followed
// by one epigraph scalar per instance. Small scale only.
struct MstepProgram {
  ConicProgram program;
  int n_eta_vars = 0;  // epigraph scalars start at this index
};

MstepProgram assemble_mstep_program(const ImplicitModel& eta_k, const Mat& H,
                                    const std::vector<SimErrorInstance>& instances,
                                    const std::vector<Vec>& h,
                                    const MstepOptions& opts = {});

// Unpacks the eta-variable prefix of an assembled-program solution.
ImplicitModel unpack_eta(const ImplicitModel& shape, const Vec& x);

}  // namespace emid
