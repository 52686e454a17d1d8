// Joint smoothing distribution of the initial state and disturbances, and the
// dense lifted-conditioning oracle used to cross-check it.
#pragma once

#include <vector>

#include "emid/model.hpp"

namespace emid {

// Posterior of Z = vec([x1, w_{1:T-1}]) given y_{1:T}, plus the per-step
// disturbance second moments and the smoothed output residual.
struct SmoothedPosterior {
  Vec x1_mean;              // xhat_{1|T}
  Mat x1_cov;               // Sigmahat_{1|T}; equals the top-left block of Omega
  Vec Zhat;                 // E[Z | y], length nx + (T-1) nw
  Mat Omega;                // Var[Z | y], symmetric PSD
  std::vector<Mat> W2;      // E[w_t w_t' | y], t = 1..T (w_T uses the prior)
  Vec Delta;                // Y - Cbar Fbar Zhat - (Cbar Gbar + Dbar) U, length T ny
};

// Recursive disturbance smoother (O(T^2) for the full Omega via closed-form
// cross covariances). Requires Sigmav PD; Sigmaw and Sigma1 may be singular or
// zero, in which case the posterior degenerates to the corresponding Dirac.
SmoothedPosterior disturbance_smoother(const ExplicitModel& model, const Mat& u,
                                       const Mat& y);

struct OracleResult {
  SmoothedPosterior posterior;
  double loglik = 0.0;  // exact log N(Y; mu_lifted, Sigma_lifted)
};

// Brute-force oracle: builds the joint Gaussian of (Z, Y) in lifted form and
// conditions exactly by dense factorization. Rejected for T > 100.
OracleResult lifted_conditioning_oracle(const ExplicitModel& model, const Mat& u,
                                        const Mat& y);

}  // namespace emid
