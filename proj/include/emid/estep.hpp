// E step for the disturbance parametrization: smoothing bundle, the auxiliary
// lower-bound function Q, partitioned closed-form updates, and the rank-one
// decomposition of the posterior covariance into simulation-error instances.
#pragma once

#include <vector>

#include "emid/model.hpp"
#include "emid/smoother.hpp"

namespace emid {

struct EStepBundle {
  SmoothedPosterior posterior;
  Mat Sigmahat_w;      // (1/T) sum_t E[w_t w_t' | y]
  double loglik = 0.0; // L(theta_k) at the smoothed model
};

EStepBundle estep(const ExplicitModel& model, const Mat& u, const Mat& y);

// Q(theta, theta_k) = E[log p(y, x1, w | theta) | y, theta_k] in natural-log
// likelihood units, so L(theta) >= Q(theta, theta_k) + const and
// L(theta) - Q(theta, theta_k) is the conditional entropy term.
// Splits as Q = Q1(mu, Sigma1) + Q2(Sigmaw) + Q3(gamma).
//
// Dirac conventions: Sigma1 == 0 makes Q1 zero when mu == xhat_{1|T} (else
// -inf); Sigmaw == 0 makes Q2 zero. These match the degenerate posterior.
double q_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
              const SmoothedPosterior& post);
double q1_eval(const Vec& mu, const Mat& Sigma1, const SmoothedPosterior& post);
double q2_eval(const Mat& Sigmaw, const SmoothedPosterior& post, int T);
double q3_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
               const SmoothedPosterior& post);

// Closed-form maximizers of Q1 and Q2.
void mstep_alpha(ExplicitModel& model, const SmoothedPosterior& post);
void mstep_beta(ExplicitModel& model, const EStepBundle& bundle);

// Columns omega_j with Omega = sum_j omega_j omega_j', from the spectral
// decomposition truncated at tol * lambda_max (numerical rank r).
Mat rank_one_decompose(const Mat& omega, double tol = 1e-12);

// One quadratic simulation-error instance of the relaxed M step. Instance 0
// carries the observed data at the posterior mean; instances 1..r carry a
// covariance column omega_j with zero input and zero output.
struct SimErrorInstance {
  Vec x1;  // initial state
  Mat w;   // nw x T disturbances (last column unused by the dynamics)
  Mat u;   // nu x T
  Mat y;   // ny x T
};

std::vector<SimErrorInstance> make_instances(const SmoothedPosterior& post,
                                             const Mat& u, const Mat& y, int nx,
                                             int nw, double tol = 1e-12);

// sum_j |Y_j - Cbar xbar_j - Dbar U_j|^2 weighted by Sigmav^{-1}; equals the
// expected output cost E[sum_t |y_t - C x_t - D u_t|^2 | y] when gamma = theta.
double expected_output_cost(const ExplicitModel& gamma,
                            const std::vector<SimErrorInstance>& instances);

}  // namespace emid
