// Baseline EM with latent states: closed-form M step from RTS moments.
// Applicable only to non-singular models (nw == nx, G == I, Sigmaw PD).
#pragma once

#include <vector>

#include "emid/kalman.hpp"
#include "emid/model.hpp"

namespace emid {

class SingularModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws SingularModelError unless nw == nx, G == I and Sigmaw is positive
// definite (the E step conditions on x_{1:T}, whose transition density does
// not exist otherwise).
void check_states_em_applicable(const ExplicitModel& model);

// E[log p(y, x_{1:T} | theta) | y, theta_k] from the smoothed moments of
// theta_k, in natural-log likelihood units.
double q_ls_eval(const ExplicitModel& theta, const Mat& u, const Mat& y,
                 const SmoothedStates& s);

struct EmOptions {
  int max_iters = 100;
  double rel_tol = 1e-9;     // stop when the likelihood gain falls below
                             // rel_tol * (1 + |loglik|)
  double min_cov_eig = 1e-12;  // covariance floor applied after each M step
};

struct EmRunResult {
  ExplicitModel model;
  std::vector<double> loglik;  // loglik[k] = L(theta_k), k = 0..iters
  bool converged = false;
};

// One full EM iteration (RTS E step + closed-form M step). Returns the
// updated model; loglik_out receives L(theta_k) of the input model.
ExplicitModel em_states_iterate(const ExplicitModel& model, const Mat& u,
                                const Mat& y, double* loglik_out = nullptr,
                                double min_cov_eig = 1e-12);

EmRunResult em_states_run(const ExplicitModel& init, const Mat& u, const Mat& y,
                          const EmOptions& opts = {});

}  // namespace emid
