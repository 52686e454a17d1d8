// EM over the latent-disturbance parametrization. Each iteration smooths at
// theta_k, updates (mu, Sigma1) and Sigmaw in closed form, and updates
// (A, B, G, C, D, Sigmav) by the relaxed M step over the certified-stable
// implicit set, so every iterate is guaranteed stable and the data
// log-likelihood never decreases.
#pragma once

#include <vector>

#include "emid/estep.hpp"
#include "emid/mstep.hpp"
#include "emid/model.hpp"

namespace emid {

struct EmDistOptions {
  int max_iters = 50;
  double rel_tol = 1e-8;       // on the log-likelihood gain
  double min_cov_eig = 1e-12;  // floor on Sigma1 / Sigmaw eigenvalues
  MstepOptions mstep;
};

struct EmDistIter {
  double loglik = 0.0;       // L(theta_k), before the update
  double merit_start = 0.0;  // relaxed M-step merit at eta_k
  double merit_end = 0.0;    // merit at the accepted eta_{k+1}
  bool fell_back = false;    // gamma kept at eta_k this iteration
  int newton_steps = 0;
};

struct EmDistResult {
  ExplicitModel model;
  std::vector<EmDistIter> history;
  double loglik = 0.0;  // L at the returned model
  bool converged = false;
};

// One EM iteration; info (optional) receives the bookkeeping entry.
ExplicitModel em_dist_iterate(const ExplicitModel& model, const Mat& u,
                              const Mat& y, const EmDistOptions& opts = {},
                              EmDistIter* info = nullptr);

EmDistResult em_dist_run(const ExplicitModel& init, const Mat& u, const Mat& y,
                         const EmDistOptions& opts = {});

}  // namespace emid
