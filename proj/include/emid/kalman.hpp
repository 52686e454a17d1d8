// Exact forward filtering, RTS smoothing and prediction-error log likelihood.
#pragma once

#include <vector>

#include "emid/model.hpp"

namespace emid {

struct FilterOutput {
  Mat xpred;                // nx x T, predicted means x_{t|t-1}
  Mat xfilt;                // nx x T, filtered means x_{t|t}
  std::vector<Mat> Ppred;   // predicted covariances
  std::vector<Mat> Pfilt;   // filtered covariances
  Mat innov;                // ny x T, innovations e_t
  std::vector<Mat> S;       // innovation covariances (PD)
  std::vector<Mat> Lmat;    // L_t = A - Kp_t C, prediction-form closed loop
  double loglik = 0.0;      // sum_t log N(e_t; 0, S_t)
};

// Forward recursion with process-noise covariance G Sigmaw G'. Joseph-form
// covariance updates; every covariance is symmetrized. Throws on a
// non-positive-definite innovation covariance.
FilterOutput kalman_filter(const ExplicitModel& model, const Mat& u, const Mat& y);

double log_likelihood(const ExplicitModel& model, const Mat& u, const Mat& y);

struct SmoothedStates {
  Mat xs;                  // nx x T, smoothed means
  std::vector<Mat> Ps;     // smoothed covariances
  std::vector<Mat> lag1;   // Cov(x_{t+1}, x_t | y), t = 1..T-1
};

SmoothedStates rts_smoother(const ExplicitModel& model, const Mat& u, const Mat& y);

}  // namespace emid
