// Linear Gaussian state-space model containers, simulation and system generation.
//
//   x_{t+1} = A x_t + B u_t + G w_t,   w_t ~ N(0, Sigma_w)
//   y_t     = C x_t + D u_t + v_t,     v_t ~ N(0, Sigma_v),  x_1 ~ N(mu, Sigma_1)
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace emid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Dimensions {
  int nx = 1;  // state
  int nu = 1;  // input
  int ny = 1;  // output
  int nw = 1;  // disturbance; nw <= nx (singular models allowed)
  int T = 1;   // horizon length in samples

  void validate() const;
};

// Full explicit parameter set theta = {mu, Sigma1, Sigmaw, Sigmav, A, B, G, C, D}.
struct ExplicitModel {
  Vec mu;
  Mat Sigma1;   // nx x nx, symmetric PSD
  Mat Sigmaw;   // nw x nw, symmetric PSD
  Mat Sigmav;   // ny x ny, symmetric PD
  Mat A, B, G, C, D;

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }
  int nw() const { return static_cast<int>(G.cols()); }

  void validate() const;
};

// The explicit parameters updated by the Lagrangian M step, thetagamma.
struct ThetaGamma {
  Mat A, B, G, C, D, Sigmav;
};

// Implicit parametrization eta = {E, F, K, L, C, D, Sigmav, P}:
//   E x_{t+1} = F x_t + K u_t + L w_t,  A = E\F, B = E\K, G = E\L.
// P is the stability certificate for the LMI set Theta(H).
struct ImplicitModel {
  Mat E, F, K, L, C, D, Sigmav, P;

  int nx() const { return static_cast<int>(E.rows()); }
  int nu() const { return static_cast<int>(K.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }
  int nw() const { return static_cast<int>(L.cols()); }
};

// Input/output record; x, w, v are populated when the data was simulated.
// Series are stored one column per time step.
struct Trajectory {
  Mat u;  // nu x T
  Mat y;  // ny x T
  Mat x;  // nx x T (optional ground truth)
  Mat w;  // nw x T (optional ground truth)
  Mat v;  // ny x T (optional ground truth)
};

// Noiseless state sequence x_{t+1} = A x_t + B u_t + G w_t from x_1 = x1.
Mat simulate(const ExplicitModel& model, const Mat& u, const Vec& x1, const Mat& w);

// Draws x1 ~ N(mu, Sigma1), w_t ~ N(0, Sigmaw), v_t ~ N(0, Sigmav) with a
// seeded generator; identical seeds give identical trajectories.
Trajectory sample_trajectory(const ExplicitModel& model, const Mat& u, std::uint64_t seed);

// Maps an implicit model to the explicit gamma parameters
// M(eta) = {Sigmav, E\F, E\K, E\L, C, D}. Throws if E is numerically singular
// (condition number above 1e12), which signals a certificate violation.
ThetaGamma to_explicit(const ImplicitModel& eta);

ExplicitModel with_gamma(const ExplicitModel& base, const ThetaGamma& gamma);

// Wraps an explicit model as an implicit one with E = I.
ImplicitModel to_implicit(const ExplicitModel& model);

double spectral_radius(const Mat& A);

struct RandomSystemOptions {
  double sigma1_scale = 1.0;
  double sigmaw_scale = 1.0;
  double sigmav_scale = 1.0;
  bool g_identity = false;  // force G = I (requires nw == nx)
};

// Random system with spectral_radius(A) = target_radius (to ~1e-12): A is drawn
// with i.i.d. normal entries and rescaled by target_radius / rho(A).
ExplicitModel make_random_system(const Dimensions& dims, double target_radius,
                                        std::uint64_t seed,
                                        const RandomSystemOptions& opts = {});

struct MsdOptions {
  double sigma1_scale = 0.0;
  double sigmaw = 1.0;
  double sigmav = 1.0;
};

// Discretized mass-spring-damper m s'' + c s' + k s = u + w; a singular model
// with nx = 2, nw = 1 (outputs the displacement).
ExplicitModel mass_spring_damper(double m, double c, double k, double dt,
                                 const MsdOptions& opts = {});

// Quadratic output cost of the noiseless simulation:
//   E = sum_t |y_t - C x_t - D u_t|^2_{Sigmav^{-1}}.
double simulation_error(const ExplicitModel& model, const Mat& u, const Mat& y,
                        const Vec& x1, const Mat& w);

// Symmetric PSD factor Sigma = S S' via eigendecomposition; throws on
// eigenvalues below -tol * |Sigma|.
Mat psd_sqrt(const Mat& sigma, double tol = 1e-10);

// JSON text with deterministic field ordering (mu, Sigma1, Sigmaw, Sigmav, A, B, G, C, D).
std::string model_to_json(const ExplicitModel& model);
ExplicitModel model_from_json(const std::string& text);

}  // namespace emid
