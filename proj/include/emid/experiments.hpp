// Seeded experiment runners. Each returns both structured rows (for tests)
// and the final CSV text: a provenance comment, a header row, then data rows.
// All randomness is derived from the config seed, and timing columns are
// zero unless explicitly enabled, so a rerun with the same config is
// byte-identical.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emid/model.hpp"

namespace emid {

// Log-likelihood and its lower-bound surrogates over a scalar-A grid; the
// reference point theta_k is the true model.
struct BoundSweepConfig {
  double a_true = 0.7;
  double a_min = 0.05;
  double a_max = 0.95;
  int grid = 31;
  double sigmaw = 1e-3;
  double sigmav = 1e-2;
  bool deterministic = false;  // Sigmaw = Sigma1 = 0 regime
  int T = 50;
  std::uint64_t seed = 1;
};

struct BoundSweepRow {
  double a, loglik, q_ls, q_ld, qbar;
};

struct BoundSweepOutput {
  std::vector<BoundSweepRow> rows;
  std::string csv;
};

BoundSweepOutput run_bound_sweep(const BoundSweepConfig& cfg);

// Both EM variants on identical data and initialization; per-iteration gap
// to each algorithm's own final log-likelihood.
struct ConvergenceConfig {
  int trials = 5;
  int T = 100;  // full-scale variant: 250
  int nx = 4;   // nw = nx, G = I so the baseline is applicable
  double radius = 0.85;
  double snr = 100.0;     // var(noise-free output) / Sigmav
  double sigmav = 1e-5;
  int max_iters = 40;           // disturbance-EM iteration cap
  int baseline_max_iters = 300; // the latent-states iterations are cheap
  bool timing = false;    // fill wall_ms (breaks byte-identical reruns)
  std::uint64_t seed = 1;
};

struct ConvergenceRow {
  int trial, iter;
  std::string algorithm;  // "latent-disturbances" | "latent-states"
  double loglik_gap;      // own final minus current, >= 0
  double wall_ms;
};

struct ConvergenceOutput {
  std::vector<ConvergenceRow> rows;
  std::string csv;
  // first iteration within 0.1 nats of the algorithm's final value, per trial
  std::vector<int> iters_to_tol_ld, iters_to_tol_ls;
};

ConvergenceOutput run_convergence(const ConvergenceConfig& cfg);

// Per-iteration spectral radius of both algorithms on data where the
// latent-states baseline leaves the stable set; seeds are searched in order
// from cfg.seed until such a case is found (or max_seeds exhausted).
struct StabilityConfig {
  int T = 20;  // short records make the baseline's excursions more likely
  int nx = 4;
  double radius = 0.90;
  int max_iters = 25;
  int max_seeds = 100;
  std::uint64_t seed = 1;
};

struct StabilityRow {
  std::uint64_t seed;
  int iter;
  std::string algorithm;
  double spectral_radius;
};

struct StabilityOutput {
  std::vector<StabilityRow> rows;
  std::string csv;
  bool baseline_unstable = false;
  std::uint64_t found_seed = 0;
  int unstable_iter = -1;
};

StabilityOutput run_stability(const StabilityConfig& cfg);

// Mass-spring-damper (nw = 1 < nx = 2): the disturbance algorithm improves
// the likelihood while the latent-states baseline rejects the model.
struct SingularDemoConfig {
  int T = 100;
  int max_iters = 15;
  std::uint64_t seed = 1;
};

struct SingularDemoRow {
  int iter;
  double loglik;
  double spectral_radius;
};

struct SingularDemoOutput {
  std::vector<SingularDemoRow> rows;
  std::string csv;
  std::string baseline_error;  // rejection message from the baseline
  int rank_gswg = 0;
  double loglik_gain = 0.0;
};

SingularDemoOutput run_singular_demo(const SingularDemoConfig& cfg);

}  // namespace emid
