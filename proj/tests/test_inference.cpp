#include <doctest.h>

#include "emid/kalman.hpp"
#include "emid/lifted.hpp"
#include "emid/model.hpp"
#include "emid/rng.hpp"
#include "emid/smoother.hpp"

using namespace emid;

namespace {

ExplicitModel random_case(int idx, Dimensions& d) {
  Rng pick(1000 + idx);
  d.nx = 1 + int(pick.uniform() * 3);  // 1..3
  d.nw = 1 + int(pick.uniform() * d.nx);
  if (d.nw > d.nx) d.nw = d.nx;
  d.nu = 1 + int(pick.uniform() * 2);
  d.ny = 1 + int(pick.uniform() * 2);
  d.T = 5 + int(pick.uniform() * 16);  // 5..20
  RandomSystemOptions opts;
  opts.sigma1_scale = 0.5 + pick.uniform();
  opts.sigmaw_scale = 0.2 + pick.uniform();
  opts.sigmav_scale = 0.1 + pick.uniform();
  return make_random_system(d, 0.3 + 0.65 * pick.uniform(), 2000 + idx, opts);
}

}  // namespace

TEST_CASE("filter log likelihood equals the dense lifted Gaussian density") {
  for (int i = 0; i < 20; ++i) {
    Dimensions d;
    ExplicitModel m = random_case(i, d);
    Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 77 + i);
    OracleResult oracle = lifted_conditioning_oracle(m, tr.u, tr.y);
    double ll = log_likelihood(m, tr.u, tr.y);
    CHECK(ll == doctest::Approx(oracle.loglik).epsilon(1e-10));
  }
}

TEST_CASE("disturbance smoother matches exact lifted conditioning") {
  for (int i = 0; i < 50; ++i) {
    Dimensions d;
    ExplicitModel m = random_case(i, d);
    Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 300 + i);
    SmoothedPosterior fast = disturbance_smoother(m, tr.u, tr.y);
    OracleResult oracle = lifted_conditioning_oracle(m, tr.u, tr.y);
    const SmoothedPosterior& ref = oracle.posterior;
    double scale = 1.0 + ref.Zhat.norm();
    CHECK((fast.Zhat - ref.Zhat).norm() / scale < 1e-8);
    CHECK((fast.Omega - ref.Omega).norm() / (1.0 + ref.Omega.norm()) < 1e-8);
    CHECK((fast.x1_mean - ref.x1_mean).norm() / scale < 1e-8);
    CHECK((fast.x1_cov - ref.x1_cov).norm() < 1e-8);
    for (int t = 0; t < d.T; ++t)
      CHECK((fast.W2[t] - ref.W2[t]).norm() / (1.0 + ref.W2[t].norm()) < 1e-8);
    CHECK((fast.Delta - ref.Delta).norm() / (1.0 + ref.Delta.norm()) < 1e-8);
  }
}

TEST_CASE("smoother handles a singular disturbance channel (nw < nx)") {
  ExplicitModel m = mass_spring_damper(1.0, 0.5, 2.0, 0.1, {0.1, 0.5, 0.05});
  Dimensions d{2, 1, 1, 1, 12};
  Trajectory tr = sample_trajectory(m, Mat::Random(1, d.T), 9);
  SmoothedPosterior fast = disturbance_smoother(m, tr.u, tr.y);
  OracleResult oracle = lifted_conditioning_oracle(m, tr.u, tr.y);
  CHECK((fast.Zhat - oracle.posterior.Zhat).norm() < 1e-8);
  CHECK((fast.Omega - oracle.posterior.Omega).norm() < 1e-8);
}

TEST_CASE("zero Sigmaw and Sigma1 collapse the posterior to a Dirac") {
  Dimensions d{2, 1, 1, 2, 10};
  RandomSystemOptions opts;
  opts.sigma1_scale = 0.0;
  opts.sigmaw_scale = 0.0;
  ExplicitModel m = make_random_system(d, 0.8, 61, opts);
  Trajectory tr = sample_trajectory(m, Mat::Random(1, d.T), 62);
  SmoothedPosterior post = disturbance_smoother(m, tr.u, tr.y);
  CHECK(post.Omega.norm() < 1e-12);
  CHECK((post.x1_mean - m.mu).norm() < 1e-12);
  for (int t = 0; t + 1 < d.T; ++t)
    CHECK(post.Zhat.segment(2 + 2 * t, 2).norm() < 1e-12);
}

TEST_CASE("RTS smoothed states agree with the lifted posterior mean") {
  for (int i = 0; i < 10; ++i) {
    Dimensions d;
    ExplicitModel m = random_case(i, d);
    Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 500 + i);
    SmoothedStates s = rts_smoother(m, tr.u, tr.y);
    OracleResult oracle = lifted_conditioning_oracle(m, tr.u, tr.y);
    // E[x | y] in lifted coordinates.
    LiftedSystem sys = build_lifted(m, d.T);
    Vec U(d.T * d.nu);
    for (int t = 0; t < d.T; ++t) U.segment(t * d.nu, d.nu) = tr.u.col(t);
    Vec xs = sys.Fbar * oracle.posterior.Zhat + sys.Gbar * U;
    for (int t = 0; t < d.T; ++t)
      CHECK((s.xs.col(t) - xs.segment(t * d.nx, d.nx)).norm() < 1e-8 * (1.0 + xs.norm()));
  }
}

TEST_CASE("oracle rejects long horizons") {
  Dimensions d{1, 1, 1, 1, 101};
  ExplicitModel m = make_random_system(d, 0.5, 1);
  Mat u = Mat::Zero(1, 101), y = Mat::Zero(1, 101);
  CHECK_THROWS(lifted_conditioning_oracle(m, u, y));
}
