#include <doctest.h>

#include "emid/em_states.hpp"
#include "emid/rng.hpp"

using namespace emid;

namespace {

ExplicitModel nonsingular_case(int idx, Dimensions& d, double rho = 0.8) {
  d.nx = 2 + (idx % 2);
  d.nw = d.nx;
  d.nu = 1;
  d.ny = 1 + (idx % 2);
  d.T = 60;
  RandomSystemOptions opts;
  opts.g_identity = true;
  opts.sigma1_scale = 0.5;
  opts.sigmaw_scale = 0.1;
  opts.sigmav_scale = 0.05;
  return make_random_system(d, rho, 9000 + idx, opts);
}

ExplicitModel perturb_dynamics(const ExplicitModel& m, double scale,
                               std::uint64_t seed) {
  Rng rng(seed);
  ExplicitModel out = m;
  auto jiggle = [&](Mat& a) {
    for (int i = 0; i < a.size(); ++i) a(i) += scale * rng.gaussian();
  };
  jiggle(out.A);
  jiggle(out.B);
  jiggle(out.C);
  jiggle(out.D);
  return out;
}

}  // namespace

TEST_CASE("likelihood is monotone along latent-states EM iterations") {
  for (int i = 0; i < 4; ++i) {
    Dimensions d;
    ExplicitModel truth = nonsingular_case(i, d);
    Trajectory tr = sample_trajectory(truth, Mat::Random(d.nu, d.T), 100 + i);
    ExplicitModel init = perturb_dynamics(truth, 0.1, 200 + i);
    EmOptions opts;
    opts.max_iters = 30;
    opts.rel_tol = 0.0;  // run all iterations
    EmRunResult res = em_states_run(init, tr.u, tr.y, opts);
    REQUIRE(res.loglik.size() >= 2);
    for (size_t k = 1; k < res.loglik.size(); ++k)
      CHECK(res.loglik[k] >= res.loglik[k - 1] - 1e-7 * (1.0 + std::abs(res.loglik[k])));
    CHECK(res.loglik.back() > res.loglik.front());
  }
}

TEST_CASE("the M step maximizes the latent-states Q") {
  Dimensions d;
  ExplicitModel m = nonsingular_case(1, d);
  Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 7);
  SmoothedStates s = rts_smoother(m, tr.u, tr.y);
  ExplicitModel up = em_states_iterate(m, tr.u, tr.y);
  double qstar = q_ls_eval(up, tr.u, tr.y, s);
  CHECK(qstar >= q_ls_eval(m, tr.u, tr.y, s) - 1e-9);
  for (int k = 0; k < 10; ++k) {
    ExplicitModel other = perturb_dynamics(up, 0.02, 400 + k);
    CHECK(q_ls_eval(other, tr.u, tr.y, s) <= qstar + 1e-9);
  }
}

TEST_CASE("Q minorizes the likelihood for latent states too") {
  Dimensions d;
  ExplicitModel m = nonsingular_case(0, d);
  Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 13);
  SmoothedStates s = rts_smoother(m, tr.u, tr.y);
  double l0 = log_likelihood(m, tr.u, tr.y);
  double q0 = q_ls_eval(m, tr.u, tr.y, s);
  for (int k = 0; k < 20; ++k) {
    ExplicitModel cand = perturb_dynamics(m, 0.01 * (1 + k % 3), 500 + k);
    double dl = log_likelihood(cand, tr.u, tr.y) - l0;
    double dq = q_ls_eval(cand, tr.u, tr.y, s) - q0;
    CHECK(dl - dq >= -1e-8 * (1.0 + std::abs(dl)));
  }
}

TEST_CASE("singular models are rejected") {
  ExplicitModel msd = mass_spring_damper(1.0, 0.4, 1.2, 0.1, {0.1, 0.4, 0.02});
  CHECK_THROWS_AS(check_states_em_applicable(msd), SingularModelError);

  Dimensions d{2, 1, 1, 2, 20};
  RandomSystemOptions opts;
  opts.g_identity = true;
  ExplicitModel m = make_random_system(d, 0.7, 3, opts);
  CHECK_NOTHROW(check_states_em_applicable(m));
  ExplicitModel zero_w = m;
  zero_w.Sigmaw.setZero();
  CHECK_THROWS_AS(check_states_em_applicable(zero_w), SingularModelError);
  ExplicitModel bad_g = m;
  bad_g.G(0, 1) = 0.5;
  CHECK_THROWS_AS(check_states_em_applicable(bad_g), SingularModelError);
}
