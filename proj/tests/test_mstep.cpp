#include <doctest.h>

#include "emid/estep.hpp"
#include "emid/lagrangian.hpp"
#include "emid/mstep.hpp"
#include "emid/rng.hpp"
#include "emid/smoother.hpp"

using namespace emid;

namespace {

struct Setup {
  ImplicitModel eta;
  Certificate cert;
  std::vector<SimErrorInstance> instances;
  Mat omega_cols;
};

Setup make_setup(int idx, int T, double rho = 0.8) {
  Dimensions d;
  Rng pick(8200 + idx);
  d.nx = 2 + (idx % 2);
  d.nw = 1 + int(pick.uniform() * d.nx);
  if (d.nw > d.nx) d.nw = d.nx;
  d.nu = 1;
  d.ny = 1;
  d.T = T;
  RandomSystemOptions opts;
  opts.sigma1_scale = 0.4;
  opts.sigmaw_scale = 0.3;
  opts.sigmav_scale = 0.2;
  ExplicitModel m = make_random_system(d, rho, 8300 + idx, opts);
  Rng inrng(8500 + idx * 13 + T);
  Mat u(d.nu, d.T);
  for (int i = 0; i < u.size(); ++i) u(i) = inrng.gaussian();
  Trajectory tr = sample_trajectory(m, u, 8400 + idx);
  SmoothedPosterior post = disturbance_smoother(m, tr.u, tr.y);
  Setup s;
  s.eta = to_implicit(m);
  s.cert = initial_certificate(s.eta);
  s.eta.P = s.cert.P;
  s.instances = make_instances(post, tr.u, tr.y, d.nx, d.nw);
  s.omega_cols = rank_one_decompose(post.Omega);
  return s;
}

// Tight offsets for every instance via the dense reference form.
std::vector<Vec> tight_offsets(const Setup& s) {
  std::vector<Vec> h;
  for (const SimErrorInstance& inst : s.instances)
    h.push_back(compute_h(s.eta, inst, s.cert.H));
  return h;
}

// Relaxed M-step objective at eta: summed optimal epigraph values plus the
// tangent trace term, all through the dense reference forms.
double reference_objective(const ImplicitModel& eta, const Setup& s,
                           const std::vector<Vec>& h) {
  double f = 0.0;
  for (size_t j = 0; j < s.instances.size(); ++j)
    f += epigraph_optimal_s(eta, s.instances[j], s.cert.H, h[j]);
  Eigen::LLT<Mat> llt(s.eta.Sigmav);
  f += s.instances[0].y.cols() *
       llt.solve(eta.Sigmav).trace();
  return f;
}

}  // namespace

TEST_CASE("summed bound with tight offsets touches the expected cost at eta_k") {
  for (int i = 0; i < 4; ++i) {
    Setup s = make_setup(i, 8);
    std::vector<Vec> h = tight_offsets(s);
    double bound = 0.0;
    for (size_t j = 0; j < s.instances.size(); ++j)
      bound += epigraph_optimal_s(s.eta, s.instances[j], s.cert.H, h[j]);
    ThetaGamma g = to_explicit(s.eta);
    ExplicitModel m;
    m.A = g.A;
    m.B = g.B;
    m.G = g.G;
    m.C = g.C;
    m.D = g.D;
    m.Sigmav = g.Sigmav;
    const double cost = expected_output_cost(m, s.instances);
    CHECK(bound == doctest::Approx(cost).epsilon(1e-7));
  }
}

TEST_CASE("banded solver agrees with the literal conic program") {
  for (int i = 0; i < 3; ++i) {
    Setup s = make_setup(i, 6);
    std::vector<Vec> h = tight_offsets(s);

    MstepResult res = solve_mstep(s.eta, s.cert, s.instances, s.omega_cols);
    REQUIRE_FALSE(res.fell_back);
    const double f_fast = reference_objective(res.eta, s, h);

    MstepProgram lit = assemble_mstep_program(s.eta, s.cert.H, s.instances, h);
    SolveResult sol = solve_conic(lit.program);
    REQUIRE(sol.status == SolveStatus::kOptimal);
    // The interior-point solution carries the optimal epigraph scalars, so
    // its own objective is the stable way to read off the optimal value.
    const double f_conic = sol.objective;

    const double f0 = reference_objective(s.eta, s, h);
    CHECK(f_fast <= f0 + 1e-7 * (1.0 + std::abs(f0)));
    CHECK(f_conic <= f0 + 1e-6 * (1.0 + std::abs(f0)));
    CHECK(f_fast == doctest::Approx(f_conic).epsilon(1e-4));
  }
}

TEST_CASE("the M step never increases the merit and keeps the certificate") {
  for (int i = 0; i < 4; ++i) {
    Setup s = make_setup(i, 15, 0.75);
    MstepResult res = solve_mstep(s.eta, s.cert, s.instances, s.omega_cols);
    CHECK(res.objective_end <=
          res.objective_start + 1e-9 * (1.0 + std::abs(res.objective_start)));
    CHECK(mstep_merit(res.eta, s.instances) ==
          doctest::Approx(res.objective_end).epsilon(1e-9));
    CHECK(in_stable_set(res.eta, s.cert.H));
    if (!res.fell_back)
      CHECK(res.objective_end <
            res.objective_start - 1e-12);
  }
}

TEST_CASE("an infeasible warm start falls back to eta_k") {
  Setup s = make_setup(0, 8);
  Certificate bad = s.cert;
  bad.H = -bad.H;  // stability LMI fails, kernel is indefinite
  MstepResult res = solve_mstep(s.eta, bad, s.instances, s.omega_cols);
  CHECK(res.fell_back);
  CHECK(res.objective_end == res.objective_start);
  CHECK((res.eta.F - s.eta.F).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the fitted multiplier is feasible and beats the Lyapunov start") {
  for (int i = 0; i < 4; ++i) {
    Setup s = make_setup(i, 12, 0.7);
    const SimErrorInstance& data = s.instances[0];
    Certificate init = initial_certificate(s.eta);
    Certificate fit = fit_multiplier(s.eta, data);
    ImplicitModel with_p = s.eta;
    with_p.P = fit.P;
    CHECK(in_stable_set(with_p, fit.H));
    const Vec h0 = Vec::Zero(s.eta.nx() * data.y.cols());
    const double b_init = epigraph_optimal_s(s.eta, data, init.H, h0);
    const double b_fit = epigraph_optimal_s(s.eta, data, fit.H, h0);
    CHECK(b_fit <= b_init + 1e-7 * (1.0 + std::abs(b_init)));
  }
}
