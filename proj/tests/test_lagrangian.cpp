#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "emid/estep.hpp"
#include "emid/lagrangian.hpp"
#include "emid/rng.hpp"

using namespace emid;

namespace {

ExplicitModel small_case(int idx, Dimensions& d, double rho) {
  Rng pick(7000 + idx);
  d.nx = 2 + (idx % 2);
  d.nw = 1 + int(pick.uniform() * d.nx);
  if (d.nw > d.nx) d.nw = d.nx;
  d.nu = 1;
  d.ny = 1;
  d.T = 8;
  RandomSystemOptions opts;
  opts.sigma1_scale = 0.4;
  opts.sigmaw_scale = 0.3;
  opts.sigmav_scale = 0.2;
  return make_random_system(d, rho, 7100 + idx, opts);
}

// eta_k with its closed-form certificate, plus the data instance.
struct Setup {
  ImplicitModel eta;
  Certificate cert;
  SimErrorInstance inst;
};

Setup make_setup(int idx, double rho = 0.8) {
  Dimensions d;
  ExplicitModel m = small_case(idx, d, rho);
  Trajectory tr = sample_trajectory(m, Mat::Random(d.nu, d.T), 7300 + idx);
  SmoothedPosterior post = disturbance_smoother(m, tr.u, tr.y);
  Setup s;
  s.eta = to_implicit(m);
  s.cert = initial_certificate(s.eta);
  s.eta.P = s.cert.P;
  s.inst = make_instances(post, tr.u, tr.y, d.nx, d.nw)[0];
  return s;
}

// Random implicit perturbation that stays inside the certified-stable set.
ImplicitModel perturb_eta(const ImplicitModel& eta, const Mat& H, double scale,
                          std::uint64_t seed) {
  Rng rng(seed);
  auto jiggle = [&](const Mat& a) {
    Mat e(a.rows(), a.cols());
    for (int i = 0; i < e.size(); ++i) e(i) = rng.gaussian();
    return Mat(a + scale * e);
  };
  ImplicitModel out = eta;
  for (int tries = 0; tries < 50; ++tries) {
    out.E = jiggle(eta.E);
    out.F = jiggle(eta.F);
    out.K = jiggle(eta.K);
    out.L = jiggle(eta.L);
    out.C = jiggle(eta.C);
    out.D = jiggle(eta.D);
    Mat dv = jiggle(eta.Sigmav);
    out.Sigmav = 0.5 * (dv + dv.transpose());
    if (in_stable_set(out, H, 1e-10)) return out;
    scale *= 0.5;
  }
  return eta;
}

}  // namespace

TEST_CASE("closed-form certificates satisfy the stability LMI strictly") {
  for (int i = 0; i < 20; ++i) {
    Dimensions d;
    double rho = 0.3 + 0.65 * (i / 19.0);
    ExplicitModel m = small_case(i, d, rho);
    ImplicitModel eta = to_implicit(m);
    Certificate cert = initial_certificate(eta);
    eta.P = cert.P;
    CHECK(in_stable_set(eta, cert.H, 1e-12));
  }
}

TEST_CASE("certified-stable implies a strictly stable explicit model") {
  // Any (H, P) found by the feasibility search certifies rho(E\F) < 1.
  for (int i = 0; i < 5; ++i) {
    Dimensions d;
    ExplicitModel m = small_case(i, d, 0.5 + 0.08 * i);
    ImplicitModel eta = to_implicit(m);
    Certificate cert;
    REQUIRE(lmi_feasibility_search(eta, 1e4, &cert));
    eta.P = cert.P;
    CHECK(in_stable_set(eta, cert.H, 0.0));
    ThetaGamma g = to_explicit(eta);
    CHECK(spectral_radius(g.A) < 1.0);
  }
}

TEST_CASE("no certificate exists for unstable systems") {
  for (int i = 0; i < 5; ++i) {
    Dimensions d;
    ExplicitModel m = small_case(10 + i, d, 1.05 + 0.1 * i);
    CHECK_FALSE(lmi_feasibility_search(to_implicit(m), 1e4));
  }
}

TEST_CASE("tight multiplier: bound equals the simulation error at eta_k") {
  for (int i = 0; i < 8; ++i) {
    Setup s = make_setup(i);
    Vec h = compute_h(s.eta, s.inst, s.cert.H);
    double jh = jhat(s.eta, s.inst, s.cert.H, h);
    ThetaGamma g = to_explicit(s.eta);
    ExplicitModel em;
    em.A = g.A; em.B = g.B; em.G = g.G; em.C = g.C; em.D = g.D;
    em.Sigmav = g.Sigmav;
    double j = simulation_error(em, s.inst.u, s.inst.y, s.inst.x1, s.inst.w);
    CHECK(std::abs(jh - j) <= 1e-7 * (1.0 + std::abs(j)));
  }
}

TEST_CASE("the relaxation upper-bounds the simulation error everywhere") {
  int checked = 0;
  for (int i = 0; i < 10; ++i) {
    Setup s = make_setup(i);
    Vec h = compute_h(s.eta, s.inst, s.cert.H);
    for (int k = 0; k < 10; ++k) {
      ImplicitModel cand = perturb_eta(s.eta, s.cert.H, 0.05, 7900 + 10 * i + k);
      double jh = jhat(cand, s.inst, s.cert.H, h);
      ThetaGamma g = to_explicit(cand);
      ExplicitModel em;
      em.A = g.A; em.B = g.B; em.G = g.G; em.C = g.C; em.D = g.D;
      em.Sigmav = g.Sigmav;
      double j = simulation_error(em, s.inst.u, s.inst.y, s.inst.x1, s.inst.w);
      CHECK(jh - j >= -1e-9 * (1.0 + std::abs(j)));
      ++checked;
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("quadratic form: values never exceed the supremum, equality at the top") {
  Setup s = make_setup(2);
  Vec h = compute_h(s.eta, s.inst, s.cert.H);
  RelaxationQuadratic q = build_relaxation_quadratic(s.eta, s.inst, s.cert.H, h);
  double sup = jhat(s.eta, s.inst, s.cert.H, h);
  Rng rng(81);
  for (int k = 0; k < 1000; ++k) {
    Vec x = Vec::NullaryExpr(q.b.size(), [&](int) { return 3.0 * rng.gaussian(); });
    CHECK(quad_eval(q, x) <= sup + 1e-9 * (1.0 + std::abs(sup)));
  }
  Vec xstar = (-q.Psi).ldlt().solve(q.b);
  CHECK(std::abs(quad_eval(q, xstar) - sup) <= 1e-10 * (1.0 + std::abs(sup)));
}

TEST_CASE("epigraph form brackets the closed-form optimum") {
  for (int i = 0; i < 6; ++i) {
    Setup s = make_setup(i);
    Vec h = compute_h(s.eta, s.inst, s.cert.H);
    double sstar = epigraph_optimal_s(s.eta, s.inst, s.cert.H, h);
    CHECK(std::abs(sstar - jhat(s.eta, s.inst, s.cert.H, h)) <=
          1e-6 * (1.0 + std::abs(sstar)));
    double step = 1e-6 * (1.0 + std::abs(sstar));
    auto lmin = [&](double sv) {
      Eigen::SelfAdjointEigenSolver<Mat> es(
          epigraph_lmi(s.eta, s.inst, s.cert.H, h, sv), Eigen::EigenvaluesOnly);
      return es.eigenvalues().minCoeff();
    };
    CHECK(lmin(sstar + step) >= 0.0);
    CHECK(lmin(sstar - 10 * step) < 0.0);
  }
}

TEST_CASE("discrete lyapunov solve satisfies its equation") {
  Dimensions d{3, 1, 1, 3, 1};
  ExplicitModel m = make_random_system(d, 0.9, 55);
  Mat Q = Mat::Identity(3, 3);
  Mat P = discrete_lyapunov(m.A, Q);
  CHECK((P - m.A.transpose() * P * m.A - Q).norm() < 1e-10);
}
