#include <doctest.h>

#include <cmath>

#include "emid/model.hpp"
#include "emid/rng.hpp"

using namespace emid;

TEST_CASE("simulate matches the hand-rolled recursion") {
  Dimensions d{2, 1, 1, 2, 6};
  ExplicitModel m = make_random_system(d, 0.8, 11);
  Rng rng(7);
  Mat u(1, d.T), w(2, d.T);
  for (int t = 0; t < d.T; ++t) {
    u(0, t) = rng.gaussian();
    w.col(t) = Vec::NullaryExpr(2, [&](int) { return rng.gaussian(); });
  }
  Vec x1(2);
  x1 << 0.3, -1.1;
  Mat x = simulate(m, u, x1, w);
  Vec xt = x1;
  for (int t = 0; t < d.T; ++t) {
    CHECK((x.col(t) - xt).norm() < 1e-14);
    xt = m.A * xt + m.B * u.col(t) + m.G * w.col(t);
  }
}

TEST_CASE("sample_trajectory is seed-deterministic and obeys the dynamics") {
  Dimensions d{3, 2, 2, 3, 15};
  ExplicitModel m = make_random_system(d, 0.9, 5);
  Mat u = Mat::Random(2, d.T);
  Trajectory a = sample_trajectory(m, u, 42);
  Trajectory b = sample_trajectory(m, u, 42);
  Trajectory c = sample_trajectory(m, u, 43);
  CHECK((a.y - b.y).norm() == 0.0);
  CHECK((a.x - b.x).norm() == 0.0);
  CHECK((a.y - c.y).norm() > 1e-8);
  // y_t = C x_t + D u_t + v_t and the recorded states satisfy the recursion.
  CHECK((a.y - m.C * a.x - m.D * u - a.v).norm() == doctest::Approx(0.0).epsilon(1e-12));
  for (int t = 0; t + 1 < d.T; ++t) {
    Vec nxt = m.A * a.x.col(t) + m.B * u.col(t) + m.G * a.w.col(t);
    CHECK((a.x.col(t + 1) - nxt).norm() < 1e-12);
  }
}

TEST_CASE("make_random_system hits the requested spectral radius") {
  for (double rho : {0.3, 0.8, 0.95, 1.2}) {
    Dimensions d{4, 1, 1, 4, 1};
    ExplicitModel m = make_random_system(d, rho, 100 + int(rho * 10));
    CHECK(spectral_radius(m.A) == doctest::Approx(rho).epsilon(1e-10));
  }
}

TEST_CASE("g_identity option forces G = I") {
  Dimensions d{3, 1, 2, 3, 1};
  RandomSystemOptions opts;
  opts.g_identity = true;
  ExplicitModel m = make_random_system(d, 0.7, 9, opts);
  CHECK((m.G - Mat::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("implicit/explicit round trip") {
  Dimensions d{3, 2, 2, 2, 1};
  ExplicitModel m = make_random_system(d, 0.85, 21);
  ImplicitModel eta = to_implicit(m);
  // Perturb to a nontrivial E and check M(eta) recovers E\F etc.
  Mat E = Mat::Identity(3, 3) + 0.1 * Mat::Random(3, 3);
  eta.E = E;
  eta.F = E * m.A;
  eta.K = E * m.B;
  eta.L = E * m.G;
  ThetaGamma g = to_explicit(eta);
  CHECK((g.A - m.A).norm() < 1e-12);
  CHECK((g.B - m.B).norm() < 1e-12);
  CHECK((g.G - m.G).norm() < 1e-12);
  CHECK((g.C - m.C).norm() == 0.0);
  CHECK((g.Sigmav - m.Sigmav).norm() == 0.0);
}

TEST_CASE("to_explicit rejects a singular E") {
  Dimensions d{2, 1, 1, 2, 1};
  ExplicitModel m = make_random_system(d, 0.5, 3);
  ImplicitModel eta = to_implicit(m);
  eta.E = Mat::Zero(2, 2);
  CHECK_THROWS_AS(to_explicit(eta), std::runtime_error);
}

TEST_CASE("mass-spring-damper discretization") {
  double mm = 2.0, c = 0.4, k = 1.5, dt = 0.1;
  ExplicitModel m = mass_spring_damper(mm, c, k, dt);
  CHECK(m.nx() == 2);
  CHECK(m.nw() == 1);
  CHECK(m.A(0, 0) == doctest::Approx(1.0));
  CHECK(m.A(0, 1) == doctest::Approx(dt));
  CHECK(m.A(1, 0) == doctest::Approx(-k * dt / mm));
  CHECK(m.A(1, 1) == doctest::Approx(1.0 - c * dt / mm));
  CHECK(m.B(1, 0) == doctest::Approx(dt));
  CHECK((m.B - m.G).norm() == 0.0);
  CHECK(m.C(0, 0) == 1.0);
  CHECK(m.C(0, 1) == 0.0);
}

TEST_CASE("simulation_error equals the explicit weighted sum") {
  Dimensions d{2, 1, 2, 2, 8};
  ExplicitModel m = make_random_system(d, 0.6, 17);
  Trajectory tr = sample_trajectory(m, Mat::Random(1, d.T), 55);
  double e = simulation_error(m, tr.u, tr.y, tr.x.col(0), tr.w);
  Mat x = simulate(m, tr.u, tr.x.col(0), tr.w);
  Eigen::LLT<Mat> llt(m.Sigmav);
  double ref = 0.0;
  for (int t = 0; t < d.T; ++t) {
    Vec r = tr.y.col(t) - m.C * x.col(t) - m.D * tr.u.col(t);
    ref += r.dot(llt.solve(r));
  }
  CHECK(e == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("psd_sqrt factors and rejects indefinite input") {
  Mat S(2, 2);
  S << 4.0, 1.0, 1.0, 3.0;
  Mat R = psd_sqrt(S);
  CHECK((R * R.transpose() - S).norm() < 1e-12);
  Mat bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS(psd_sqrt(bad));
}

TEST_CASE("json round trip is exact") {
  Dimensions d{3, 2, 2, 2, 1};
  ExplicitModel m = make_random_system(d, 0.75, 31);
  ExplicitModel r = model_from_json(model_to_json(m));
  CHECK((r.A - m.A).norm() == 0.0);
  CHECK((r.B - m.B).norm() == 0.0);
  CHECK((r.G - m.G).norm() == 0.0);
  CHECK((r.C - m.C).norm() == 0.0);
  CHECK((r.D - m.D).norm() == 0.0);
  CHECK((r.mu - m.mu).norm() == 0.0);
  CHECK((r.Sigma1 - m.Sigma1).norm() == 0.0);
  CHECK((r.Sigmaw - m.Sigmaw).norm() == 0.0);
  CHECK((r.Sigmav - m.Sigmav).norm() == 0.0);
  CHECK(model_to_json(r) == model_to_json(m));
}
