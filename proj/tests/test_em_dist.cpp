#include <doctest.h>

#include "emid/em_dist.hpp"
#include "emid/kalman.hpp"
#include "emid/rng.hpp"

using namespace emid;

namespace {

struct Problem {
  ExplicitModel truth;
  ExplicitModel init;
  Mat u, y;
};

Problem make_problem(int idx, int T, bool singular_g = false) {
  Dimensions d;
  d.nx = 2;
  d.nw = singular_g ? 1 : 2;
  d.nu = 1;
  d.ny = 1;
  d.T = T;
  RandomSystemOptions opts;
  opts.sigma1_scale = 0.3;
  opts.sigmaw_scale = 0.2;
  opts.sigmav_scale = 0.1;
  Problem p;
  p.truth = make_random_system(d, 0.8, 8600 + idx, opts);
  Rng inrng(8700 + idx);
  p.u = Mat(d.nu, T);
  for (int i = 0; i < p.u.size(); ++i) p.u(i) = inrng.gaussian();
  Trajectory tr = sample_trajectory(p.truth, p.u, 8800 + idx);
  p.y = tr.y;
  // a crude perturbed initializer, still stable
  p.init = make_random_system(d, 0.6, 8900 + idx, opts);
  return p;
}

}  // namespace

TEST_CASE("disturbance EM never decreases the log-likelihood") {
  for (int i = 0; i < 3; ++i) {
    Problem p = make_problem(i, 30);
    EmDistOptions opts;
    opts.max_iters = 8;
    EmDistResult res = em_dist_run(p.init, p.u, p.y, opts);
    REQUIRE(res.history.size() >= 2);
    for (size_t k = 1; k < res.history.size(); ++k)
      CHECK(res.history[k].loglik >=
            res.history[k - 1].loglik -
                1e-7 * (1.0 + std::abs(res.history[k].loglik)));
    CHECK(res.loglik >= res.history.back().loglik -
                            1e-7 * (1.0 + std::abs(res.loglik)));
  }
}

TEST_CASE("every EM iterate is strictly stable") {
  Problem p = make_problem(5, 30);
  EmDistOptions opts;
  ExplicitModel m = p.init;
  for (int k = 0; k < 6; ++k) {
    m = em_dist_iterate(m, p.u, p.y, opts);
    CHECK(spectral_radius(m.A) < 1.0);
  }
}

TEST_CASE("singular G (fewer disturbances than states) is handled") {
  Problem p = make_problem(7, 40, true);
  EmDistOptions opts;
  opts.max_iters = 6;
  EmDistResult res = em_dist_run(p.init, p.u, p.y, opts);
  REQUIRE(res.history.size() >= 2);
  CHECK(res.model.G.cols() == 1);
  CHECK(res.history.back().loglik > res.history.front().loglik);
  CHECK(spectral_radius(res.model.A) < 1.0);
}

TEST_CASE("the M-step merit is monotone within each iteration") {
  Problem p = make_problem(9, 25);
  EmDistOptions opts;
  ExplicitModel m = p.init;
  for (int k = 0; k < 5; ++k) {
    EmDistIter it;
    m = em_dist_iterate(m, p.u, p.y, opts, &it);
    CHECK(it.merit_end <= it.merit_start + 1e-9 * (1.0 + std::abs(it.merit_start)));
  }
}
