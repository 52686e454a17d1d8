#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "emid/banded.hpp"
#include "emid/conic.hpp"
#include "emid/rng.hpp"

using namespace emid;

TEST_CASE("2x2 arrow problem has the known optimum x = 1") {
  // min x s.t. [[x, 1], [1, x]] >= 0.
  ConicProgram p;
  p.nvar = 1;
  p.c = Vec::Ones(1);
  p.blocks.push_back({2, {{0, 0, 0, 1.0}, {0, 1, 1, 1.0}, {-1, 1, 0, 1.0}}});
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::kOptimal);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("largest eigenvalue as an SDP") {
  Rng rng(3);
  Mat S(4, 4);
  for (int i = 0; i < S.size(); ++i) S(i) = rng.gaussian();
  S = Mat(0.5 * (S + S.transpose()));
  // min t s.t. t I - S >= 0.
  ConicProgram p;
  p.nvar = 1;
  p.c = Vec::Ones(1);
  PsdBlock b;
  b.dim = 4;
  for (int i = 0; i < 4; ++i) {
    b.entries.push_back({0, i, i, 1.0});
    for (int j = 0; j <= i; ++j) b.entries.push_back({-1, i, j, -S(i, j)});
  }
  p.blocks.push_back(b);
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::kOptimal);
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  CHECK(r.x(0) == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-6));
}

TEST_CASE("conflicting scalar constraints are reported infeasible") {
  // x - 1 >= 0 and -x - 1 >= 0.
  ConicProgram p;
  p.nvar = 1;
  p.c = Vec::Zero(1);
  p.blocks.push_back({1, {{0, 0, 0, 1.0}, {-1, 0, 0, -1.0}}});
  p.blocks.push_back({1, {{0, 0, 0, -1.0}, {-1, 0, 0, -1.0}}});
  SolveResult r = solve_conic(p);
  CHECK(r.status == SolveStatus::kInfeasible);
}

TEST_CASE("feasibility-only mode returns a strictly feasible point") {
  ConicProgram p;
  p.nvar = 2;
  p.c = Vec::Zero(2);
  // [[x0, x1], [x1, 1]] >= 0 with x0 <= 3.
  p.blocks.push_back({2, {{0, 0, 0, 1.0}, {1, 1, 0, 1.0}, {-1, 1, 1, 1.0}}});
  p.blocks.push_back({1, {{-1, 0, 0, 3.0}, {0, 0, 0, -1.0}}});
  SolveOptions o;
  o.feasibility_only = true;
  SolveResult r = solve_conic(p, o);
  REQUIRE(r.status == SolveStatus::kOptimal);
  CHECK(feasibility_margin(p, r.x) > 0.0);
}

TEST_CASE("dump/load round trip preserves the solution") {
  ConicProgram p;
  p.nvar = 1;
  p.c = Vec::Ones(1);
  p.blocks.push_back({2, {{0, 0, 0, 1.0}, {0, 1, 1, 1.0}, {-1, 1, 0, 0.7071067811865}}});
  ConicProgram q = load_program(dump_program(p));
  CHECK(q.nvar == p.nvar);
  CHECK(dump_program(q) == dump_program(p));
  SolveResult a = solve_conic(p);
  SolveResult b = solve_conic(q);
  CHECK(a.x(0) == doctest::Approx(b.x(0)).epsilon(1e-12));
}

TEST_CASE("banded cholesky agrees with dense for random banded SPD matrices") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    int n = 20 + 7 * trial, kd = 2 + trial % 4;
    Mat A = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = j; i <= std::min(n - 1, j + kd); ++i) {
        A(i, j) = rng.gaussian();
        A(j, i) = A(i, j);
      }
    A += (2.0 * (kd + 1)) * Mat::Identity(n, n);  // diagonally dominant

    BandedMatrix B;
    B.resize(n, kd);
    for (int j = 0; j < n; ++j)
      for (int i = j; i <= std::min(n - 1, j + kd); ++i) B.at(i, j) = A(i, j);
    REQUIRE(banded_cholesky_inplace(B));

    Eigen::LLT<Mat> llt(A);
    double ld = 0.0;
    for (int i = 0; i < n; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
    CHECK(banded_logdet(B) == doctest::Approx(ld).epsilon(1e-10));

    Mat rhs = Mat::Random(n, 3), x = rhs;
    banded_solve(B, x);
    CHECK((A * x - rhs).norm() < 1e-9 * rhs.norm());

    Mat f = rhs;
    banded_forward_solve(B, f);
    CHECK((Mat(llt.matrixL()) * f - rhs).norm() < 1e-9 * rhs.norm());
  }
}

TEST_CASE("banded cholesky rejects indefinite matrices") {
  BandedMatrix B;
  B.resize(3, 1);
  B.at(0, 0) = 1.0;
  B.at(1, 1) = -2.0;
  B.at(2, 2) = 1.0;
  CHECK_FALSE(banded_cholesky_inplace(B));
}
