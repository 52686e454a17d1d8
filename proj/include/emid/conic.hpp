// Minimal semidefinite programming backend: minimize c'x subject to affine
// constraints F0 + sum_k x_k Fk >= 0 (one or more PSD blocks), solved by a
// two-phase primal log-barrier method. Dense per-block linear algebra; meant
// for small cross-check problems, not the production M step.
#pragma once

#include <string>
#include <vector>

#include "emid/model.hpp"

namespace emid {

// One coefficient of a PSD block; var == -1 addresses the constant matrix F0.
// Entries are accumulated (duplicates add). Only the lower triangle needs to
// be given; (row, col) with row < col is mirrored.
struct ConicEntry {
  int var = -1;
  int row = 0;
  int col = 0;
  double value = 0.0;
};

struct PsdBlock {
  int dim = 0;
  std::vector<ConicEntry> entries;
};

struct ConicProgram {
  int nvar = 0;
  Vec c;  // objective, length nvar
  std::vector<PsdBlock> blocks;
};

// F0 + sum_k x_k Fk for one block.
Mat block_matrix(const PsdBlock& block, const Vec& x);

// min over blocks of lambda_min(F(x)); positive iff x is strictly feasible.
double feasibility_margin(const ConicProgram& prog, const Vec& x);

enum class SolveStatus { kOptimal, kInfeasible, kMaxIterations, kNumericalFailure };

struct SolveOptions {
  double tol = 1e-9;         // duality-gap bound m / t
  double barrier_mu = 20.0;  // outer multiplier on t
  double t0 = 1.0;
  int max_newton = 2000;
  double feas_target = 1e-8;  // phase 1 stops once margin exceeds this
  bool feasibility_only = false;  // return right after phase 1
};

struct SolveResult {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Vec x;
  double objective = 0.0;
  int newton_steps = 0;
};

SolveResult solve_conic(const ConicProgram& prog, const SolveOptions& opts = {});

// Plain-text sparse triplet serialization (round-trips exactly via %.17g).
std::string dump_program(const ConicProgram& prog);
ConicProgram load_program(const std::string& text);

}  // namespace emid
