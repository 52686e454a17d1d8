#include "emid/conic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace emid {

Mat block_matrix(const PsdBlock& block, const Vec& x) {
  Mat m = Mat::Zero(block.dim, block.dim);
  for (const ConicEntry& e : block.entries) {
    const double v = e.var < 0 ? e.value : e.value * x(e.var);
    m(e.row, e.col) += v;
    if (e.row != e.col) m(e.col, e.row) += v;
  }
  return m;
}

double feasibility_margin(const ConicProgram& prog, const Vec& x) {
  double margin = std::numeric_limits<double>::infinity();
  for (const PsdBlock& b : prog.blocks) {
    Eigen::SelfAdjointEigenSolver<Mat> es(block_matrix(b, x),
                                          Eigen::EigenvaluesOnly);
    margin = std::min(margin, es.eigenvalues().minCoeff());
  }
  return margin;
}

namespace {

// Barrier value, gradient and Hessian of phi(x) = t c'x - sum_b logdet F_b(x).
// Returns false when some block is not PD at x.
struct BarrierEval {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

bool eval_barrier(const ConicProgram& prog, const Vec& c, double t, const Vec& x,
                  BarrierEval* out, bool with_derivs) {
  out->value = t * c.dot(x);
  if (with_derivs) {
    out->grad = t * c;
    out->hess = Mat::Zero(prog.nvar, prog.nvar);
  }
  for (const PsdBlock& b : prog.blocks) {
    Mat S = block_matrix(b, x);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) return false;
    double ld = 0.0;
    for (int i = 0; i < b.dim; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
    out->value -= ld;
    if (!with_derivs) continue;

    // Dense coefficient matrices per variable touched by this block.
    std::vector<int> vars;
    std::vector<Mat> Fk;
    std::vector<int> slot(prog.nvar, -1);
    for (const ConicEntry& e : b.entries) {
      if (e.var < 0) continue;
      if (slot[e.var] < 0) {
        slot[e.var] = static_cast<int>(vars.size());
        vars.push_back(e.var);
        Fk.push_back(Mat::Zero(b.dim, b.dim));
      }
      Fk[slot[e.var]](e.row, e.col) += e.value;
      if (e.row != e.col) Fk[slot[e.var]](e.col, e.row) += e.value;
    }
    std::vector<Mat> SiF(vars.size());
    for (size_t k = 0; k < vars.size(); ++k) {
      SiF[k] = llt.solve(Fk[k]);
      out->grad(vars[k]) -= SiF[k].trace();
    }
    for (size_t k = 0; k < vars.size(); ++k)
      for (size_t l = k; l < vars.size(); ++l) {
        const double h = (SiF[k].transpose().cwiseProduct(SiF[l])).sum();
        out->hess(vars[k], vars[l]) += h;
        if (k != l) out->hess(vars[l], vars[k]) += h;
      }
  }
  return true;
}

// Damped Newton minimization of the barrier objective at fixed t. `stop`,
// when given, is checked after every accepted step (used for the phase-1
// early exit, whose objective is otherwise unbounded below).
// Returns false on numerical breakdown at the starting point.
bool newton_stage(const ConicProgram& prog, const Vec& c, double t, Vec& x,
                  int* steps, int max_newton, bool (*stop)(const Vec&, double),
                  double thresh) {
  BarrierEval e;
  for (int it = 0; it < max_newton; ++it) {
    if (stop && stop(x, thresh)) return true;
    if (!eval_barrier(prog, c, t, x, &e, true)) return false;
    Mat H = e.hess;
    H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Mat> ldlt(H);
    Vec d = -ldlt.solve(e.grad);
    double lambda2 = -e.grad.dot(d);
    if (!(lambda2 > 0)) return true;  // at (or numerically past) the optimum
    if (lambda2 < 1e-14 * (1.0 + std::abs(e.value))) return true;
    double step = 1.0;
    BarrierEval trial;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vec xt = x + step * d;
      if (eval_barrier(prog, c, t, xt, &trial, false) &&
          trial.value <= e.value - 0.25 * step * lambda2) {
        x = xt;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (steps) ++*steps;
    if (!moved) return true;  // stalled: accept current point
  }
  return true;
}

}  // namespace

SolveResult solve_conic(const ConicProgram& prog, const SolveOptions& opts) {
  SolveResult res;
  res.x = Vec::Zero(prog.nvar);

  int m = 0;
  for (const PsdBlock& b : prog.blocks) m += b.dim;
  if (m == 0 || prog.nvar == 0) {
    res.status = SolveStatus::kOptimal;
    res.objective = 0.0;
    return res;
  }

  // Phase 1: minimize a subject to F_b(x) + a I >= 0 via the same barrier.
  ConicProgram ph1 = prog;
  ph1.nvar = prog.nvar + 1;
  const int avar = prog.nvar;
  for (PsdBlock& b : ph1.blocks)
    for (int i = 0; i < b.dim; ++i) b.entries.push_back({avar, i, i, 1.0});
  Vec c1 = Vec::Zero(ph1.nvar);
  c1(avar) = 1.0;

  Vec x1 = Vec::Zero(ph1.nvar);
  x1(avar) = -feasibility_margin(prog, res.x) + 1.0;
  double t = opts.t0;
  const int m1 = m;
  auto stop1 = [](const Vec& x, double th) { return x(x.size() - 1) < -th; };
  while (true) {
    if (!newton_stage(ph1, c1, t, x1, &res.newton_steps, opts.max_newton, stop1,
                      opts.feas_target)) {
      res.status = SolveStatus::kNumericalFailure;
      return res;
    }
    if (x1(avar) < -opts.feas_target) break;  // strictly feasible point found
    if (m1 / t < opts.tol) {
      // Converged with a >= 0: no strictly feasible point exists.
      res.status = x1(avar) > 0 ? SolveStatus::kInfeasible
                                : SolveStatus::kNumericalFailure;
      return res;
    }
    t *= opts.barrier_mu;
  }
  res.x = x1.head(prog.nvar);
  if (opts.feasibility_only) {
    res.status = SolveStatus::kOptimal;
    res.objective = prog.c.dot(res.x);
    return res;
  }

  // Phase 2: central path for the true objective.
  t = opts.t0;
  while (true) {
    if (!newton_stage(prog, prog.c, t, res.x, &res.newton_steps, opts.max_newton,
                      nullptr, 0.0)) {
      res.status = SolveStatus::kNumericalFailure;
      return res;
    }
    if (m / t < opts.tol) break;
    t *= opts.barrier_mu;
  }
  res.objective = prog.c.dot(res.x);
  res.status = SolveStatus::kOptimal;
  return res;
}

std::string dump_program(const ConicProgram& prog) {
  std::ostringstream os;
  char buf[64];
  os << "conic 1\n" << prog.nvar << " " << prog.blocks.size() << "\n";
  for (int i = 0; i < prog.nvar; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", prog.c(i));
    os << buf << (i + 1 == prog.nvar ? "\n" : " ");
  }
  if (prog.nvar == 0) os << "\n";
  for (const PsdBlock& b : prog.blocks) {
    os << "block " << b.dim << " " << b.entries.size() << "\n";
    for (const ConicEntry& e : b.entries) {
      std::snprintf(buf, sizeof buf, "%.17g", e.value);
      os << e.var << " " << e.row << " " << e.col << " " << buf << "\n";
    }
  }
  return os.str();
}

ConicProgram load_program(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "conic" || version != 1)
    throw std::runtime_error("unrecognized program header");
  ConicProgram prog;
  size_t nblocks = 0;
  is >> prog.nvar >> nblocks;
  prog.c = Vec::Zero(prog.nvar);
  for (int i = 0; i < prog.nvar; ++i) is >> prog.c(i);
  for (size_t b = 0; b < nblocks; ++b) {
    PsdBlock blk;
    size_t ne = 0;
    if (!(is >> tag >> blk.dim >> ne) || tag != "block")
      throw std::runtime_error("malformed block header");
    blk.entries.resize(ne);
    for (ConicEntry& e : blk.entries) is >> e.var >> e.row >> e.col >> e.value;
    prog.blocks.push_back(std::move(blk));
  }
  if (!is) throw std::runtime_error("truncated program text");
  return prog;
}

}  // namespace emid
