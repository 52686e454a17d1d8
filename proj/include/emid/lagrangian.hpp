// Lagrangian relaxation of the simulation-error objective over the implicit
// parametrization: stability LMI, the relaxed cost Jhat, the tight multiplier
// offset, and the epigraph LMI. Dense reference forms; the banded production
// solver in mstep.cpp must agree with these.
#pragma once

#include <vector>

#include "emid/conic.hpp"
#include "emid/estep.hpp"
#include "emid/model.hpp"

namespace emid {

// Multiplier (H, h): lambda(x) = 2((I_T kron H) x + h), one offset h per
// simulation-error instance.
struct Multiplier {
  Mat H;                // nx x nx, not necessarily symmetric
  std::vector<Vec> h;   // length T * nx each
};

// M(eta, H) = [[H'E + E'H - P, F'H, C'], [H'F, P, 0], [C, 0, Sigmav]],
// of side 2 nx + ny. Strict positivity defines the certified-stable set.
Mat stability_lmi(const ImplicitModel& eta, const Mat& H);

bool in_stable_set(const ImplicitModel& eta, const Mat& H, double margin = 0.0);

// Quadratic form of the relaxed cost in the lifted trajectory x in R^{T nx}:
//   J(eta, x) - lambda(x)'(Fi x + eps) = x'Psi x + 2 b'x + c.
struct RelaxationQuadratic {
  Mat Psi;
  Vec b;
  double c = 0.0;
};

RelaxationQuadratic build_relaxation_quadratic(const ImplicitModel& eta,
                                               const SimErrorInstance& inst,
                                               const Mat& H, const Vec& h);

double quad_eval(const RelaxationQuadratic& q, const Vec& x);

// Jhat(eta) = sup_x of the quadratic above = c - b' Psi^{-1} b. Throws if Psi
// is not negative definite (the supremum is then infinite).
double jhat(const ImplicitModel& eta, const SimErrorInstance& inst, const Mat& H,
            const Vec& h);

// Offset making the bound tight at eta: the supremum is attained at the
// noiseless trajectory of the instance, so Jhat(eta) = J(eta, x*).
Vec compute_h(const ImplicitModel& eta, const SimErrorInstance& inst, const Mat& H);

// Epigraph form: N(eta, s) >= 0 iff s >= Jhat(eta), with
//   N = [[s + 2 h'eps, (Fi'h + Lambda'eps)', (Y - Dbar U)'],
//        [., Lambda'Fi + Fi'Lambda, -Cbar'],
//        [., ., I kron Sigmav]].
Mat epigraph_lmi(const ImplicitModel& eta, const SimErrorInstance& inst,
                 const Mat& H, const Vec& h, double s);

// Smallest s with N(eta, s) >= 0, by Schur complement against the trailing
// block; equals jhat when Psi is negative definite.
double epigraph_optimal_s(const ImplicitModel& eta, const SimErrorInstance& inst,
                          const Mat& H, const Vec& h);

// Discrete Lyapunov solve P = A'PA + Q (Kronecker elimination; nx small).
Mat discrete_lyapunov(const Mat& A, const Mat& Q);

// Closed-form strictly feasible certificate: P solving
// P = A'PA + C'Sigmav^{-1}C + delta I with A = E\F, and H = E^{-T} P.
// Throws if the model is not strictly stable.
struct Certificate {
  Mat H;
  Mat P;
};
Certificate initial_certificate(const ImplicitModel& eta, double delta = 1e-6);

// Numerical feasibility probe for the stability LMI in (H, P) with a box
// |entries| <= bound, via the conic backend. Returns true when a strictly
// feasible pair is found (and fills cert); false when the solver certifies
// infeasibility within the box.
bool lmi_feasibility_search(const ImplicitModel& eta, double bound,
                            Certificate* cert = nullptr);

}  // namespace emid
