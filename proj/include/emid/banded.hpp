// Symmetric banded storage and an in-place banded Cholesky factorization.
#pragma once

#include "emid/model.hpp"

namespace emid {

// Lower band storage: data(i - j, j) holds M(i, j) for j <= i <= j + kd.
struct BandedMatrix {
  int n = 0;
  int kd = 0;   // number of subdiagonals
  Mat data;     // (kd + 1) x n

  void resize(int n_, int kd_) {
    n = n_;
    kd = kd_;
    data = Mat::Zero(kd + 1, n);
  }
  double& at(int i, int j) { return data(i - j, j); }        // requires j <= i <= j+kd
  double at(int i, int j) const { return data(i - j, j); }
  void set_zero() { data.setZero(); }
};

// In-place lower Cholesky M = L L'. Returns false if M is not positive
// definite (a pivot fails); contents are then undefined.
bool banded_cholesky_inplace(BandedMatrix& m);

// Solves L X = B and L' X = B respectively, with L from
// banded_cholesky_inplace; B is overwritten.
void banded_forward_solve(const BandedMatrix& L, Mat& b);
void banded_backward_solve(const BandedMatrix& L, Mat& b);

// Full solve (L L') X = B.
void banded_solve(const BandedMatrix& L, Mat& b);

// log det M = 2 sum log L_ii.
double banded_logdet(const BandedMatrix& L);

}  // namespace emid
