#include "emid/banded.hpp"

#include <cmath>

namespace emid {

bool banded_cholesky_inplace(BandedMatrix& m) {
  const int n = m.n, kd = m.kd;
  for (int j = 0; j < n; ++j) {
    double d = m.data(0, j);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    m.data(0, j) = ljj;
    const int reach = std::min(kd, n - 1 - j);
    for (int r = 1; r <= reach; ++r) m.data(r, j) /= ljj;
    // Rank-1 update of the trailing band: M(i,k) -= L(i,j) L(k,j).
    for (int k = j + 1; k <= j + reach; ++k) {
      const double lkj = m.data(k - j, j);
      if (lkj == 0.0) continue;
      const int iend = j + reach;
      for (int i = k; i <= iend; ++i) m.data(i - k, k) -= m.data(i - j, j) * lkj;
    }
  }
  return true;
}

void banded_forward_solve(const BandedMatrix& L, Mat& b) {
  const int n = L.n, kd = L.kd;
  for (int j = 0; j < n; ++j) {
    b.row(j) /= L.data(0, j);
    const int reach = std::min(kd, n - 1 - j);
    for (int r = 1; r <= reach; ++r)
      b.row(j + r) -= L.data(r, j) * b.row(j);
  }
}

void banded_backward_solve(const BandedMatrix& L, Mat& b) {
  const int n = L.n, kd = L.kd;
  for (int j = n - 1; j >= 0; --j) {
    const int reach = std::min(kd, n - 1 - j);
    for (int r = 1; r <= reach; ++r)
      b.row(j) -= L.data(r, j) * b.row(j + r);
    b.row(j) /= L.data(0, j);
  }
}

void banded_solve(const BandedMatrix& L, Mat& b) {
  banded_forward_solve(L, b);
  banded_backward_solve(L, b);
}

double banded_logdet(const BandedMatrix& L) {
  double ld = 0.0;
  for (int j = 0; j < L.n; ++j) ld += std::log(L.data(0, j));
  return 2.0 * ld;
}

}  // namespace emid
