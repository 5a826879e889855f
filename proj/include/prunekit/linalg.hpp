#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/matrix.hpp"

namespace prunekit {

// W = u * diag(sigma) * v with u (m x k), v (k x n), k = min(m, n).
struct SvdTriple {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;

  Matrix reconstruct() const {
    Matrix us = u;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= sigma[c];
    return matmul(us, v);
  }
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  const std::size_t n = a.size();
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void rotate_rows(Matrix& g, std::size_t i, std::size_t j, double c, double s) {
  auto ri = g.row(i);
  auto rj = g.row(j);
  for (std::size_t t = 0; t < ri.size(); ++t) {
    const double a = ri[t];
    const double b = rj[t];
    ri[t] = c * a - s * b;
    rj[t] = s * a + c * b;
  }
}

// One-sided Jacobi on a tall matrix (m >= n). Returns u (m x n), sigma, v (n x n)
// without sorting or sign normalisation.
inline SvdTriple jacobi_tall(const Matrix& w, const SvdOptions& opt) {
  const std::size_t n = w.cols();
  // Rows of g are the columns of w being orthogonalised; q accumulates the rotations.
  Matrix g = transpose(w);
  Matrix q = Matrix::identity(n);

  bool converged = n < 2;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = dot(g.row(i), g.row(i));
        const double beta = dot(g.row(j), g.row(j));
        const double gamma = dot(g.row(i), g.row(j));
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= opt.tolerance * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_rows(g, i, j, c, s);
        rotate_rows(q, i, j, c, s);
      }
    }
    converged = !rotated;
  }
  if (!converged) throw NumericalFailure("svd: one-sided Jacobi did not converge within the sweep cap");

  SvdTriple out;
  out.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.sigma[i] = std::sqrt(dot(g.row(i), g.row(i)));
  out.u = transpose(g);  // columns still scaled by sigma
  out.v = std::move(q);
  return out;
}

}  // namespace detail

// Singular value decomposition by one-sided Jacobi rotations.
//
// sigma is sorted non-increasing; the largest-magnitude entry of every u column is
// made non-negative. Numerically zero singular values are reported as exact zeros
// and their u columns are completed to an orthonormal set.
inline SvdTriple svd(const Matrix& w, const SvdOptions& opt = {}) {
  PRUNEKIT_REQUIRE(w.rows() > 0 && w.cols() > 0, "svd: empty matrix");
  if (!all_finite(w)) throw NumericalFailure("svd: input has non-finite entries");

  const bool tall = w.rows() >= w.cols();
  SvdTriple raw = detail::jacobi_tall(tall ? w : transpose(w), opt);
  const std::size_t m = raw.u.rows();
  const std::size_t k = raw.sigma.size();

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw.sigma[a] > raw.sigma[b]; });

  const double smax = raw.sigma[order[0]];
  const double negligible = smax * std::numeric_limits<double>::epsilon() * double(m + raw.v.cols());

  SvdTriple s;
  s.sigma.resize(k);
  s.u = Matrix(m, k);
  s.v = Matrix(k, raw.v.cols());
  std::vector<bool> filled(k, false);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = order[c];
    const double sv = raw.sigma[src];
    for (std::size_t j = 0; j < raw.v.cols(); ++j) s.v(c, j) = raw.v(src, j);
    if (sv > negligible && sv > 0.0) {
      s.sigma[c] = sv;
      for (std::size_t r = 0; r < m; ++r) s.u(r, c) = raw.u(r, src) / sv;
      filled[c] = true;
    } else {
      s.sigma[c] = 0.0;
    }
  }

  // Complete the u columns of zero singular values with unit vectors orthogonalised
  // (twice) against everything already in u.
  std::size_t basis = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (filled[c]) continue;
    for (; basis < m; ++basis) {
      std::vector<double> e(m, 0.0);
      e[basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < k; ++o) {
          if (!filled[o]) continue;
          double d = 0;
          for (std::size_t r = 0; r < m; ++r) d += s.u(r, o) * e[r];
          for (std::size_t r = 0; r < m; ++r) e[r] -= d * s.u(r, o);
        }
      }
      double nrm = 0;
      for (double x : e) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (std::size_t r = 0; r < m; ++r) s.u(r, c) = e[r] / nrm;
        filled[c] = true;
        ++basis;
        break;
      }
    }
    if (!filled[c]) throw NumericalFailure("svd: could not complete orthonormal basis");
  }

  for (std::size_t c = 0; c < k; ++c) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < m; ++r)
      if (std::abs(s.u(r, c)) > std::abs(s.u(arg, c))) arg = r;
    if (s.u(arg, c) < 0) {
      for (std::size_t r = 0; r < m; ++r) s.u(r, c) = -s.u(r, c);
      for (std::size_t j = 0; j < s.v.cols(); ++j) s.v(c, j) = -s.v(c, j);
    }
  }

  if (tall) return s;
  // w^T = u s v  =>  w = v^T s u^T; re-apply the sign convention on the new u.
  SvdTriple t;
  t.sigma = s.sigma;
  t.u = transpose(s.v);
  t.v = transpose(s.u);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < t.u.rows(); ++r)
      if (std::abs(t.u(r, c)) > std::abs(t.u(arg, c))) arg = r;
    if (t.u(arg, c) < 0) {
      for (std::size_t r = 0; r < t.u.rows(); ++r) t.u(r, c) = -t.u(r, c);
      for (std::size_t j = 0; j < t.v.cols(); ++j) t.v(c, j) = -t.v(c, j);
    }
  }
  return t;
}

// Central differences, one entry at a time.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  PRUNEKIT_REQUIRE(h > 0.0, "fd_gradient: step must be positive");
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalFailure("fd_gradient: non-finite function value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace prunekit
