#pragma once

#include "ncsde/core.hpp"
#include "ncsde/spectral.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ncsde {

// Clamped B-spline basis with equally spaced interior knots on [lo, hi].
struct BasisSpec {
  int L = 40;
  int degree = 3;
  double lo = 0.0;
  double hi = 0.5;

  void validate() const {
    if (degree < 0) throw DomainError("spline degree must be non-negative");
    if (L < degree + 1)
      throw SizeError("need L >= degree + 1 basis functions, got L=" +
                      std::to_string(L));
    if (!(lo < hi)) throw DomainError("basis domain requires lo < hi");
  }

  // Full knot vector, length L + degree + 1.
  std::vector<double> knots() const {
    validate();
    const int segments = L - degree;
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(L + degree + 1));
    for (int i = 0; i <= degree; ++i) t.push_back(lo);
    for (int i = 1; i < segments; ++i)
      t.push_back(lo + (hi - lo) * static_cast<double>(i) / segments);
    for (int i = 0; i <= degree; ++i) t.push_back(hi);
    return t;
  }
};

enum class PenaltyKind { second_derivative, difference };

inline std::string to_string(PenaltyKind k) {
  return k == PenaltyKind::second_derivative ? "second_derivative"
                                             : "difference";
}

inline PenaltyKind penalty_kind_from_string(const std::string& s) {
  if (s == "second_derivative" || s == "d2") return PenaltyKind::second_derivative;
  if (s == "difference" || s == "diff") return PenaltyKind::difference;
  throw DomainError("unknown penalty kind '" + s + "'");
}

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::second_derivative;
  int order = 2;  // ignored for second_derivative (always 2)
};

struct BasisMatrix {
  Matrix values;  // frequencies x L
  BasisSpec spec;
  FrequencyGrid grid;
};

struct PenaltyMatrix {
  Matrix values;  // L x L, symmetric PSD
  PenaltyKind kind = PenaltyKind::second_derivative;
  int order = 2;
};

namespace detail {

// Knot span s with t[s] <= x < t[s+1]; the right end maps to the last span.
inline int find_span(const std::vector<double>& t, int degree, int L, double x) {
  if (x >= t[static_cast<std::size_t>(L)]) return L - 1;
  int low = degree, high = L;
  while (high - low > 1) {
    const int mid = (low + high) / 2;
    if (x < t[static_cast<std::size_t>(mid)]) high = mid; else low = mid;
  }
  return low;
}

// Non-zero basis functions and their derivatives up to `nd` at x
// (Piegl & Tiller, algorithm A2.3). Row k holds the k-th derivatives of
// b_{span-degree} .. b_{span}.
inline Matrix basis_derivatives(const std::vector<double>& t, int degree,
                                int span, double x, int nd) {
  const int p = degree;
  Matrix ndu(p + 1, p + 1);
  std::vector<double> left(static_cast<std::size_t>(p + 1)),
      right(static_cast<std::size_t>(p + 1));
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t[static_cast<std::size_t>(span + 1 - j)];
    right[j] = t[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  Matrix ders = Matrix::Zero(nd + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  Matrix a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

}  // namespace detail

// Row vector (b_1(x), ..., b_L(x))^(derivative).
inline Vector basis_row(const BasisSpec& spec, double x, int derivative = 0) {
  spec.validate();
  if (!(x >= spec.lo && x <= spec.hi))
    throw DomainError("point " + std::to_string(x) + " outside basis domain");
  const auto t = spec.knots();
  const int span = detail::find_span(t, spec.degree, spec.L, x);
  Vector row = Vector::Zero(spec.L);
  if (derivative > spec.degree) return row;
  const Matrix ders = detail::basis_derivatives(t, spec.degree, span, x, derivative);
  for (int j = 0; j <= spec.degree; ++j) row(span - spec.degree + j) = ders(derivative, j);
  return row;
}

// B(j, l) = b_l(omega_j), Cox-de Boor recursion.
inline BasisMatrix eval_basis(const FrequencyGrid& grid, const BasisSpec& spec) {
  spec.validate();
  const auto t = spec.knots();
  BasisMatrix out;
  out.spec = spec;
  out.grid = grid;
  out.values = Matrix::Zero(grid.size(), spec.L);
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    const double x = grid.omegas(j);
    if (!(x >= spec.lo && x <= spec.hi))
      throw DomainError("frequency " + std::to_string(x) +
                        " outside basis domain [" + std::to_string(spec.lo) +
                        ", " + std::to_string(spec.hi) + "]");
    const int span = detail::find_span(t, spec.degree, spec.L, x);
    const Matrix ders = detail::basis_derivatives(t, spec.degree, span, x, 0);
    for (int k = 0; k <= spec.degree; ++k)
      out.values(j, span - spec.degree + k) = ders(0, k);
  }
  return out;
}

// R1 = integral of b''(w) b''(w)^T over the domain, Gauss-Legendre per span.
inline PenaltyMatrix second_derivative_penalty(const BasisSpec& spec) {
  spec.validate();
  if (spec.degree < 2)
    throw DomainError("second-derivative penalty needs degree >= 2");
  using rule = boost::math::quadrature::gauss<double, 10>;
  // Expand the symmetric half-rule into nodes on [-1, 1].
  std::vector<std::pair<double, double>> nodes;
  for (std::size_t i = 0; i < rule::abscissa().size(); ++i) {
    const double x = rule::abscissa()[i], w = rule::weights()[i];
    nodes.emplace_back(x, w);
    if (x != 0.0) nodes.emplace_back(-x, w);
  }
  const auto t = spec.knots();
  const int p = spec.degree;
  PenaltyMatrix out;
  out.kind = PenaltyKind::second_derivative;
  out.order = 2;
  out.values = Matrix::Zero(spec.L, spec.L);
  for (int span = p; span < spec.L; ++span) {
    const double a = t[static_cast<std::size_t>(span)],
                 b = t[static_cast<std::size_t>(span + 1)];
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    Matrix local = Matrix::Zero(p + 1, p + 1);
    for (const auto& [x, w] : nodes) {
      const Matrix ders = detail::basis_derivatives(t, p, span, mid + half * x, 2);
      const Vector d2 = ders.row(2).transpose();
      local.noalias() += (w * half) * d2 * d2.transpose();
    }
    out.values.block(span - p, span - p, p + 1, p + 1) += local;
  }
  out.values = 0.5 * (out.values + out.values.transpose()).eval();
  return out;
}

// (L - a) x L matrix of a-th order differences, built by repeatedly applying
// the first-difference stencil (1, -1).
inline Matrix difference_matrix(int L, int a) {
  if (a < 1 || a >= L)
    throw SizeError("difference order must satisfy 1 <= a < L (a=" +
                    std::to_string(a) + ", L=" + std::to_string(L) + ")");
  Matrix D = Matrix::Identity(L, L);
  for (int step = 0; step < a; ++step) {
    const Eigen::Index r = D.rows();
    Matrix next(r - 1, L);
    for (Eigen::Index i = 0; i + 1 < r; ++i) next.row(i) = D.row(i) - D.row(i + 1);
    D = std::move(next);
  }
  return D;
}

inline PenaltyMatrix difference_penalty(int L, int a) {
  const Matrix D = difference_matrix(L, a);
  PenaltyMatrix out;
  out.kind = PenaltyKind::difference;
  out.order = a;
  out.values = D.transpose() * D;
  return out;
}

inline PenaltyMatrix build_penalty(const BasisSpec& spec, const PenaltySpec& pen) {
  return pen.kind == PenaltyKind::second_derivative
             ? second_derivative_penalty(spec)
             : difference_penalty(spec.L, pen.order);
}

// Default basis for a periodogram grid: [0, 1/2], or [0, last frequency] when
// the grid was band-truncated.
inline BasisSpec basis_for_grid(const FrequencyGrid& grid, int L = 40, int degree = 3) {
  BasisSpec spec;
  spec.L = L;
  spec.degree = degree;
  spec.lo = 0.0;
  const long full = (grid.source_n - 1) / 2;
  spec.hi = (grid.size() < full && grid.size() > 0) ? grid.omegas(grid.size() - 1) : 0.5;
  return spec;
}

}  // namespace ncsde
