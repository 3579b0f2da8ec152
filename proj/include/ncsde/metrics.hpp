#pragma once

#include "ncsde/core.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace ncsde {

class RankError : public Error {
 public:
  RankError(const std::string& what, Eigen::Index rank) : Error(what), rank_(rank) {}
  Eigen::Index rank() const { return rank_; }

 private:
  Eigen::Index rank_;
};

// Hubert-Arabie adjusted Rand index. Not clamped: worse-than-chance
// agreement is negative. Evaluated as one quotient of exact integers.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size())
    throw SizeError("label vectors differ in length (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  if (a.size() < 2) throw SizeError("adjusted Rand index needs at least 2 labels");
  auto choose2 = [](std::int64_t x) { return x * (x - 1) / 2; };
  std::map<std::pair<int, int>, std::int64_t> cells;
  std::map<int, std::int64_t> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cells[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  std::int64_t index = 0, sum_a = 0, sum_b = 0;
  for (const auto& [key, n] : cells) index += choose2(n);
  for (const auto& [key, n] : rows) sum_a += choose2(n);
  for (const auto& [key, n] : cols) sum_b += choose2(n);
  const std::int64_t pairs = choose2(static_cast<std::int64_t>(a.size()));
  // ARI = (index - sa*sb/P) / ((sa+sb)/2 - sa*sb/P), scaled by 2P.
  const std::int64_t numerator = 2 * pairs * index - 2 * sum_a * sum_b;
  const std::int64_t denominator = pairs * (sum_a + sum_b) - 2 * sum_a * sum_b;
  if (denominator == 0) return numerator == 0 ? 1.0 : 0.0;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

// Orthonormal basis of the column space via Householder QR; throws RankError
// when the matrix is numerically rank deficient.
inline Matrix orthonormal_columns(const Matrix& X, double tol = 1e-10) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(tol);
  const Eigen::Index rank = qr.rank();
  if (rank < X.cols())
    throw RankError("matrix has numerical rank " + std::to_string(rank) + " < " + std::to_string(X.cols()),
                    rank);
  Eigen::HouseholderQR<Matrix> plain(X);
  return plain.householderQ() * Matrix::Identity(X.rows(), X.cols());
}

// Largest principal angle (degrees) between the column spaces of U and Uhat.
inline double canonical_angle(const Matrix& U, const Matrix& Uhat) {
  if (U.rows() != Uhat.rows()) throw SizeError("subspace matrices differ in row count");
  const Matrix Q = orthonormal_columns(U);
  const Matrix Qhat = orthonormal_columns(Uhat);
  Eigen::JacobiSVD<Matrix> svd(Qhat.transpose() * Q);
  const double rho = std::clamp(svd.singularValues().minCoeff(), 0.0, 1.0);
  return std::acos(rho) * 180.0 / std::numbers::pi;
}

// Leading r-dimensional left singular subspace of X (frequencies x series).
inline Matrix dominant_subspace(const Matrix& X, Eigen::Index r) {
  if (r < 1 || r > std::min(X.rows(), X.cols())) throw SizeError("subspace dimension out of range");
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r);
}

}  // namespace ncsde
