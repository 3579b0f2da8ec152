#pragma once

// Non-collective estimators used as comparison points for the collective fit.

#include "ncsde/basis.hpp"
#include "ncsde/core.hpp"
#include "ncsde/engine.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace ncsde {

enum class EstimatorKind { Ps, SPs, TsvdPs, Nsde, TsvdNsde, Ncsde };

inline constexpr std::array<EstimatorKind, 6> kAllEstimators = {
    EstimatorKind::Ps,   EstimatorKind::SPs,      EstimatorKind::TsvdPs,
    EstimatorKind::Nsde, EstimatorKind::TsvdNsde, EstimatorKind::Ncsde};

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Ps: return "Ps";
    case EstimatorKind::SPs: return "S.Ps";
    case EstimatorKind::TsvdPs: return "tSVD.Ps";
    case EstimatorKind::Nsde: return "NSDE";
    case EstimatorKind::TsvdNsde: return "tSVD.NSDE";
    case EstimatorKind::Ncsde: return "NCSDE";
  }
  return "?";
}

inline bool is_low_rank(EstimatorKind k) {
  return k == EstimatorKind::TsvdPs || k == EstimatorKind::TsvdNsde || k == EstimatorKind::Ncsde;
}

struct SdfEstimate {
  Matrix values;  // frequencies x m, strictly positive
  EstimatorKind kind = EstimatorKind::Ps;
  std::optional<Coefficients> coefficients;
  std::vector<Eigen::Index> nonconverged;  // NSDE series whose Newton run hit the cap
};

inline SdfEstimate estimate_ps(const Matrix& ordinates) {
  SdfEstimate out;
  out.kind = EstimatorKind::Ps;
  out.values = floor_ordinates(ordinates);
  return out;
}

namespace detail {

// (B^T B)^{-1} B^T Y, with a 1e-8 ridge fallback.
inline Matrix least_squares_coefficients(const Matrix& basis, const Matrix& Y) {
  Matrix gram = basis.transpose() * basis;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    gram.diagonal().array() += 1e-8;
    llt.compute(gram);
    if (llt.info() != Eigen::Success)
      throw NumericalError("basis Gram matrix is singular", condition_estimate(gram));
  }
  return llt.solve(basis.transpose() * Y);
}

inline Coefficients truncated_svd(const Matrix& psi, int K) {
  if (K < 1 || K > std::min(psi.rows(), psi.cols()))
    throw DomainError("truncation rank must satisfy 1 <= K <= min(L, m)");
  Eigen::BDCSVD<Matrix> svd(psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Coefficients c;
  c.theta = svd.matrixU().leftCols(K);
  c.scores = svd.matrixV().leftCols(K) * svd.singularValues().head(K).asDiagonal();
  return c;
}

}  // namespace detail

// Coefficients of log I projected onto span(B).
inline Matrix smoothed_log_coefficients(const Matrix& ordinates, const Matrix& basis) {
  if (ordinates.rows() != basis.rows()) throw SizeError("periodogram and basis row mismatch");
  return detail::least_squares_coefficients(basis, floor_ordinates(ordinates).array().log().matrix());
}

inline SdfEstimate estimate_sps(const Matrix& ordinates, const Matrix& basis) {
  SdfEstimate out;
  out.kind = EstimatorKind::SPs;
  out.values = (basis * smoothed_log_coefficients(ordinates, basis)).array().exp().matrix();
  return out;
}

inline SdfEstimate estimate_tsvd_ps(const Matrix& ordinates, const Matrix& basis, int K) {
  SdfEstimate out;
  out.kind = EstimatorKind::TsvdPs;
  out.coefficients = detail::truncated_svd(smoothed_log_coefficients(ordinates, basis), K);
  out.values = sdf(*out.coefficients, basis);
  return out;
}

struct SeriesFit {
  Vector psi;
  bool converged = false;
  int iterations = 0;
};

// Unpenalized Whittle fit of one series on the rich basis, Newton with
// step-halving. `ridge` only stabilizes the Newton system.
inline SeriesFit fit_single_series(const Matrix& basis, const Eigen::Ref<const Vector>& ordinates,
                                   int max_iters = 200, int max_halvings = 30, double ridge = 1e-8) {
  SeriesFit out;
  out.psi = detail::least_squares_coefficients(basis, ordinates.array().log().matrix());
  Vector u = basis * out.psi;
  double f = detail::series_deviance(u, ordinates);
  for (int iter = 1; iter <= max_iters; ++iter) {
    out.iterations = iter;
    const Vector w = (ordinates.array() * (-u.array()).exp()).matrix();
    const Vector g = basis.transpose() * (Vector::Ones(w.size()) - w);
    Matrix H = detail::weighted_gram(basis, w);
    H.diagonal().array() += ridge;
    const Vector d = detail::solve_spd(H, g, "single-series");
    const double decrement = g.dot(d);
    if (decrement < 1e-16 * (std::abs(f) + 1.0)) {
      out.converged = true;
      break;
    }
    bool moved = false;
    double tau = 1.0;
    for (int h = 0; h <= max_halvings; ++h, tau *= 0.5) {
      const Vector psi = out.psi - tau * d;
      const Vector trial = basis * psi;
      const double ft = detail::series_deviance(trial, ordinates);
      if (ft < f) {
        out.psi = psi;
        u = trial;
        f = ft;
        moved = true;
        break;
      }
    }
    // A Newton direction with no descent and a negligible decrement means the
    // optimum has been reached to working precision.
    if (!moved) {
      out.converged = decrement < 1e-8 * (std::abs(f) + 1.0);
      break;
    }
  }
  return out;
}

// NSDE coefficient matrix Psi (L x m), one independent fit per series.
inline Matrix separate_coefficients(const Matrix& ordinates, const Matrix& basis,
                                    std::vector<Eigen::Index>* nonconverged = nullptr) {
  if (ordinates.rows() != basis.rows()) throw SizeError("periodogram and basis row mismatch");
  const Matrix floored = floor_ordinates(ordinates);
  Matrix psi(basis.cols(), floored.cols());
  std::vector<char> ok(static_cast<std::size_t>(floored.cols()), 1);
  parallel_for(static_cast<std::size_t>(floored.cols()), [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    SeriesFit fit = fit_single_series(basis, floored.col(col));
    psi.col(col) = fit.psi;
    ok[i] = fit.converged ? 1 : 0;
  });
  if (nonconverged) {
    nonconverged->clear();
    for (std::size_t i = 0; i < ok.size(); ++i)
      if (!ok[i]) nonconverged->push_back(static_cast<Eigen::Index>(i));
  }
  return psi;
}

inline SdfEstimate estimate_nsde(const Matrix& ordinates, const Matrix& basis) {
  SdfEstimate out;
  out.kind = EstimatorKind::Nsde;
  const Matrix psi = separate_coefficients(ordinates, basis, &out.nonconverged);
  out.values = (basis * psi).array().exp().matrix();
  return out;
}

inline SdfEstimate estimate_tsvd_nsde(const Matrix& ordinates, const Matrix& basis, int K) {
  SdfEstimate out;
  out.kind = EstimatorKind::TsvdNsde;
  const Matrix psi = separate_coefficients(ordinates, basis, &out.nonconverged);
  out.coefficients = detail::truncated_svd(psi, K);
  out.values = sdf(*out.coefficients, basis);
  return out;
}

inline SdfEstimate estimate_ncsde(const PeriodogramSet& ps, const BasisMatrix& basis, const PenaltyMatrix& R,
                                  const FitConfig& config, FitResult* fit_out = nullptr) {
  FitResult r = fit(ps, basis, R, config);
  SdfEstimate out;
  out.kind = EstimatorKind::Ncsde;
  out.coefficients = r.coefficients;
  out.values = sdf(r.coefficients, basis.values);
  if (fit_out) *fit_out = std::move(r);
  return out;
}

}  // namespace ncsde
