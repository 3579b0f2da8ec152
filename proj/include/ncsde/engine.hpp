#pragma once

// Collective spectral density estimation. All m log-SDFs share K adaptive
// basis functions living in the span of a fixed rich basis B:
//
//   U = B * Theta * A^T      (frequencies x series)
//
// Theta (L x K) and A (m x K) are fitted by minimizing the Whittle deviance
//
//   sum_i sum_j { u_ij + I_ij exp(-u_ij) }  +  lambda * tr(Theta^T R Theta)
//
// with alternating blockwise Newton steps (one block per row of A, one block
// per column of Theta) and step-halving.

#include "ncsde/basis.hpp"
#include "ncsde/core.hpp"
#include "ncsde/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ncsde {

// Ordinates are floored at this fraction of the per-series maximum before any
// log or exp(-u) * I product.
inline constexpr double kFloorRatio = 1e-12;

inline Matrix floor_ordinates(const Matrix& ordinates) {
  Matrix out = ordinates;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double peak = out.col(c).maxCoeff();
    const double eps = peak > 0.0 ? kFloorRatio * peak
                                  : std::numeric_limits<double>::min();
    out.col(c) = out.col(c).cwiseMax(eps);
  }
  return out;
}

struct Coefficients {
  Matrix theta;   // L x K basis weights
  Matrix scores;  // m x K, row i holds alpha_i

  Eigen::Index K() const { return theta.cols(); }
  Eigen::Index L() const { return theta.rows(); }
  Eigen::Index m() const { return scores.rows(); }
};

enum class LambdaMode { fixed, automatic, aic_grid };

struct LambdaSetting {
  LambdaMode mode = LambdaMode::automatic;
  double value = 1.0;         // fixed value, or starting value in automatic mode
  std::vector<double> grid;   // candidates for aic_grid
};

struct FitConfig {
  int K = 3;
  LambdaSetting lambda;
  int max_outer_iters = 500;
  double tol = 1e-8;
  int max_halvings = 30;
  double init_ridge = 1e-8;
  double lambda_min = 1e-8;
  double lambda_max = 1e8;
  // Automatic mode also requires the relative lambda change to drop below this.
  double lambda_tol = 1e-5;

  void validate(Eigen::Index L, Eigen::Index m) const {
    if (K < 1 || K > std::min(L, m))
      throw DomainError("K must satisfy 1 <= K <= min(L, m) = " +
                        std::to_string(std::min(L, m)) + ", got " + std::to_string(K));
    if (max_outer_iters < 1) throw DomainError("max_outer_iters must be positive");
    if (!(tol > 0.0)) throw DomainError("tol must be positive");
    if (max_halvings < 0) throw DomainError("max_halvings must be non-negative");
    switch (lambda.mode) {
      case LambdaMode::fixed:
        if (!(lambda.value >= 0.0) || !std::isfinite(lambda.value))
          throw DomainError("fixed lambda must be finite and >= 0");
        break;
      case LambdaMode::automatic:
        if (!(lambda.value > 0.0) || !std::isfinite(lambda.value))
          throw DomainError("starting lambda must be finite and > 0");
        break;
      case LambdaMode::aic_grid:
        if (lambda.grid.empty()) throw DomainError("lambda grid is empty");
        for (double v : lambda.grid)
          if (!(v >= 0.0) || !std::isfinite(v))
            throw DomainError("lambda grid values must be finite and >= 0");
        break;
    }
  }
};

struct FitProgress {
  int iteration = 0;
  double objective = 0.0;
  double lambda = 0.0;
};

struct FitResult {
  Coefficients coefficients;  // canonical form
  Coefficients raw;           // the parameterization `lambda` and `df` refer to
  std::vector<double> lambda_trace;
  std::vector<double> objective_trace;
  double lambda = 0.0;
  double deviance = 0.0;
  double df = 0.0;
  double aic = 0.0;
  bool converged = false;
  int iterations = 0;
  long skipped_blocks = 0;
  bool canonical_ties = false;
  std::vector<std::pair<double, double>> aic_grid;  // (lambda, AIC), grid mode only
};

struct BlockDerivatives {
  Vector gradient;
  Matrix hessian;
};

namespace detail {

// Deviance sum_j u_j + I_j exp(-u_j) of one series; +inf when not finite.
inline double series_deviance(const Eigen::Ref<const Vector>& u,
                              const Eigen::Ref<const Vector>& ordinates) {
  const double v = (u.array() + ordinates.array() * (-u.array()).exp()).sum();
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

inline double matrix_deviance(const Matrix& U, const Matrix& ordinates) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < U.cols(); ++i) total += series_deviance(U.col(i), ordinates.col(i));
  return total;
}

inline void check_shapes(const Coefficients& c, const Matrix& basis, const Matrix& ordinates) {
  if (c.theta.rows() != basis.cols())
    throw SizeError("Theta has " + std::to_string(c.theta.rows()) + " rows but basis has " +
                    std::to_string(basis.cols()) + " functions");
  if (c.scores.cols() != c.theta.cols()) throw SizeError("Theta and A disagree on K");
  if (ordinates.rows() != basis.rows())
    throw SizeError("periodogram and basis disagree on the number of frequencies");
  if (ordinates.cols() != c.scores.rows())
    throw SizeError("periodogram and A disagree on the number of series");
}

inline double condition_estimate(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (ev.size() == 0) return 0.0;
  const double lo = ev.minCoeff(), hi = ev.maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

// Cholesky solve; one retry with 1e-8 * mean(diag) jitter.
inline Vector solve_spd(const Matrix& H, const Vector& g, const char* what) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  Matrix jittered = H;
  const double jitter = 1e-8 * std::max(H.diagonal().mean(), 1e-300);
  jittered.diagonal().array() += jitter;
  llt.compute(jittered);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  throw NumericalError(std::string("singular ") + what + " Hessian", condition_estimate(H));
}

// B^T diag(w) B.
inline Matrix weighted_gram(const Matrix& basis, const Vector& w) {
  return basis.transpose() * w.asDiagonal() * basis;
}

}  // namespace detail

inline double penalty_trace(const Matrix& theta, const PenaltyMatrix& R) {
  return (theta.transpose() * R.values * theta).trace();
}

inline Matrix log_sdf(const Coefficients& c, const Matrix& basis) {
  if (c.theta.rows() != basis.cols()) throw SizeError("Theta does not match the basis");
  return basis * c.theta * c.scores.transpose();
}

inline Matrix sdf(const Coefficients& c, const Matrix& basis) {
  return log_sdf(c, basis).array().exp().matrix();
}

// Whittle deviance. `ordinates` should already be floored.
inline double whittle_deviance(const Coefficients& c, const Matrix& basis, const Matrix& ordinates) {
  detail::check_shapes(c, basis, ordinates);
  const Matrix U = log_sdf(c, basis);
  double total = 0.0;
  for (Eigen::Index i = 0; i < U.cols(); ++i) {
    for (Eigen::Index j = 0; j < U.rows(); ++j) {
      const double term = U(j, i) + ordinates(j, i) * std::exp(-U(j, i));
      if (!std::isfinite(term))
        throw EvaluationError("non-finite Whittle term at series " + std::to_string(i) +
                                  ", frequency " + std::to_string(j),
                              static_cast<long>(i), static_cast<long>(j));
      total += term;
    }
  }
  return total;
}

inline double penalized_objective(const Coefficients& c, const Matrix& basis, const Matrix& ordinates,
                                  const PenaltyMatrix& R, double lambda) {
  if (lambda < 0.0) throw DomainError("lambda must be >= 0");
  return whittle_deviance(c, basis, ordinates) + lambda * penalty_trace(c.theta, R);
}

// Gradient and Hessian of the deviance in alpha_i.
inline BlockDerivatives alpha_gradient_hessian(Eigen::Index i, const Coefficients& c,
                                               const Matrix& basis, const Matrix& ordinates) {
  detail::check_shapes(c, basis, ordinates);
  if (i < 0 || i >= c.m()) throw SizeError("series index out of range");
  const Matrix phi = basis * c.theta;
  const Vector u = phi * c.scores.row(i).transpose();
  const Vector w = (ordinates.col(i).array() * (-u.array()).exp()).matrix();
  if (!w.allFinite())
    throw EvaluationError("non-finite weight for series " + std::to_string(i), static_cast<long>(i), -1);
  BlockDerivatives out;
  out.gradient = phi.transpose() * (Vector::Ones(w.size()) - w);
  out.hessian = phi.transpose() * w.asDiagonal() * phi;
  return out;
}

// Gradient and Hessian of the penalized objective in theta_k.
inline BlockDerivatives theta_gradient_hessian(Eigen::Index k, const Coefficients& c,
                                               const Matrix& basis, const Matrix& ordinates,
                                               const PenaltyMatrix& R, double lambda) {
  detail::check_shapes(c, basis, ordinates);
  if (k < 0 || k >= c.K()) throw SizeError("basis index out of range");
  const Matrix U = log_sdf(c, basis);
  const Matrix W = (ordinates.array() * (-U.array()).exp()).matrix();
  if (!W.allFinite()) throw EvaluationError("non-finite weight in theta block", -1, -1);
  const Vector a = c.scores.col(k);
  const Vector residual = (Matrix::Ones(W.rows(), W.cols()) - W) * a;
  const Vector weight = W * a.array().square().matrix();
  BlockDerivatives out;
  out.gradient = basis.transpose() * residual + 2.0 * lambda * R.values * c.theta.col(k);
  out.hessian = detail::weighted_gram(basis, weight) + 2.0 * lambda * R.values;
  return out;
}

// Projection of log-periodograms onto span(B) followed by a rank-K SVD.
inline Coefficients initialize(const Matrix& basis, const Matrix& ordinates, int K, double ridge) {
  if (K < 1 || K > std::min(basis.cols(), ordinates.cols()))
    throw DomainError("K must satisfy 1 <= K <= min(L, m)");
  if (ordinates.rows() != basis.rows()) throw SizeError("periodogram and basis row mismatch");
  Matrix gram = basis.transpose() * basis;
  gram.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success)
    throw NumericalError("basis Gram matrix is singular even with ridge",
                         detail::condition_estimate(gram));
  const Matrix psi = llt.solve(basis.transpose() * ordinates.array().log().matrix());
  Eigen::BDCSVD<Matrix> svd(psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Coefficients c;
  c.theta = svd.matrixU().leftCols(K);
  c.scores = svd.matrixV().leftCols(K) * svd.singularValues().head(K).asDiagonal();
  return c;
}

// df = sum_k trace{ (H_k + 2 lambda R)^{-1} H_k }.
inline double degrees_of_freedom(const Coefficients& c, const Matrix& basis, const Matrix& ordinates,
                                 const PenaltyMatrix& R, double lambda) {
  detail::check_shapes(c, basis, ordinates);
  if (lambda < 0.0) throw DomainError("lambda must be >= 0");
  const Matrix U = log_sdf(c, basis);
  const Matrix W = (ordinates.array() * (-U.array()).exp()).matrix();
  double df = 0.0;
  for (Eigen::Index k = 0; k < c.K(); ++k) {
    const Vector weight = W * c.scores.col(k).array().square().matrix();
    const Matrix H = detail::weighted_gram(basis, weight);
    if (lambda == 0.0) {
      Eigen::LLT<Matrix> llt(H);
      if (llt.info() != Eigen::Success)
        throw NumericalError("unpenalized Hessian is singular", detail::condition_estimate(H));
      df += static_cast<double>(c.L());
      continue;
    }
    Eigen::LLT<Matrix> hl(H);
    if (hl.info() == Eigen::Success) {
      // Eigenvalues of L^{-1} R L^{-T}, with H = L L^T.
      const Matrix Li = hl.matrixL().solve(Matrix::Identity(c.L(), c.L()));
      const Matrix S = Li * R.values * Li.transpose();
      Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
      const Vector mu = es.eigenvalues();
      const double cut = mu.cwiseAbs().maxCoeff() * static_cast<double>(c.L()) * 1e-13;
      for (Eigen::Index j = 0; j < mu.size(); ++j) df += mu(j) <= cut ? 1.0 : 1.0 / (1.0 + 2.0 * lambda * mu(j));
      continue;
    }
    const Matrix P = H + 2.0 * lambda * R.values;
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success)
      throw NumericalError("penalized Hessian is singular", detail::condition_estimate(P));
    df += llt.solve(H).trace();
  }
  return df;
}

inline double aic(double deviance, double df) { return 2.0 * deviance + 2.0 * df; }

struct LambdaUpdate {
  double lambda = 0.0;
  bool flagged = false;
  std::string note;
};

// lambda_new = (df(lambda_old) - (a - 1)) / tr(Theta^T R Theta).
inline LambdaUpdate update_lambda(const Coefficients& c, const Matrix& basis, const Matrix& ordinates,
                                  const PenaltyMatrix& R, double lambda_old, int order,
                                  double lambda_max = 1e8) {
  const double df = degrees_of_freedom(c, basis, ordinates, R, lambda_old);
  const double tr = penalty_trace(c.theta, R);
  LambdaUpdate out;
  if (df <= static_cast<double>(order - 1)) {
    out.lambda = lambda_old;
    out.flagged = true;
    out.note = "df <= a - 1; lambda kept";
    return out;
  }
  if (tr <= 1e-14) {
    out.lambda = lambda_max;
    out.flagged = true;
    out.note = "penalty trace vanished; lambda capped";
    return out;
  }
  out.lambda = (df - static_cast<double>(order - 1)) / tr;
  if (!std::isfinite(out.lambda) || out.lambda > lambda_max) {
    out.lambda = lambda_max;
    out.flagged = true;
    out.note = "lambda capped";
  }
  return out;
}

// Restates (Theta, A) through the SVD of Theta A^T: orthonormal Theta,
// A^T A diagonal and decreasing, first non-zero entry of every Theta column
// positive. `ties` is set when singular values coincide (relative 1e-10).
inline Coefficients canonicalize(const Coefficients& c, bool* ties = nullptr) {
  if (c.theta.cols() != c.scores.cols()) throw SizeError("Theta and A disagree on K");
  const Eigen::Index K = c.K();
  Eigen::HouseholderQR<Matrix> qt(c.theta), qa(c.scores);
  const Matrix Qt = qt.householderQ() * Matrix::Identity(c.theta.rows(), K);
  const Matrix Qa = qa.householderQ() * Matrix::Identity(c.scores.rows(), K);
  const Matrix Rt = qt.matrixQR().topRows(K).triangularView<Eigen::Upper>();
  const Matrix Ra = qa.matrixQR().topRows(K).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Matrix> svd(Rt * Ra.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector s = svd.singularValues();

  Coefficients out;
  out.theta = Qt * svd.matrixU();
  out.scores = Qa * svd.matrixV() * s.asDiagonal();

  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = 0; l < out.theta.rows(); ++l) {
      const double v = out.theta(l, k);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) {
          out.theta.col(k) *= -1.0;
          out.scores.col(k) *= -1.0;
        }
        break;
      }
    }
  }

  // Order each run of tied singular values by lexicographic Theta column.
  bool tied = false;
  const double scale = s.size() > 0 ? std::max(s(0), 1e-300) : 1.0;
  Eigen::Index start = 0;
  while (start < K) {
    Eigen::Index end = start + 1;
    while (end < K && std::abs(s(end - 1) - s(end)) <= 1e-10 * scale) ++end;
    if (end - start > 1) {
      tied = true;
      std::vector<Eigen::Index> order(static_cast<std::size_t>(end - start));
      for (Eigen::Index k = start; k < end; ++k) order[static_cast<std::size_t>(k - start)] = k;
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index l = 0; l < out.theta.rows(); ++l) {
          if (out.theta(l, a) != out.theta(l, b)) return out.theta(l, a) > out.theta(l, b);
        }
        return a < b;
      });
      const Matrix th = out.theta, sc = out.scores;
      for (Eigen::Index k = start; k < end; ++k) {
        out.theta.col(k) = th.col(order[static_cast<std::size_t>(k - start)]);
        out.scores.col(k) = sc.col(order[static_cast<std::size_t>(k - start)]);
      }
    }
    start = end;
  }
  if (ties) *ties = tied;
  return out;
}

namespace detail {

struct BlockOutcome {
  bool moved = false;
  bool stationary = false;
};

// Fixed-lambda blockwise Newton run starting from `start`.
inline FitResult run_fixed(const Matrix& basis, const Matrix& ordinates, const PenaltyMatrix& R,
                           const FitConfig& config, Coefficients coeff, double lambda, bool automatic,
                           const std::function<void(const FitProgress&)>& progress) {
  const Eigen::Index m = ordinates.cols();
  const Eigen::Index K = coeff.K();
  FitResult result;

  Matrix U = basis * coeff.theta * coeff.scores.transpose();
  auto objective_at = [&](const Matrix& u, const Matrix& theta, double lam) {
    return matrix_deviance(u, ordinates) + lam * (theta.transpose() * R.values * theta).trace();
  };
  double objective = objective_at(U, coeff.theta, lambda);
  if (!std::isfinite(objective))
    throw EvaluationError("initial objective is not finite", -1, -1);

  const double roundoff = 1e-12;
  for (int iter = 1; iter <= config.max_outer_iters; ++iter) {
    const double start_objective = result.objective_trace.empty() ? objective : result.objective_trace.back();
    long attempted = 0, failed = 0;

    // Score blocks: independent given Theta.
    const Matrix phi = basis * coeff.theta;
    std::vector<BlockOutcome> outcomes(static_cast<std::size_t>(m));
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t idx) {
      const auto i = static_cast<Eigen::Index>(idx);
      const Vector u = U.col(i);
      const auto I = ordinates.col(i);
      const Vector w = (I.array() * (-u.array()).exp()).matrix();
      const Vector g = phi.transpose() * (Vector::Ones(w.size()) - w);
      const Matrix H = phi.transpose() * w.asDiagonal() * phi;
      const Vector d = solve_spd(H, g, "score-block");
      const double f0 = series_deviance(u, I);
      const double decrement = g.dot(d);
      double tau = 1.0;
      for (int h = 0; h <= config.max_halvings; ++h, tau *= 0.5) {
        const Vector alpha = coeff.scores.row(i).transpose() - tau * d;
        const Vector trial = phi * alpha;
        if (series_deviance(trial, I) < f0) {
          coeff.scores.row(i) = alpha.transpose();
          U.col(i) = trial;
          outcomes[idx].moved = true;
          return;
        }
      }
      outcomes[idx].stationary = !(decrement > roundoff * (std::abs(f0) + 1.0));
    });
    for (const auto& o : outcomes) {
      ++attempted;
      if (!o.moved && !o.stationary) ++failed;
    }

    // Basis blocks: sequential in k.
    double current = objective_at(U, coeff.theta, lambda);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Matrix W = (ordinates.array() * (-U.array()).exp()).matrix();
      const Vector a = coeff.scores.col(k);
      const Vector residual = (Matrix::Ones(W.rows(), W.cols()) - W) * a;
      const Vector weight = W * a.array().square().matrix();
      const Vector g = basis.transpose() * residual + 2.0 * lambda * R.values * coeff.theta.col(k);
      const Matrix H = weighted_gram(basis, weight) + 2.0 * lambda * R.values;
      const Vector d = solve_spd(H, g, "basis-block");
      const Vector bd = basis * d;
      const double decrement = g.dot(d);
      const double pen_other = (coeff.theta.transpose() * R.values * coeff.theta).trace() -
                               coeff.theta.col(k).dot(R.values * coeff.theta.col(k));
      bool moved = false;
      double tau = 1.0;
      for (int h = 0; h <= config.max_halvings; ++h, tau *= 0.5) {
        const Vector theta_k = coeff.theta.col(k) - tau * d;
        const Matrix trial = U - tau * bd * a.transpose();
        const double f = matrix_deviance(trial, ordinates) +
                         lambda * (pen_other + theta_k.dot(R.values * theta_k));
        if (f < current) {
          coeff.theta.col(k) = theta_k;
          U = trial;
          current = f;
          moved = true;
          break;
        }
      }
      ++attempted;
      if (!moved && decrement > roundoff * (std::abs(current) + 1.0)) ++failed;
    }
    result.skipped_blocks += failed;
    objective = current;
    result.objective_trace.push_back(objective);
    result.lambda_trace.push_back(lambda);
    result.iterations = iter;
    if (progress) progress({iter, objective, lambda});

    if (failed == attempted)
      throw StallError("no block decreased the objective in outer iteration " + std::to_string(iter));

    const double change = std::abs(start_objective - objective) / std::max(std::abs(start_objective), 1.0);
    double lambda_change = 0.0;
    if (automatic) {
      // The update is only meaningful under Theta^T Theta = I; without it the
      // scale drifts from Theta into A and lambda follows it.
      coeff = canonicalize(coeff);
      const LambdaUpdate upd = update_lambda(coeff, basis, ordinates, R, lambda, R.order, config.lambda_max);
      const double next = std::clamp(upd.lambda, config.lambda_min, config.lambda_max);
      lambda_change = std::abs(next - lambda) / lambda;
      lambda = next;
      objective = objective_at(U, coeff.theta, lambda);
    }
    if (change < config.tol && lambda_change < config.lambda_tol) {
      result.converged = true;
      break;
    }
  }

  result.raw = coeff;
  result.lambda = lambda;
  result.deviance = matrix_deviance(U, ordinates);
  result.df = degrees_of_freedom(coeff, basis, ordinates, R, lambda);
  result.aic = aic(result.deviance, result.df);
  result.coefficients = canonicalize(coeff, &result.canonical_ties);
  return result;
}

}  // namespace detail

// Full collective fit. `start` overrides the projection initializer.
inline FitResult fit(const PeriodogramSet& periodograms, const BasisMatrix& basis, const PenaltyMatrix& R,
                     const FitConfig& config, const std::optional<Coefficients>& start = std::nullopt,
                     const std::function<void(const FitProgress&)>& progress = {}) {
  const Matrix& B = basis.values;
  if (periodograms.frequencies() != B.rows())
    throw SizeError("periodogram has " + std::to_string(periodograms.frequencies()) +
                    " frequencies but basis has " + std::to_string(B.rows()) + " rows");
  if (R.values.rows() != B.cols() || R.values.cols() != B.cols())
    throw SizeError("penalty matrix does not match the basis dimension");
  config.validate(B.cols(), periodograms.series());
  const Matrix ordinates = floor_ordinates(periodograms.ordinates);
  Coefficients init = start ? *start : initialize(B, ordinates, config.K, config.init_ridge);
  if (start) detail::check_shapes(init, B, ordinates);

  switch (config.lambda.mode) {
    case LambdaMode::fixed:
      return detail::run_fixed(B, ordinates, R, config, init, config.lambda.value, false, progress);
    case LambdaMode::automatic:
      return detail::run_fixed(B, ordinates, R, config, init,
                               std::clamp(config.lambda.value, config.lambda_min, config.lambda_max), true,
                               progress);
    case LambdaMode::aic_grid: {
      std::optional<FitResult> best;
      std::vector<std::pair<double, double>> table;
      for (double lambda : config.lambda.grid) {
        FitResult r = detail::run_fixed(B, ordinates, R, config, init, lambda, false, progress);
        table.emplace_back(lambda, r.aic);
        if (!best || r.aic < best->aic) best = std::move(r);
      }
      best->aic_grid = std::move(table);
      return *best;
    }
  }
  throw DomainError("unknown lambda mode");
}

}  // namespace ncsde
