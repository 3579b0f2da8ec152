#pragma once

// AR(3) mixture simulation and the Monte Carlo comparison harness.

#include "ncsde/baselines.hpp"
#include "ncsde/basis.hpp"
#include "ncsde/clustering.hpp"
#include "ncsde/core.hpp"
#include "ncsde/engine.hpp"
#include "ncsde/metrics.hpp"
#include "ncsde/spectral.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ncsde {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(splitmix64(master) ^ a) ^ b) ^ c);
}

// X_t = phi_1 X_{t-1} + phi_2 X_{t-2} + phi_3 X_{t-3} + e_t, e_t ~ N(0, sigma2).
class ArModel {
 public:
  ArModel(std::array<double, 3> phi, double sigma2 = 1.0) : phi_(phi), sigma2_(sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("innovation variance must be positive");
    if (!is_stationary(phi))
      throw DomainError("AR(3) model is not stationary: a root of 1 - phi1 z - phi2 z^2 - phi3 z^3 lies on or "
                        "inside the unit circle");
  }

  // Roots of the AR polynomial lie outside the unit circle exactly when the
  // companion matrix has spectral radius < 1.
  static bool is_stationary(const std::array<double, 3>& phi) {
    Eigen::Matrix3d companion;
    companion << phi[0], phi[1], phi[2], 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
    Eigen::EigenSolver<Eigen::Matrix3d> es(companion, false);
    return es.eigenvalues().cwiseAbs().maxCoeff() < 1.0 - 1e-12;
  }

  const std::array<double, 3>& phi() const { return phi_; }
  double sigma2() const { return sigma2_; }

  double sdf_at(double omega) const {
    std::complex<double> z = 1.0;
    for (int k = 0; k < 3; ++k)
      z -= phi_[static_cast<std::size_t>(k)] *
           std::exp(std::complex<double>(0.0, -2.0 * std::numbers::pi * (k + 1) * omega));
    return sigma2_ / std::norm(z);
  }

 private:
  std::array<double, 3> phi_;
  double sigma2_;
};

inline Vector true_sdf(const ArModel& model, const FrequencyGrid& grid) {
  Vector f(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j) f(j) = model.sdf_at(grid.omegas(j));
  return f;
}

inline constexpr int kBurnIn = 1000;

inline Vector ar3_generate(const ArModel& model, long n, std::uint64_t seed) {
  if (n < 1) throw SizeError("series length must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(model.sigma2()));
  const auto& phi = model.phi();
  double x1 = 0.0, x2 = 0.0, x3 = 0.0;
  Vector out(n);
  for (long t = -kBurnIn; t < n; ++t) {
    const double x = phi[0] * x1 + phi[1] * x2 + phi[2] * x3 + noise(rng);
    x3 = x2;
    x2 = x1;
    x1 = x;
    if (t >= 0) out(t) = x;
  }
  return out;
}

struct MixtureDesign {
  std::vector<ArModel> models{ArModel({0.1, 0.5, 0.1}), ArModel({0.1, 0.1, 0.5}), ArModel({0.5, 0.1, 0.1})};
  std::vector<double> probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  long n = 400;
  long m = 30;
  std::uint64_t seed = 1;

  void validate() const {
    if (models.empty() || models.size() != probs.size())
      throw DomainError("mixture needs one probability per model");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw DomainError("mixing probabilities must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("mixing probabilities must sum to 1");
    if (m < 1) throw SizeError("mixture needs at least one series");
  }
};

struct MixtureSample {
  TimeSeriesSet series;
  std::vector<int> labels;  // 1-based model index
};

inline MixtureSample generate_mixture(const MixtureDesign& design) {
  design.validate();
  std::mt19937_64 rng(derive_seed(design.seed, 0x6c6162656c73ULL));
  std::discrete_distribution<int> pick(design.probs.begin(), design.probs.end());
  std::vector<int> labels(static_cast<std::size_t>(design.m));
  for (auto& l : labels) l = pick(rng) + 1;
  Matrix values(design.n, design.m);
  for (long i = 0; i < design.m; ++i)
    values.col(i) = ar3_generate(design.models[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)] - 1)],
                                 design.n, derive_seed(design.seed, 0x736572696573ULL, static_cast<std::uint64_t>(i)));
  return {TimeSeriesSet(std::move(values)), std::move(labels)};
}

// log f for every series of a labelled sample on `grid`.
inline Matrix true_log_sdf(const MixtureDesign& design, const std::vector<int>& labels, const FrequencyGrid& grid) {
  Matrix U(grid.size(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    U.col(static_cast<Eigen::Index>(i)) =
        true_sdf(design.models[static_cast<std::size_t>(labels[i] - 1)], grid).array().log().matrix();
  return U;
}

inline int distinct_count(const std::vector<int>& labels) {
  return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

// Numbers of one estimator on one labelled sample.
struct EstimatorScore {
  EstimatorKind kind;
  double ari = 0.0;
  double angle = 0.0;
  std::vector<int> labels;
};

// Euclidean points used to cluster an estimate: rows of A for the collective
// fit, columns of log f-hat otherwise.
inline Matrix clustering_points(const SdfEstimate& est) {
  if (est.kind == EstimatorKind::Ncsde && est.coefficients) return est.coefficients->scores;
  return est.values.array().log().matrix().transpose();
}

inline std::vector<int> cluster_labels(const Matrix& points, int k) {
  return cut(ward_linkage(euclidean_distances(points)), k).labels;
}

// Angle between the leading r-dimensional column spaces of the true and the
// estimated log-SDF matrices, r = rank of the truth.
inline double log_sdf_angle(const Matrix& truth, const Matrix& estimate, Eigen::Index r) {
  return canonical_angle(dominant_subspace(truth, r), dominant_subspace(estimate, r));
}

struct StudyConfig {
  int L = 40;
  PenaltySpec penalty{};
  FitConfig fit{};  // K is overwritten by the number of models in the design
};

// All six estimates for one periodogram set.
inline std::vector<SdfEstimate> all_estimates(const PeriodogramSet& ps, const BasisMatrix& basis,
                                              const PenaltyMatrix& R, const FitConfig& fit_config,
                                              FitResult* fit_out = nullptr) {
  const int K = fit_config.K;
  std::vector<SdfEstimate> out;
  out.push_back(estimate_ps(ps.ordinates));
  out.push_back(estimate_sps(ps.ordinates, basis.values));
  out.push_back(estimate_tsvd_ps(ps.ordinates, basis.values, K));
  SdfEstimate nsde;
  nsde.kind = EstimatorKind::Nsde;
  const Matrix psi = separate_coefficients(ps.ordinates, basis.values, &nsde.nonconverged);
  nsde.values = (basis.values * psi).array().exp().matrix();
  SdfEstimate tsvd_nsde;
  tsvd_nsde.kind = EstimatorKind::TsvdNsde;
  tsvd_nsde.coefficients = detail::truncated_svd(psi, K);
  tsvd_nsde.values = sdf(*tsvd_nsde.coefficients, basis.values);
  tsvd_nsde.nonconverged = nsde.nonconverged;
  out.push_back(std::move(nsde));
  out.push_back(std::move(tsvd_nsde));
  out.push_back(estimate_ncsde(ps, basis, R, fit_config, fit_out));
  return out;
}

struct RunOutcome {
  bool excluded = false;
  std::string reason;
  std::vector<EstimatorScore> scores;
};

inline RunOutcome score_run(const MixtureDesign& design, const StudyConfig& config) {
  RunOutcome out;
  const MixtureSample sample = generate_mixture(design);
  const int groups = distinct_count(sample.labels);
  if (groups < 2) {
    out.excluded = true;
    out.reason = "single model present";
    return out;
  }
  const PeriodogramSet ps = periodogram(sample.series);
  const BasisMatrix basis = eval_basis(ps.grid, basis_for_grid(ps.grid, config.L));
  const PenaltyMatrix R = build_penalty(basis.spec, config.penalty);
  FitConfig fc = config.fit;
  fc.K = static_cast<int>(design.models.size());
  const Matrix truth = true_log_sdf(design, sample.labels, ps.grid);
  for (auto& est : all_estimates(ps, basis, R, fc)) {
    EstimatorScore s;
    s.kind = est.kind;
    s.labels = cluster_labels(clustering_points(est), groups);
    s.ari = adjusted_rand_index(sample.labels, s.labels);
    s.angle = log_sdf_angle(truth, est.values.array().log().matrix(), groups);
    out.scores.push_back(std::move(s));
  }
  return out;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Welford accumulator.
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  long count() const { return n_; }
  MeanSe summary() const {
    MeanSe s;
    s.mean = mean_;
    s.se = n_ > 1 ? std::sqrt(m2_ / static_cast<double>(n_ - 1)) / std::sqrt(static_cast<double>(n_)) : 0.0;
    return s;
  }

 private:
  long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct EstimatorSummary {
  EstimatorKind kind;
  MeanSe ari;
  MeanSe angle;
};

struct CellReport {
  long n = 0;
  long m = 0;
  int runs = 0;       // attempted
  int used = 0;       // contributed to the summaries
  int excluded = 0;   // degenerate designs (a single model drawn)
  int failed = 0;     // numerical failures
  std::vector<std::string> failures;
  std::vector<EstimatorSummary> estimators;
};

struct StudyReport {
  std::uint64_t seed = 0;
  int runs = 0;
  std::vector<CellReport> cells;
};

// The nine (n, m) pairs of the reference design.
inline std::vector<std::pair<long, long>> default_cells() {
  std::vector<std::pair<long, long>> cells;
  for (long n : {100L, 200L, 400L})
    for (long m : {6L, 15L, 30L}) cells.emplace_back(n, m);
  return cells;
}

inline StudyReport run_study(const std::vector<std::pair<long, long>>& cells, int runs, std::uint64_t seed,
                             const StudyConfig& config = {}, MixtureDesign base = {}) {
  if (runs < 2) throw DomainError("a study needs at least 2 runs per cell");
  StudyReport report;
  report.seed = seed;
  report.runs = runs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [n, m] = cells[c];
    std::vector<RunOutcome> outcomes(static_cast<std::size_t>(runs));
    std::vector<std::string> errors(static_cast<std::size_t>(runs));
    parallel_for(static_cast<std::size_t>(runs), [&](std::size_t r) {
      MixtureDesign design = base;
      design.n = n;
      design.m = m;
      design.seed = derive_seed(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(m), r);
      try {
        outcomes[r] = score_run(design, config);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    });
    CellReport cell;
    cell.n = n;
    cell.m = m;
    cell.runs = runs;
    std::vector<RunningStats> ari(kAllEstimators.size()), angle(kAllEstimators.size());
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (!errors[r].empty()) {
        ++cell.failed;
        cell.failures.push_back("run " + std::to_string(r) + ": " + errors[r]);
        continue;
      }
      if (outcomes[r].excluded) {
        ++cell.excluded;
        continue;
      }
      ++cell.used;
      for (std::size_t e = 0; e < outcomes[r].scores.size(); ++e) {
        ari[e].add(outcomes[r].scores[e].ari);
        angle[e].add(outcomes[r].scores[e].angle);
      }
    }
    for (std::size_t e = 0; e < kAllEstimators.size(); ++e)
      cell.estimators.push_back({kAllEstimators[e], ari[e].summary(), angle[e].summary()});
    report.cells.push_back(std::move(cell));
  }
  return report;
}

}  // namespace ncsde
