// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "ncsde/baselines.hpp"
#include "ncsde/basis.hpp"
#include "ncsde/clustering.hpp"
#include "ncsde/engine.hpp"
#include "ncsde/metrics.hpp"
#include "ncsde/simulate.hpp"
#include "ncsde/spectral.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>

using namespace ncsde;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

struct Problem {
  Matrix basis;
  Matrix ordinates;
  PenaltyMatrix R;
  Coefficients c;
};

Problem random_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const long n = 60 + static_cast<long>(seed % 5) * 10;
  const int L = 8 + static_cast<int>(seed % 4);
  const int K = 1 + static_cast<int>(seed % 3);
  const int m = 5 + static_cast<int>(seed % 4);
  const FrequencyGrid g = fourier_grid(n);
  const BasisMatrix B = eval_basis(g, basis_for_grid(g, L));
  Problem p;
  p.basis = B.values;
  p.R = seed % 2 ? second_derivative_penalty(B.spec) : difference_penalty(L, 2);
  p.c.theta = oracle::random_matrix(L, K, rng, 0.5);
  p.c.scores = oracle::random_matrix(m, K, rng, 0.5);
  std::exponential_distribution<double> e(1.0);
  const Matrix U = log_sdf(p.c, p.basis);
  p.ordinates.resize(U.rows(), U.cols());
  for (Eigen::Index i = 0; i < U.rows(); ++i)
    for (Eigen::Index j = 0; j < U.cols(); ++j) p.ordinates(i, j) = std::exp(U(i, j)) * e(rng);
  p.ordinates = floor_ordinates(p.ordinates);
  p.c.theta += oracle::random_matrix(L, K, rng, 0.2);
  p.c.scores += oracle::random_matrix(m, K, rng, 0.2);
  return p;
}

void gradient_hessian() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_g = 0.0, worst_h = 0.0;
  const double h = 1e-5;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Problem p = random_problem(seed);
    const double lambda = 0.3 * static_cast<double>(seed);
    const Eigen::Index i = static_cast<Eigen::Index>(seed) % p.c.m();
    const Eigen::Index k = static_cast<Eigen::Index>(seed) % p.c.K();
    const BlockDerivatives da = alpha_gradient_hessian(i, p.c, p.basis, p.ordinates);
    Vector ga(p.c.K());
    Matrix ha(p.c.K(), p.c.K());
    for (Eigen::Index q = 0; q < p.c.K(); ++q) {
      Coefficients plus = p.c, minus = p.c;
      plus.scores(i, q) += h;
      minus.scores(i, q) -= h;
      ga(q) = (whittle_deviance(plus, p.basis, p.ordinates) - whittle_deviance(minus, p.basis, p.ordinates)) / (2 * h);
      ha.col(q) = (alpha_gradient_hessian(i, plus, p.basis, p.ordinates).gradient -
                   alpha_gradient_hessian(i, minus, p.basis, p.ordinates).gradient) / (2 * h);
    }
    const BlockDerivatives dt = theta_gradient_hessian(k, p.c, p.basis, p.ordinates, p.R, lambda);
    Vector gt(p.c.L());
    Matrix ht(p.c.L(), p.c.L());
    for (Eigen::Index l = 0; l < p.c.L(); ++l) {
      Coefficients plus = p.c, minus = p.c;
      plus.theta(l, k) += h;
      minus.theta(l, k) -= h;
      gt(l) = (penalized_objective(plus, p.basis, p.ordinates, p.R, lambda) -
               penalized_objective(minus, p.basis, p.ordinates, p.R, lambda)) / (2 * h);
      ht.col(l) = (theta_gradient_hessian(k, plus, p.basis, p.ordinates, p.R, lambda).gradient -
                   theta_gradient_hessian(k, minus, p.basis, p.ordinates, p.R, lambda).gradient) / (2 * h);
    }
    worst_g = std::max({worst_g, rel(da.gradient, ga), rel(dt.gradient, gt)});
    worst_h = std::max({worst_h, rel(da.hessian, ha), rel(dt.hessian, ht)});
  }
  const double secs = seconds_since(t0);
  report(worst_g < 1e-5 && worst_h < 1e-4 && secs < 30.0, "gradient-hessian",
         fmt("20 configs, max rel err gradient %.2e (< 1e-5), Hessian %.2e (< 1e-4), %.1f s", worst_g, worst_h, secs));
}

void descent() {
  int violations = 0, steps = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    MixtureDesign d;
    d.n = 128 + 16 * static_cast<long>(seed % 4);
    d.m = 8;
    d.seed = seed;
    const PeriodogramSet ps = periodogram(generate_mixture(d).series);
    const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, 15));
    const PenaltyMatrix R = seed % 2 ? second_derivative_penalty(B.spec) : difference_penalty(15, 2);
    FitConfig cfg;
    cfg.K = 1 + static_cast<int>(seed % 3);
    cfg.lambda.mode = LambdaMode::fixed;
    cfg.lambda.value = std::pow(10.0, static_cast<double>(seed % 5) - 2.0);
    cfg.max_outer_iters = 60;
    const Matrix I = floor_ordinates(ps.ordinates);
    double previous =
        penalized_objective(initialize(B.values, I, cfg.K, cfg.init_ridge), B.values, I, R, cfg.lambda.value);
    fit(ps, B, R, cfg, std::nullopt, [&](const FitProgress& p) {
      ++steps;
      if (p.objective > previous) ++violations;
      previous = p.objective;
    });
  }
  report(violations == 0, "descent", fmt("50 fixed-lambda fits, %d outer steps, %d violations", steps, violations));
}

void parseval_fft() {
  double worst_dft = 0.0, worst_parseval = 0.0;
  for (long n = 8; n <= 256; ++n) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(n));
    const Vector x = demean(TimeSeriesSet(oracle::random_matrix(n, 1, rng))).values().col(0);
    const Vector fast = full_periodogram(x);
    const Vector slow = oracle::naive_periodogram(x);
    worst_dft = std::max(worst_dft, (fast - slow).cwiseAbs().maxCoeff() / slow.maxCoeff());
    worst_parseval = std::max(worst_parseval, std::abs(fast.sum() - x.squaredNorm()) / x.squaredNorm());
  }
  report(worst_dft < 1e-10 && worst_parseval < 1e-10, "parseval-fft",
         fmt("n = 8..256, max rel diff FFT vs DFT %.2e, Parseval %.2e (< 1e-10)", worst_dft, worst_parseval));
}

void canonicalization() {
  std::mt19937_64 rng(42);
  double idem = 0.0, product = 0.0, collapse = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index L = 5 + trial % 7, m = 4 + trial % 9;
    const Eigen::Index K = 1 + trial % std::min<Eigen::Index>(4, std::min(L, m));
    Coefficients c;
    c.theta = oracle::random_matrix(L, K, rng);
    c.scores = oracle::random_matrix(m, K, rng);
    const Coefficients k1 = canonicalize(c);
    const Coefficients k2 = canonicalize(k1);
    idem = std::max({idem, (k2.theta - k1.theta).cwiseAbs().maxCoeff(), (k2.scores - k1.scores).cwiseAbs().maxCoeff()});
    product = std::max(product, (k1.theta * k1.scores.transpose() - c.theta * c.scores.transpose()).cwiseAbs().maxCoeff());
    Matrix U = oracle::random_matrix(K, K, rng);
    U.diagonal().array() += 3.0;
    Coefficients moved;
    moved.theta = c.theta * U;
    moved.scores = c.scores * U.inverse().transpose();
    const Coefficients k3 = canonicalize(moved);
    collapse = std::max({collapse, (k3.theta - k1.theta).cwiseAbs().maxCoeff(),
                         (k3.scores - k1.scores).cwiseAbs().maxCoeff() / std::max(1.0, k1.scores.norm())});
  }
  report(idem < 1e-10 && product < 1e-10 && collapse < 1e-8, "canonicalization",
         fmt("100 inputs, idempotence %.2e, product %.2e (< 1e-10), class collapse %.2e", idem, product, collapse));
}

void ari_and_angle() {
  std::mt19937_64 rng(123);
  int ari_mismatch = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 2 + static_cast<std::size_t>(t % 11);
    std::uniform_int_distribution<int> ka(1, 1 + t % 5), kb(1, 1 + (t / 5) % 5);
    std::vector<int> a(m), b(m);
    for (auto& x : a) x = ka(rng);
    for (auto& x : b) x = kb(rng);
    if (adjusted_rand_index(a, b) != oracle::pair_count_ari(a, b)) ++ari_mismatch;
  }
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 8 + t % 30, r = 1 + t % 4;
    const Matrix U = oracle::random_matrix(n, r, rng);
    Matrix V = oracle::random_matrix(n, r, rng);
    if (t % 3 == 0) V = U + 0.05 * V;
    worst = std::max(worst, std::abs(canonical_angle(U, V) - oracle::principal_angle(U, V)));
  }
  report(ari_mismatch == 0 && worst < 1e-8, "ari-angle-oracles",
         fmt("ARI exact mismatches %d/200; max angle diff %.2e deg (< 1e-8)", ari_mismatch, worst));
}

void ward_wss_df() {
  std::mt19937_64 rng(17);
  int mismatched = 0, fixtures = 0;
  for (Eigen::Index m = 2; m <= 10; ++m)
    for (int rep = 0; rep < 20; ++rep) {
      ++fixtures;
      const Matrix p = oracle::random_matrix(m, 1 + rep % 4, rng);
      const Dendrogram d = ward_linkage(euclidean_distances(p));
      const auto o = oracle::naive_ward(p);
      bool same = d.merges.size() == o.size();
      for (std::size_t s = 0; same && s < o.size(); ++s)
        same = d.merges[s].left == o[s].left && d.merges[s].right == o[s].right && d.merges[s].size == o[s].size &&
               std::abs(d.merges[s].height - o[s].height) <= 1e-10 * std::max(1.0, o[s].height);
      if (!same) ++mismatched;
    }
  double wss_last = 0.0;
  for (Eigen::Index m : {3, 7, 10}) wss_last = std::max(wss_last, wss_curve(oracle::random_matrix(m, 2, rng), static_cast<int>(m)).back());
  bool df_exact = true, df_monotone = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Problem p = random_problem(seed);
    df_exact = df_exact && degrees_of_freedom(p.c, p.basis, p.ordinates, p.R, 0.0) == static_cast<double>(p.c.K() * p.c.L());
    double previous = INFINITY;
    for (int e = -4; e <= 5; ++e) {
      const double df = degrees_of_freedom(p.c, p.basis, p.ordinates, p.R, std::pow(10.0, e));
      if (df > previous + 1e-10) df_monotone = false;
      previous = df;
    }
  }
  report(mismatched == 0 && wss_last == 0.0 && df_exact && df_monotone, "ward-wss-df",
         fmt("Ward mismatches %d/%d; WSS(k=m) %.1g; df(0) = K*L %s; df monotone %s", mismatched, fixtures, wss_last,
             df_exact ? "yes" : "no", df_monotone ? "yes" : "no"));
}

void penalty_null_spaces() {
  double worst_r1 = 0.0, worst_r2 = 0.0;
  for (int L : {5, 10, 40}) {
    const BasisSpec s{L, 3, 0.0, 0.5};
    const Matrix R = second_derivative_penalty(s).values;
    const Vector one = Vector::Ones(L), lin = oracle::greville(s);
    const double scale = R.cwiseAbs().maxCoeff();
    worst_r1 = std::max({worst_r1, std::abs(one.dot(R * one)) / (scale * one.squaredNorm()),
                         std::abs(lin.dot(R * lin)) / (scale * lin.squaredNorm())});
  }
  const int L = 30;
  Vector idx(L);
  for (int l = 0; l < L; ++l) idx(l) = l;
  for (int a : {1, 2, 3}) {
    const Matrix R = difference_penalty(L, a).values;
    for (int deg = 0; deg < a; ++deg) {
      const Vector p = idx.array().pow(deg).matrix();
      worst_r2 = std::max(worst_r2, std::abs(p.dot(R * p)) / p.squaredNorm());
    }
  }
  report(worst_r1 < 1e-10 && worst_r2 < 1e-10, "penalty-null-spaces",
         fmt("R1 on constants/linears %.2e, R2 on polynomials of degree < a %.2e (< 1e-10)", worst_r1, worst_r2));
}

using Summary = std::map<std::string, EstimatorSummary>;

std::map<std::pair<long, long>, Summary> study(int runs) {
  const std::vector<std::pair<long, long>> cells{{400, 30}, {400, 15}, {100, 6}, {100, 15}, {100, 30}};
  const StudyReport rep = run_study(cells, runs, 20240601, StudyConfig{});
  std::map<std::pair<long, long>, Summary> out;
  for (const CellReport& c : rep.cells) {
    std::printf("      cell n=%ld m=%ld: used %d, excluded %d, failed %d\n", c.n, c.m, c.used, c.excluded, c.failed);
    for (const auto& f : c.failures) std::printf("      failure: %s\n", f.c_str());
    for (const auto& e : c.estimators) {
      out[{c.n, c.m}][to_string(e.kind)] = e;
      std::printf("        %-10s ARI %.3f (%.3f)  angle %6.2f (%.2f)\n", to_string(e.kind).c_str(), e.ari.mean,
                  e.ari.se, e.angle.mean, e.angle.se);
    }
  }
  std::fflush(stdout);
  return out;
}

void quantitative(int runs) {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = study(runs);
  std::printf("      study time %.1f s\n", seconds_since(t0));

  const auto& big = s[{400, 30}]["NCSDE"];
  report(big.ari.mean >= 0.95 && big.angle.mean <= 15.0, "cell-400x30",
         fmt("NCSDE ARI %.3f (>= 0.95), angle %.2f (<= 15)", big.ari.mean, big.angle.mean));

  const auto& small = s[{100, 6}]["NCSDE"];
  report(small.ari.mean >= 0.75 && small.ari.mean <= 1.0 && small.angle.mean <= 55.0, "cell-100x6",
         fmt("NCSDE ARI %.3f (in [0.75, 1]), angle %.2f (<= 55)", small.ari.mean, small.angle.mean));

  bool ok = true;
  std::string detail;
  for (long m : {15L, 30L}) {
    Summary& c = s[{400, m}];
    auto angle = [&](const char* k) { return c[k].angle.mean; };
    const bool a1 = angle("NCSDE") < angle("tSVD.NSDE") && angle("tSVD.NSDE") < angle("NSDE");
    const bool a2 = angle("NCSDE") < angle("tSVD.Ps") && angle("tSVD.Ps") < angle("Ps");
    bool a3 = true;
    for (const auto& [name, e] : c)
      if (name != "NCSDE" && e.ari.mean >= c["NCSDE"].ari.mean) a3 = false;
    ok = ok && a1 && a2 && a3;
    detail += fmt("m=%ld: NCSDE<tSVD.NSDE<NSDE %s (%.1f, %.1f, %.1f); NCSDE<tSVD.Ps<Ps %s (%.1f, %.1f, %.1f); "
                  "NCSDE ARI strictly greatest %s (NCSDE %.3f, NSDE %.3f, S.Ps %.3f)  ",
                  m, a1 ? "yes" : "no", angle("NCSDE"), angle("tSVD.NSDE"), angle("NSDE"), a2 ? "yes" : "no",
                  angle("NCSDE"), angle("tSVD.Ps"), angle("Ps"), a3 ? "yes" : "no", c["NCSDE"].ari.mean,
                  c["NSDE"].ari.mean, c["S.Ps"].ari.mean);
  }
  report(ok, "orderings-400", detail);

  const double n15 = s[{100, 15}]["NSDE"].angle.mean, n30 = s[{100, 30}]["NSDE"].angle.mean;
  report(n15 > 85.0 && n30 > 85.0, "nsde-degeneracy-100",
         fmt("NSDE angle m=15 %.2f, m=30 %.2f (both > 85)", n15, n30));
}

void elbow_three() {
  int hits = 0;
  std::map<int, int> counts;
  for (std::uint64_t rep = 1; rep <= 100; ++rep) {
    MixtureDesign d;
    d.seed = derive_seed(777, rep);
    const PeriodogramSet ps = periodogram(generate_mixture(d).series);
    const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, 40));
    const int k = select_K(ps.ordinates, B.values, 10).suggested_k;
    ++counts[k];
    if (k == 3) ++hits;
  }
  std::string hist;
  for (const auto& [k, c] : counts) hist += fmt(" k=%d:%d", k, c);
  report(hits >= 90, "elbow-three-clusters", fmt("select_K = 3 in %d/100 reps (>= 90);%s", hits, hist.c_str()));
}

void long_band_mixture() {
  const auto t0 = std::chrono::steady_clock::now();
  MixtureDesign d;
  d.models.push_back(ArModel({0.2, -0.3, 0.4}));
  d.probs = {0.25, 0.25, 0.25, 0.25};
  d.n = 8192;
  d.m = 194;
  d.seed = 4;
  const MixtureSample s = generate_mixture(d);
  const PeriodogramSet ps = truncate_band(periodogram(s.series), 3000);
  const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, 40));
  const PenaltyMatrix R = second_derivative_penalty(B.spec);
  FitConfig cfg;
  cfg.K = 4;
  FitResult r;
  const SdfEstimate e = estimate_ncsde(ps, B, R, cfg, &r);
  const double ari = adjusted_rand_index(s.labels, cluster_labels(clustering_points(e), 4));
  report(ari >= 0.9, "band-truncated-194x4",
         fmt("ARI %.3f (>= 0.9), %d iterations, converged %s, %.1f s", ari, r.iterations, r.converged ? "yes" : "no",
             seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
  int runs = 20;
  if (argc > 1) runs = std::atoi(argv[1]);
  std::printf("acceptance run, N = %d per cell\n", runs);
  gradient_hessian();
  descent();
  parseval_fft();
  canonicalization();
  ari_and_angle();
  ward_wss_df();
  penalty_null_spaces();
  quantitative(runs);
  elbow_three();
  long_band_mixture();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
