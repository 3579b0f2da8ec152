#pragma once

#include "ncsde/core.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace ncsde {

// n x m observations, one column per series.
class TimeSeriesSet {
 public:
  TimeSeriesSet() = default;
  explicit TimeSeriesSet(Matrix values, std::vector<std::string> labels = {},
                         std::optional<double> sample_rate = std::nullopt)
      : values_(std::move(values)),
        labels_(std::move(labels)),
        sample_rate_(sample_rate) {
    if (values_.rows() < 8)
      throw SizeError("time series need at least 8 observations, got " +
                      std::to_string(values_.rows()));
    if (values_.cols() < 1) throw SizeError("time series set has no columns");
    for (Eigen::Index c = 0; c < values_.cols(); ++c)
      if (!values_.col(c).allFinite())
        throw DomainError("non-finite value in series column " +
                          std::to_string(c));
    if (labels_.empty()) {
      for (Eigen::Index c = 0; c < values_.cols(); ++c)
        labels_.push_back("S" + std::to_string(c + 1));
    } else if (static_cast<Eigen::Index>(labels_.size()) != values_.cols()) {
      throw SizeError("label count does not match series count");
    }
  }

  const Matrix& values() const { return values_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::optional<double> sample_rate() const { return sample_rate_; }
  Eigen::Index length() const { return values_.rows(); }
  Eigen::Index count() const { return values_.cols(); }

 private:
  Matrix values_;
  std::vector<std::string> labels_;
  std::optional<double> sample_rate_;
};

// Positive sub-Nyquist Fourier frequencies j/n, j = 1..floor((n-1)/2), in
// cycles per sample.
struct FrequencyGrid {
  Vector omegas;
  long source_n = 0;

  Eigen::Index size() const { return omegas.size(); }
};

struct PeriodogramSet {
  Matrix ordinates;  // size() x m
  FrequencyGrid grid;

  Eigen::Index frequencies() const { return ordinates.rows(); }
  Eigen::Index series() const { return ordinates.cols(); }
};

inline TimeSeriesSet demean(const TimeSeriesSet& ts) {
  Matrix centred = ts.values();
  for (Eigen::Index c = 0; c < centred.cols(); ++c) {
    auto col = centred.col(c);
    if (!col.allFinite())
      throw DomainError("non-finite value in series column " +
                        std::to_string(c));
    col.array() -= col.mean();
    // A second pass removes the rounding residue of the first.
    col.array() -= col.mean();
  }
  return TimeSeriesSet(std::move(centred), ts.labels(), ts.sample_rate());
}

inline FrequencyGrid fourier_grid(long n) {
  if (n < 8)
    throw SizeError("Fourier grid needs n >= 8, got " + std::to_string(n));
  const long count = (n - 1) / 2;
  FrequencyGrid grid;
  grid.source_n = n;
  grid.omegas.resize(count);
  for (long j = 1; j <= count; ++j)
    grid.omegas(j - 1) = static_cast<double>(j) / static_cast<double>(n);
  return grid;
}

// Full-grid periodogram (1/n)|sum_t x_t e^{-2 pi i j t / n}|^2 for
// j = 0..n-1 of one series, via FFT.
inline Vector full_periodogram(const Eigen::Ref<const Vector>& x) {
  const auto n = x.size();
  std::vector<double> in(x.data(), x.data() + n);
  std::vector<std::complex<double>> out;
  Eigen::FFT<double> fft;
  fft.fwd(out, in);
  Vector power(n);
  for (Eigen::Index j = 0; j < n; ++j)
    power(j) = std::norm(out[j]) / static_cast<double>(n);
  return power;
}

// Raw periodogram on the positive grid. Series are demeaned first.
inline PeriodogramSet periodogram(const TimeSeriesSet& ts) {
  const TimeSeriesSet centred = demean(ts);
  const long n = centred.length();
  PeriodogramSet out;
  out.grid = fourier_grid(n);
  const Eigen::Index half = out.grid.size();
  out.ordinates.resize(half, centred.count());
  std::vector<std::string> parseval_failures(centred.count());
  parallel_for(static_cast<std::size_t>(centred.count()), [&](std::size_t c) {
    const auto x = centred.values().col(static_cast<Eigen::Index>(c));
    const Vector full = full_periodogram(x);
    const double energy = x.squaredNorm();
    if (std::abs(full.sum() - energy) > 1e-10 * std::max(energy, 1e-300) &&
        energy > 0.0)
      parseval_failures[c] = "Parseval check failed for series " +
                             std::to_string(c);
    out.ordinates.col(static_cast<Eigen::Index>(c)) = full.segment(1, half);
  });
  for (const auto& f : parseval_failures)
    if (!f.empty()) throw NumericalError(f);
  return out;
}

// Keeps the `keep` lowest frequencies.
inline PeriodogramSet truncate_band(const PeriodogramSet& ps, Eigen::Index keep) {
  if (keep < 1 || keep > ps.frequencies())
    throw SizeError("cannot keep " + std::to_string(keep) + " of " +
                    std::to_string(ps.frequencies()) + " frequencies");
  PeriodogramSet out;
  out.ordinates = ps.ordinates.topRows(keep);
  out.grid.source_n = ps.grid.source_n;
  out.grid.omegas = ps.grid.omegas.head(keep);
  return out;
}

}  // namespace ncsde
