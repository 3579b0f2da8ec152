#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ncsde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wrong dimensions or counts (n too small, keep > rows, a >= L, ...).
class SizeError : public Error {
 public:
  using Error::Error;
};

// Input value outside the supported domain (non-finite sample, frequency
// outside the basis interval, invalid configuration value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A factorization or solve failed.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double condition = 0.0)
      : Error(what), condition_(condition) {}
  // Estimated condition number of the offending matrix, 0 when unknown.
  double condition() const { return condition_; }

 private:
  double condition_;
};

// exp overflow or NaN while evaluating the Whittle deviance.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, long series, long frequency)
      : Error(what), series_(series), frequency_(frequency) {}
  long series() const { return series_; }
  long frequency() const { return frequency_; }

 private:
  long series_;
  long frequency_;
};

// Every block of an outer iteration failed to decrease the objective.
class StallError : public Error {
 public:
  using Error::Error;
};

// Worker count for the data-parallel loops. Defaults to NCSDE_THREADS, then
// to the hardware concurrency.
inline unsigned& thread_count() {
  static unsigned count = [] {
    if (const char* env = std::getenv("NCSDE_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
  }();
  return count;
}

inline void set_thread_count(unsigned n) { thread_count() = std::max(1u, n); }

namespace detail {
inline bool& inside_worker() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// Runs body(i) for i in [0, n). Iterations must be independent; results are
// identical for any worker count. Nested calls run serially.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, unsigned workers = 0) {
  if (workers == 0) workers = thread_count();
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1 || detail::inside_worker()) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        detail::inside_worker() = true;
        try {
          for (std::size_t i = w; i < n; i += workers) body(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ncsde
