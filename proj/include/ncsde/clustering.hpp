#pragma once

#include "ncsde/baselines.hpp"
#include "ncsde/core.hpp"

#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace ncsde {

struct DistanceMatrix {
  Matrix values;  // m x m, symmetric, zero diagonal
};

// One agglomeration step. Leaves are 0..m-1; the cluster created by merge s
// gets id m + s.
struct Merge {
  int left = 0;
  int right = 0;
  double height = 0.0;
  int size = 0;
};

struct Dendrogram {
  std::vector<Merge> merges;
  std::vector<std::string> leaf_labels;

  int leaves() const { return static_cast<int>(merges.size()) + 1; }
};

struct ClusterAssignment {
  std::vector<int> labels;  // 1..k
  int k = 0;
};

inline DistanceMatrix euclidean_distances(const Matrix& points) {
  if (!points.allFinite()) throw DomainError("non-finite coordinate in point set");
  const Eigen::Index m = points.rows();
  DistanceMatrix d;
  d.values = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      d.values(i, j) = d.values(j, i) = (points.row(i) - points.row(j)).norm();
  return d;
}

// Ward linkage in the ward.D2 convention: Lance-Williams updates on squared
// distances, merge heights reported as square roots. Ties go to the smallest
// (id, id) pair.
inline Dendrogram ward_linkage(const DistanceMatrix& dist, std::vector<std::string> labels = {}) {
  const Eigen::Index m = dist.values.rows();
  if (m < 1 || dist.values.cols() != m) throw SizeError("distance matrix must be square and non-empty");
  Dendrogram out;
  out.leaf_labels = std::move(labels);
  if (out.leaf_labels.empty())
    for (Eigen::Index i = 0; i < m; ++i) out.leaf_labels.push_back(std::to_string(i + 1));

  // Active clusters by slot; slot i starts as leaf i.
  Matrix d2 = dist.values.array().square().matrix();
  std::vector<int> id(static_cast<std::size_t>(m)), size(static_cast<std::size_t>(m), 1);
  std::iota(id.begin(), id.end(), 0);
  std::vector<char> active(static_cast<std::size_t>(m), 1);

  for (Eigen::Index step = 0; step + 1 < m; ++step) {
    Eigen::Index bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<int, int> best_ids{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < m; ++j) {
        if (!active[static_cast<std::size_t>(j)]) continue;
        const int a = std::min(id[static_cast<std::size_t>(i)], id[static_cast<std::size_t>(j)]);
        const int b = std::max(id[static_cast<std::size_t>(i)], id[static_cast<std::size_t>(j)]);
        const double v = d2(i, j);
        if (v < best || (v == best && std::make_pair(a, b) < best_ids)) {
          best = v;
          best_ids = {a, b};
          bi = i;
          bj = j;
        }
      }
    }
    const auto si = static_cast<std::size_t>(bi), sj = static_cast<std::size_t>(bj);
    const double ni = size[si], nj = size[sj];
    for (Eigen::Index k = 0; k < m; ++k) {
      if (!active[static_cast<std::size_t>(k)] || k == bi || k == bj) continue;
      const double nk = size[static_cast<std::size_t>(k)];
      const double v = ((ni + nk) * d2(k, bi) + (nj + nk) * d2(k, bj) - nk * best) / (ni + nj + nk);
      d2(k, bi) = d2(bi, k) = std::max(v, 0.0);
    }
    out.merges.push_back({best_ids.first, best_ids.second, std::sqrt(std::max(best, 0.0)),
                          size[si] + size[sj]});
    size[si] += size[sj];
    id[si] = static_cast<int>(m + step);
    active[sj] = 0;
  }
  return out;
}

// Undoes the k-1 highest merges. Cluster labels are numbered 1..k in order of
// the lowest leaf index they contain.
inline ClusterAssignment cut(const Dendrogram& dend, int k) {
  const int m = dend.leaves();
  if (k < 1 || k > m)
    throw DomainError("cut requires 1 <= k <= " + std::to_string(m) + ", got " + std::to_string(k));
  std::vector<int> parent(static_cast<std::size_t>(2 * m - 1));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (int s = 0; s < m - k; ++s) {
    const Merge& mg = dend.merges[static_cast<std::size_t>(s)];
    parent[static_cast<std::size_t>(find(mg.left))] = m + s;
    parent[static_cast<std::size_t>(find(mg.right))] = m + s;
  }
  ClusterAssignment out;
  out.k = k;
  out.labels.assign(static_cast<std::size_t>(m), 0);
  std::vector<int> label_of(static_cast<std::size_t>(2 * m - 1), 0);
  int next = 0;
  for (int i = 0; i < m; ++i) {
    const int root = find(i);
    if (label_of[static_cast<std::size_t>(root)] == 0) label_of[static_cast<std::size_t>(root)] = ++next;
    out.labels[static_cast<std::size_t>(i)] = label_of[static_cast<std::size_t>(root)];
  }
  return out;
}

// Sum over clusters of squared deviations from the cluster centroid.
inline double within_cluster_ss(const Matrix& points, const std::vector<int>& labels, int k) {
  double total = 0.0;
  for (int c = 1; c <= k; ++c) {
    Vector centroid = Vector::Zero(points.cols());
    int count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        centroid += points.row(static_cast<Eigen::Index>(i)).transpose();
        ++count;
      }
    if (count == 0) continue;
    centroid /= count;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) total += (points.row(static_cast<Eigen::Index>(i)).transpose() - centroid).squaredNorm();
  }
  return total;
}

// WSS for k = 1..k_max using Ward partitions of the rows of `points`.
inline std::vector<double> wss_curve(const Matrix& points, int k_max) {
  if (k_max < 1 || k_max > points.rows())
    throw DomainError("k_max must satisfy 1 <= k_max <= m");
  const Dendrogram dend = ward_linkage(euclidean_distances(points));
  std::vector<double> out;
  for (int k = 1; k <= k_max; ++k) out.push_back(within_cluster_ss(points, cut(dend, k).labels, k));
  return out;
}

// k (1-based) maximizing wss[k-1] - 2 wss[k] + wss[k+1].
inline int elbow(const std::vector<double>& wss) {
  if (wss.size() < 3) throw SizeError("elbow needs at least 3 WSS values");
  int best_k = 2;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k + 1 < wss.size(); ++k) {
    const double curvature = wss[k - 1] - 2.0 * wss[k] + wss[k + 1];
    if (curvature > best) {
      best = curvature;
      best_k = static_cast<int>(k) + 1;
    }
  }
  return best_k;
}

struct ElbowResult {
  int suggested_k = 1;
  std::vector<double> wss;
  bool reliable = true;
};

// Elbow on the smoothed log-periodograms, one point per series.
inline ElbowResult select_K(const Matrix& ordinates, const Matrix& basis, int k_max) {
  const Matrix smoothed = basis * smoothed_log_coefficients(ordinates, basis);
  const Matrix points = smoothed.transpose();
  ElbowResult out;
  out.wss = wss_curve(points, k_max);
  out.suggested_k = elbow(out.wss);
  const double spread = (points.rowwise() - points.colwise().mean()).squaredNorm();
  const double level = points.squaredNorm();
  if (out.wss.front() <= 1e-12 * std::max(level, 1e-300) || spread == 0.0) out.reliable = false;
  return out;
}

}  // namespace ncsde
