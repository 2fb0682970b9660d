#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/split.hpp"

namespace gpreg {

struct Chunking {
  Eigen::VectorXi assignment;  // chunk id per row, 0..M-1 with no gaps
  int M = 0;
  Eigen::MatrixXd centroids;            // k-means only
  std::vector<double> inertia_history;  // k-means only, per Lloyd iteration
  std::vector<int> sizes;
};

// Tiles space with axis-aligned cells of the given edge; cell key is
// floor(coord / tile) per dimension. Ids are numbered in lexicographic key
// order so the chunking is independent of row order.
inline Chunking chunk_grid(const Eigen::MatrixXd& P, double tile) {
  if (!(tile > 0.0)) throw ConfigError("grid tile size must be positive");
  if (P.rows() == 0) throw EmptyDataset("no rows to chunk");
  std::map<std::vector<long long>, std::vector<Eigen::Index>> cells;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    std::vector<long long> key(P.cols());
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      key[j] = static_cast<long long>(std::floor(P(i, j) / tile));
    cells[key].push_back(i);
  }
  Chunking out;
  out.assignment.resize(P.rows());
  out.M = static_cast<int>(cells.size());
  int id = 0;
  for (const auto& [key, rows] : cells) {
    for (Eigen::Index r : rows) out.assignment[r] = id;
    out.sizes.push_back(static_cast<int>(rows.size()));
    ++id;
  }
  return out;
}

// Lloyd's algorithm with k-means++ seeding. Sampling uses explicit
// cumulative sums over a seeded generator, so results are reproducible
// across platforms. Runs to an assignment fixpoint or max_iter; empty
// clusters are dropped and ids compacted at the end.
inline Chunking chunk_kmeans(const Eigen::MatrixXd& P, int k,
                             std::uint64_t seed, int max_iter = 100) {
  const Eigen::Index n = P.rows();
  if (k <= 0) throw ConfigError("k must be positive");
  if (n == 0) throw EmptyDataset("no rows to chunk");
  if (k > n)
    throw KTooLarge("k = " + std::to_string(k) + " exceeds " +
                    std::to_string(n) + " rows");

  std::mt19937_64 rng(seed);
  auto unit_draw = [&]() {  // uniform in [0, 1) with 53 random bits
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };

  Eigen::MatrixXd C(k, P.cols());
  C.row(0) = P.row(detail::bounded_rand(rng, n));
  Eigen::VectorXd d2 =
      (P.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double u = unit_draw() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = detail::bounded_rand(rng, n);  // all points coincide
    }
    C.row(c) = P.row(pick);
    d2 = d2.cwiseMin((P.rowwise() - C.row(c)).rowwise().squaredNorm());
  }

  Eigen::VectorXi assign = Eigen::VectorXi::Constant(n, -1);
  Chunking out;
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (P.row(i) - C.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (P.row(i) - C.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      inertia += best_d;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    out.inertia_history.push_back(inertia);
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(P.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assign[i] == c) {
          mean += P.row(i);
          ++count;
        }
      }
      if (count > 0) C.row(c) = mean / count;  // empty: centroid stays put
    }
  }

  // compact away empty clusters, preserving seed order of survivors
  std::vector<int> counts(k, 0);
  for (Eigen::Index i = 0; i < n; ++i) ++counts[assign[i]];
  std::vector<int> remap(k, -1);
  int m = 0;
  for (int c = 0; c < k; ++c)
    if (counts[c] > 0) remap[c] = m++;
  out.assignment.resize(n);
  out.centroids.resize(m, P.cols());
  out.sizes.assign(m, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.assignment[i] = remap[assign[i]];
    ++out.sizes[out.assignment[i]];
  }
  for (int c = 0; c < k; ++c)
    if (remap[c] >= 0) out.centroids.row(remap[c]) = C.row(c);
  out.M = m;
  return out;
}

}  // namespace gpreg
