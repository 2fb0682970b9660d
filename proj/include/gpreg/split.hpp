#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gpreg/dataset.hpp"
#include "gpreg/errors.hpp"

namespace gpreg {

namespace detail {

// Rejection-sampled bounded draw; uniform_int_distribution is not pinned
// across standard library implementations.
inline std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <class T>
inline void shuffle_deterministic(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[bounded_rand(rng, i)]);
}

// Largest-remainder allocation of `total` units over fractions.
inline std::vector<std::size_t> largest_remainder(
    const std::vector<double>& fracs, std::size_t total) {
  std::vector<std::size_t> counts(fracs.size());
  std::vector<double> rema(fracs.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fracs.size(); ++i) {
    const double exact = fracs[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rema[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < fracs.size(); ++i)
      if (rema[i] > rema[best]) best = i;  // ties go to the earlier bucket
    ++counts[best];
    rema[best] = -1.0;
    ++assigned;
  }
  return counts;
}

}  // namespace detail

enum class SplitUnit { ByRow, ByTrack };

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  SplitUnit unit = SplitUnit::ByTrack;
  std::uint64_t seed = 0;
};

struct SplitResult {
  std::vector<Eigen::Index> train, val, test;  // row indices, ascending
  std::size_t train_units = 0, val_units = 0, test_units = 0;
};

// Seeded shuffle of the split units (rows, or whole tracks so that no track
// straddles buckets), then largest-remainder allocation of unit counts.
inline SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec) {
  const std::vector<double> fracs{spec.train, spec.val, spec.test};
  double sum = 0.0;
  for (double f : fracs) {
    if (f < 0.0) throw ConfigError("split fractions must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1, got " +
                      std::to_string(sum));

  std::vector<std::vector<Eigen::Index>> unit_rows;
  if (spec.unit == SplitUnit::ByRow) {
    unit_rows.resize(ds.rows());
    for (Eigen::Index i = 0; i < ds.rows(); ++i) unit_rows[i] = {i};
  } else {
    if (!ds.has_track())
      throw MissingTrackIds("track-based split requires a track column");
    std::vector<std::string> order;  // first-appearance order
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
      const auto it = std::find(order.begin(), order.end(), ds.track[i]);
      std::size_t u;
      if (it == order.end()) {
        order.push_back(ds.track[i]);
        unit_rows.emplace_back();
        u = order.size() - 1;
      } else {
        u = it - order.begin();
      }
      unit_rows[u].push_back(i);
    }
    std::size_t nonzero = 0;
    for (double f : fracs) nonzero += f > 0.0;
    if (unit_rows.size() < nonzero)
      throw TooFewTracks("need at least " + std::to_string(nonzero) +
                         " tracks for this split, got " +
                         std::to_string(unit_rows.size()));
  }

  std::vector<std::size_t> perm(unit_rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::mt19937_64 rng(spec.seed);
  detail::shuffle_deterministic(perm, rng);

  const auto counts = detail::largest_remainder(fracs, perm.size());
  SplitResult out;
  out.train_units = counts[0];
  out.val_units = counts[1];
  out.test_units = counts[2];
  std::size_t pos = 0;
  for (int bucket = 0; bucket < 3; ++bucket) {
    auto& rows = bucket == 0 ? out.train : bucket == 1 ? out.val : out.test;
    for (std::size_t i = 0; i < counts[bucket]; ++i, ++pos)
      for (Eigen::Index r : unit_rows[perm[pos]]) rows.push_back(r);
    std::sort(rows.begin(), rows.end());
  }
  return out;
}

}  // namespace gpreg
