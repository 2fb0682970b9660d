#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "gpreg/dataset.hpp"
#include "gpreg/errors.hpp"

namespace gpreg {

// Builds a synthetic ice-sheet elevation-change dataset laid out like
// altimetry ground tracks. Rows follow slanted tracks across a 100 x 100 km
// square; features are terrain and flow covariates and the target is a
// surface height trend (m/yr) with spatial structure plus white noise.
// One generator drives every draw in a fixed order, so a given (n, seed)
// always produces the identical dataset on any platform.
inline Dataset synthesize_glacier(int n, std::uint64_t seed) {
  if (n < 100)
    throw ConfigError("synthetic dataset needs at least 100 rows, got " +
                      std::to_string(n));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto unit_draw = [&]() {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };

  Dataset ds;
  ds.feature_names = {"x",     "y",      "elev",    "ocean_dist",
                      "slope", "aspect", "velocity"};
  ds.target_name = "dhdt";
  ds.track_name = "track";
  ds.X.resize(n, 7);
  ds.y.resize(n);
  ds.track.resize(n);
  ds.row_ids.resize(n);

  const int n_tracks = std::max(8, n / 60);
  const int per_track = n / n_tracks;

  auto elev_at = [](double x, double y) {
    const double r2 = (x - 50.0) * (x - 50.0) + (y - 50.0) * (y - 50.0);
    return 3000.0 * std::exp(-r2 / (2.0 * 45.0 * 45.0));
  };

  int row = 0;
  for (int t = 0; t < n_tracks && row < n; ++t) {
    // tracks are denser near the top of the square (u^0.7 pushes the
    // intercepts upward), mimicking converging polar orbits
    const double c = 100.0 * std::pow(unit_draw(), 0.7);
    const int count =
        (t == n_tracks - 1) ? (n - row) : std::min(per_track, n - row);
    for (int j = 0; j < count; ++j, ++row) {
      const double x = 100.0 * unit_draw();
      const double y_raw = c + 0.15 * (x - 50.0) + 0.3 * gauss(rng);
      const double y = std::min(100.0, std::max(0.0, y_raw));

      const double elev = elev_at(x, y);
      const double ocean =
          std::min(std::min(x, y), std::min(100.0 - x, 100.0 - y));

      // gradient magnitude of the dome, in m per km, plus measurement noise
      const double gx = (elev_at(x + 0.5, y) - elev_at(x - 0.5, y));
      const double gy = (elev_at(x, y + 0.5) - elev_at(x, y - 0.5));
      const double slope =
          std::hypot(gx, gy) + std::abs(0.5 * gauss(rng));
      const double aspect =
          std::atan2(-gy, -gx) + 0.05 * gauss(rng);  // downhill direction

      const double velocity =
          0.02 + 1.5 * std::exp(-ocean / 10.0) * std::exp(0.3 * gauss(rng));

      const double dhdt = -2.0 * std::exp(-ocean / 14.0) +
                          0.08 * std::sin(x / 18.0) * std::cos(y / 23.0) +
                          0.04 * gauss(rng);

      ds.X(row, 0) = x;
      ds.X(row, 1) = y;
      ds.X(row, 2) = elev;
      ds.X(row, 3) = ocean;
      ds.X(row, 4) = slope;
      ds.X(row, 5) = aspect;
      ds.X(row, 6) = velocity;
      ds.y[row] = dhdt;
      ds.track[row] = "T" + std::to_string(t);
      ds.row_ids[row] = row;
    }
  }
  return ds;
}

}  // namespace gpreg
