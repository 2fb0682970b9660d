#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"

namespace gpreg {

// In-memory table: feature matrix, target, optional track labels. row_ids
// are 0-based data-row ordinals in the source file (dropped rows keep
// consuming ids, so ids stay stable references into the file).
struct Dataset {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd X;
  std::string target_name;
  Eigen::VectorXd y;
  std::string track_name;
  std::vector<std::string> track;  // empty when no track column configured
  std::vector<std::int64_t> row_ids;
  std::int64_t dropped_rows = 0;

  Eigen::Index rows() const { return X.rows(); }
  bool has_track() const { return !track.empty(); }

  Eigen::Index column(const std::string& name) const {
    const auto it =
        std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end())
      throw MissingColumn("no feature column named '" + name + "'");
    return it - feature_names.begin();
  }

  Dataset select(const std::vector<Eigen::Index>& idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.target_name = target_name;
    out.track_name = track_name;
    out.dropped_rows = 0;
    out.X.resize(idx.size(), X.cols());
    out.y.resize(idx.size());
    out.row_ids.reserve(idx.size());
    if (has_track()) out.track.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Eigen::Index r = idx[i];
      if (r < 0 || r >= rows()) throw Error("select: row index out of range");
      out.X.row(i) = X.row(r);
      out.y[i] = y[r];
      out.row_ids.push_back(row_ids[r]);
      if (has_track()) out.track.push_back(track[r]);
    }
    return out;
  }
};

struct CsvSchema {
  std::vector<std::string> features;
  std::string target;
  std::string track;  // empty: none
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r'))
    --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline bool parse_finite_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

}  // namespace detail

// Dialect: UTF-8, first row is the header, comma separated, no quoting.
// Rows with missing or unparseable numeric cells are dropped and counted;
// a row with the wrong field count is a hard ParseError.
inline Dataset load_csv_text(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw EmptyDataset("CSV input is empty");
  const auto header = detail::split_csv_line(line);

  auto find_col = [&](const std::string& name) {
    std::size_t found = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        if (found != header.size())
          throw ParseError("column '" + name + "' appears twice in header");
        found = i;
      }
    }
    if (found == header.size())
      throw MissingColumn("CSV has no column named '" + name + "'");
    return found;
  };

  if (schema.features.empty())
    throw ConfigError("no feature columns configured");
  std::vector<std::size_t> feat_col;
  for (const auto& f : schema.features) feat_col.push_back(find_col(f));
  const bool want_target = !schema.target.empty();  // predict-only inputs
  const std::size_t target_col = want_target ? find_col(schema.target) : 0;
  const bool want_track = !schema.track.empty();
  const std::size_t track_col = want_track ? find_col(schema.track) : 0;

  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::vector<std::string> tracks;
  std::vector<std::int64_t> ids;
  std::int64_t dropped = 0;

  std::int64_t row = -1;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;  // blank lines are skipped
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " fields, header has " +
                       std::to_string(header.size()));
    std::vector<double> xrow(feat_col.size());
    bool ok = true;
    for (std::size_t j = 0; j < feat_col.size() && ok; ++j)
      ok = detail::parse_finite_double(cells[feat_col[j]], xrow[j]);
    double yval = 0.0;
    if (ok && want_target)
      ok = detail::parse_finite_double(cells[target_col], yval);
    std::string tval;
    if (ok && want_track) {
      tval = cells[track_col];
      ok = !tval.empty();
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    xs.push_back(std::move(xrow));
    ys.push_back(yval);
    if (want_track) tracks.push_back(std::move(tval));
    ids.push_back(row);
  }

  if (xs.empty())
    throw EmptyDataset("CSV has no usable data rows (" +
                       std::to_string(dropped) + " dropped)");

  Dataset ds;
  ds.feature_names = schema.features;
  ds.target_name = schema.target;
  ds.track_name = schema.track;
  ds.X.resize(xs.size(), feat_col.size());
  ds.y.resize(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < xs[i].size(); ++j) ds.X(i, j) = xs[i][j];
    ds.y[i] = ys[i];
  }
  ds.track = std::move(tracks);
  ds.row_ids = std::move(ids);
  ds.dropped_rows = dropped;
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return load_csv_text(buf.str(), schema);
  } catch (const EmptyDataset& e) {
    throw EmptyDataset(path + ": " + e.what());
  }
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write CSV file '" + path + "'");
  for (std::size_t j = 0; j < ds.feature_names.size(); ++j)
    out << (j ? "," : "") << ds.feature_names[j];
  out << "," << ds.target_name;
  if (ds.has_track()) out << "," << ds.track_name;
  out << "\n";
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.X.cols(); ++j)
      out << (j ? "," : "") << format_double(ds.X(i, j));
    out << "," << format_double(ds.y[i]);
    if (ds.has_track()) out << "," << ds.track[i];
    out << "\n";
  }
  if (!out) throw DataError("failed writing CSV file '" + path + "'");
}

}  // namespace gpreg
