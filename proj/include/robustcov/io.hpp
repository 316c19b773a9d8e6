#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "robustcov/estimators.hpp"
#include "robustcov/missing.hpp"

namespace robustcov {

/// CSV layout: one line per variable (matrix row), comma separated, the
/// token NA marking a missing cell. Round-trips values and mask losslessly.
template <class Scalar>
void write_incomplete_csv(const std::filesystem::path& path,
                          const IncompleteMatrix<Scalar>& data) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open for writing: " + path.string());
  for (int i = 0; i < data.p(); ++i) {
    for (int j = 0; j < data.n(); ++j) {
      if (j) out << ',';
      if (data.mask(i, j))
        out << format_number(double(data.values(i, j)));
      else
        out << "NA";
    }
    out << '\n';
  }
  if (!out) throw config_error("write failed: " + path.string());
}

template <class Scalar>
IncompleteMatrix<Scalar> read_incomplete_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open: " + path.string());
  std::vector<std::vector<std::pair<bool, Scalar>>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::pair<bool, Scalar>> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "NA") {
        row.emplace_back(false, Scalar(0));
      } else {
        try {
          row.emplace_back(true, Scalar(std::stod(cell)));
        } catch (const std::exception&) {
          throw config_error("bad CSV cell '" + cell + "' in " + path.string());
        }
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw config_error("ragged CSV rows in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw config_error("empty CSV: " + path.string());

  IncompleteMatrix<Scalar> data;
  const int p = static_cast<int>(rows.size());
  const int n = static_cast<int>(rows.front().size());
  data.values.resize(p, n);
  data.mask.resize(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) {
      data.mask(i, j) = rows[std::size_t(i)][std::size_t(j)].first;
      data.values(i, j) = rows[std::size_t(i)][std::size_t(j)].second;
    }
  return data;
}

template <class Scalar>
void write_matrix_csv(const std::filesystem::path& path, const Matrix<Scalar>& m) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open for writing: " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_number(double(m(i, j)));
    }
    out << '\n';
  }
}

template <class Scalar>
Matrix<Scalar> read_matrix_csv(const std::filesystem::path& path) {
  auto data = read_incomplete_csv<Scalar>(path);
  if (!data.mask.all()) throw config_error("unexpected NA cells in " + path.string());
  return data.values;
}

/// Matrix as <base>.csv plus a JSON sidecar <base>.json carrying scales,
/// the convergence trace and run metadata.
template <class Scalar>
void save_estimate(const std::filesystem::path& base, const ShapeEstimate<Scalar>& est,
                   const std::string& kind_name) {
  write_matrix_csv(base.string() + ".csv", est.sigma);
  nlohmann::json j;
  j["estimator"] = kind_name;
  j["iterations"] = est.iterations;
  j["converged"] = est.converged;
  j["rank_degenerate"] = est.rank_degenerate;
  j["textures"] = std::vector<double>(est.textures.data(),
                                      est.textures.data() + est.textures.size());
  j["trace"] = std::vector<double>(est.trace.begin(), est.trace.end());
  j["warnings"] = est.warnings;
  std::ofstream out(base.string() + ".json");
  if (!out) throw config_error("cannot open for writing: " + base.string() + ".json");
  out << j.dump(2) << '\n';
}

}  // namespace robustcov
