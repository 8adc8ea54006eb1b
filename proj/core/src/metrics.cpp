// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ota/error.hpp"

namespace ota::metrics {

FeatureBag extract_features(const TaskModel& model, const DatasetManifest& d, std::int64_t resize,
                            std::string extractor_id) {
  if (d.empty()) throw ValidationError("extract_features: dataset is empty");
  if (d.shape().channels != model.config().channels)
    throw ShapeError("extract_features: dataset has " + std::to_string(d.shape().channels) +
                     " channels, backbone expects " + std::to_string(model.config().channels));
  auto feats = extract_backbone_features(model, d, resize).to(torch::kFloat64).contiguous();
  FeatureBag bag;
  bag.extractor_id = std::move(extractor_id);
  bag.features.resize(feats.size(0), feats.size(1));
  auto acc = feats.accessor<double, 2>();
  for (Eigen::Index i = 0; i < bag.features.rows(); ++i)
    for (Eigen::Index j = 0; j < bag.features.cols(); ++j) bag.features(i, j) = acc[i][j];
  if (!bag.features.allFinite()) throw ValidationError("extract_features: non-finite feature values");
  return bag;
}

void save_features(const FeatureBag& bag, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write features to " + path.string());
  out << "# extractor_id " << bag.extractor_id << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < bag.rows(); ++i) {
    for (Eigen::Index j = 0; j < bag.dim(); ++j) out << (j ? "\t" : "") << bag.features(i, j);
    out << '\n';
  }
}

FeatureBag load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read features from " + path.string());
  FeatureBag bag;
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# extractor_id ", 0) == 0) {
      bag.extractor_id = line.substr(15);
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream cells(line);
    std::vector<double> row;
    for (std::string cell; std::getline(cells, cell, '\t');) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw LoadError(path.string() + ": bad feature value '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ShapeError(path.string() + ": rows have different lengths");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError(path.string() + ": no feature rows");
  bag.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      bag.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return bag;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> mean_and_covariance(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ValidationError("covariance needs at least two rows");
  Eigen::VectorXd mu = x.colwise().mean().transpose();
  Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  return {std::move(mu), std::move(cov)};
}

namespace {

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FdResult fd_score(const FeatureBag& a, const FeatureBag& b, double epsilon) {
  if (a.dim() != b.dim())
    throw ShapeError("fd_score: feature dimensions differ (" + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()) + ")");
  if (a.dim() == 0) throw ShapeError("fd_score: empty feature dimension");
  if (!a.features.allFinite() || !b.features.allFinite()) throw ValidationError("fd_score: non-finite features");
  auto [mu_a, cov_a] = mean_and_covariance(a.features);
  auto [mu_b, cov_b] = mean_and_covariance(b.features);
  const auto d = a.dim();
  cov_a += epsilon * Eigen::MatrixXd::Identity(d, d);
  cov_b += epsilon * Eigen::MatrixXd::Identity(d, d);

  const Eigen::MatrixXd root_a = symmetric_sqrt(cov_a);
  Eigen::MatrixXd inner = root_a * cov_b * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double root_trace = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  FdResult r;
  r.mean_term = (mu_a - mu_b).squaredNorm();
  r.trace_term = cov_a.trace() + cov_b.trace() - 2.0 * root_trace;
  r.value = r.mean_term + r.trace_term;
  r.mu_a = std::move(mu_a);
  r.mu_b = std::move(mu_b);
  return r;
}

nlohmann::json to_json(const FdResult& result, bool with_means) {
  nlohmann::json j{{"value", result.value}, {"mean_term", result.mean_term}, {"trace_term", result.trace_term}};
  if (with_means) {
    j["mu_a"] = std::vector<double>(result.mu_a.data(), result.mu_a.data() + result.mu_a.size());
    j["mu_b"] = std::vector<double>(result.mu_b.data(), result.mu_b.data() + result.mu_b.size());
  }
  return j;
}

double top1_accuracy(const TaskModel& model, const DatasetManifest& d, std::int64_t resize) {
  return top1(model, d, resize);
}

}  // namespace ota::metrics
