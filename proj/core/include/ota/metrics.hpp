// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ota/dataset.hpp"
#include "ota/task_model.hpp"

namespace ota::metrics {

/// N x d feature matrix plus a tag naming the extractor that produced it.
struct FeatureBag {
  Eigen::MatrixXd features;
  std::string extractor_id;

  Eigen::Index rows() const noexcept { return features.rows(); }
  Eigen::Index dim() const noexcept { return features.cols(); }
  /// Fewer than d + 1 rows: the sample covariance is singular.
  bool degenerate() const noexcept { return features.rows() < features.cols() + 1; }
};

/// Pooled backbone features, one row per record, evaluation input pipeline.
FeatureBag extract_features(const TaskModel& model, const DatasetManifest& d, std::int64_t resize,
                            std::string extractor_id);

/// Text layout: "# extractor_id <id>" then one tab-separated row per record.
void save_features(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag load_features(const std::filesystem::path& path);

struct FdResult {
  double value = 0.0;
  Eigen::VectorXd mu_a;
  Eigen::VectorXd mu_b;
  double mean_term = 0.0;
  double trace_term = 0.0;
};

constexpr double kFdEpsilon = 1e-6;

/// Mean and unbiased (N - 1) covariance of the rows of `x`.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> mean_and_covariance(const Eigen::MatrixXd& x);

/// Frechet distance between Gaussians fit to both bags:
/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with eps*I added to each covariance.
/// The root trace is taken from the eigenvalues of Sa^(1/2) Sb Sa^(1/2) (negatives clipped).
FdResult fd_score(const FeatureBag& a, const FeatureBag& b, double epsilon = kFdEpsilon);

nlohmann::json to_json(const FdResult& result, bool with_means = false);

/// Fraction of records whose predicted class equals their label.
double top1_accuracy(const TaskModel& model, const DatasetManifest& d, std::int64_t resize);

}  // namespace ota::metrics
