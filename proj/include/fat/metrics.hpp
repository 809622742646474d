// SPDX-License-Identifier: Apache-2.0
// Evaluation metrics: per-trait mean squared error, absolute-error accuracy
// (1 - MAE), exact-match classification accuracy, and support-weighted F1.
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fat/tensor.hpp"

namespace fat {

struct MetricReport {
  std::vector<double> per_trait_mse;  // one entry per trait
  double mean_mse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_trait_accuracy;  // 1 - MAE, per trait
  double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
  // Classification-only fields; NaN / empty when not applicable.
  double classification_accuracy = std::numeric_limits<double>::quiet_NaN();
  double weighted_f1 = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::int64_t> support;  // per-class truth counts
};

// Columnwise mean squared error over (N, T) score matrices; the returned
// vector holds one value per trait followed by their mean, so its length is
// T + 1.
std::vector<double> mse_per_trait(const Tensor& truth, const Tensor& pred);

// 1 - mean absolute error. Exact-match alternative for class labels below.
double eq7_accuracy(const std::vector<double>& truth,
                    const std::vector<double>& pred);

double classification_accuracy(const std::vector<std::int64_t>& truth,
                               const std::vector<std::int64_t>& pred);

// Support-weighted mean of per-class F1 scores (harmonic mean of precision
// and recall). Classes without truth samples carry zero weight; a class with
// precision + recall = 0 contributes F1 = 0.
double weighted_f1(const std::vector<std::int64_t>& truth,
                   const std::vector<std::int64_t>& pred, std::int64_t k);

std::vector<std::int64_t> class_support(const std::vector<std::int64_t>& truth,
                                        std::int64_t k);

MetricReport regression_report(const Tensor& truth, const Tensor& pred);
MetricReport classification_report(const std::vector<std::int64_t>& truth,
                                   const std::vector<std::int64_t>& pred,
                                   std::int64_t k);

// One row per metric: "name,value[,value...]" with full double precision.
std::string report_csv(const MetricReport& report);
// Aligned two-column listing for terminals.
std::string report_table(const MetricReport& report);

}  // namespace fat
