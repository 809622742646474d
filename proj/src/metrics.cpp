// SPDX-License-Identifier: Apache-2.0
#include "fat/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fat/error.hpp"

namespace fat {
namespace {

void check_pair_sizes(std::size_t truth, std::size_t pred,
                      const char* what) {
  if (truth != pred) {
    throw DimensionError(std::string(what) + ": truth holds " +
                         std::to_string(truth) + " entries, pred " +
                         std::to_string(pred));
  }
  if (truth == 0) {
    throw ContractError(std::string(what) + " needs at least one sample");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> mse_per_trait(const Tensor& truth, const Tensor& pred) {
  if (truth.rank() != 2 || pred.rank() != 2 || truth.shape() != pred.shape()) {
    throw DimensionError("per-trait MSE expects matching (N, T) matrices, got " +
                         shape_str(truth.shape()) + " and " +
                         shape_str(pred.shape()));
  }
  const std::int64_t n = truth.shape()[0], t = truth.shape()[1];
  if (n < 1 || t < 1) {
    throw ContractError("per-trait MSE needs at least one sample and trait");
  }
  std::vector<double> out(static_cast<std::size_t>(t) + 1, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      const double d = truth.at(i * t + j) - pred.at(i * t + j);
      out[static_cast<std::size_t>(j)] += d * d;
    }
  }
  double total = 0.0;
  for (std::int64_t j = 0; j < t; ++j) {
    out[static_cast<std::size_t>(j)] /= static_cast<double>(n);
    total += out[static_cast<std::size_t>(j)];
  }
  out.back() = total / static_cast<double>(t);
  return out;
}

double eq7_accuracy(const std::vector<double>& truth,
                    const std::vector<double>& pred) {
  check_pair_sizes(truth.size(), pred.size(), "accuracy");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    acc += std::abs(truth[i] - pred[i]);
  }
  return 1.0 - acc / static_cast<double>(truth.size());
}

double classification_accuracy(const std::vector<std::int64_t>& truth,
                               const std::vector<std::int64_t>& pred) {
  check_pair_sizes(truth.size(), pred.size(), "accuracy");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::vector<std::int64_t> class_support(const std::vector<std::int64_t>& truth,
                                        std::int64_t k) {
  if (k < 1) throw ContractError("support needs at least one class");
  std::vector<std::int64_t> support(static_cast<std::size_t>(k), 0);
  for (std::int64_t c : truth) {
    if (c < 0 || c >= k) {
      throw DataError("class label " + std::to_string(c) +
                      " outside [0, " + std::to_string(k) + ")");
    }
    ++support[static_cast<std::size_t>(c)];
  }
  return support;
}

double weighted_f1(const std::vector<std::int64_t>& truth,
                   const std::vector<std::int64_t>& pred, std::int64_t k) {
  check_pair_sizes(truth.size(), pred.size(), "weighted F1");
  const std::vector<std::int64_t> support = class_support(truth, k);
  const std::vector<std::int64_t> predicted = class_support(pred, k);
  std::vector<std::int64_t> tp(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) ++tp[static_cast<std::size_t>(truth[i])];
  }
  const auto n = static_cast<double>(truth.size());
  double sum = 0.0;
  for (std::int64_t c = 0; c < k; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    if (support[cs] == 0) continue;  // zero weight either way
    const double prec = predicted[cs] == 0
                            ? 0.0
                            : static_cast<double>(tp[cs]) /
                                  static_cast<double>(predicted[cs]);
    const double rec =
        static_cast<double>(tp[cs]) / static_cast<double>(support[cs]);
    const double f1 =
        prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    sum += static_cast<double>(support[cs]) / n * f1;
  }
  return sum;
}

MetricReport regression_report(const Tensor& truth, const Tensor& pred) {
  MetricReport rep;
  std::vector<double> mse = mse_per_trait(truth, pred);
  rep.mean_mse = mse.back();
  mse.pop_back();
  rep.per_trait_mse = std::move(mse);

  const std::int64_t n = truth.shape()[0], t = truth.shape()[1];
  rep.per_trait_accuracy.resize(static_cast<std::size_t>(t));
  double total = 0.0;
  for (std::int64_t j = 0; j < t; ++j) {
    std::vector<double> tc(static_cast<std::size_t>(n)),
        pc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      tc[static_cast<std::size_t>(i)] = truth.at(i * t + j);
      pc[static_cast<std::size_t>(i)] = pred.at(i * t + j);
    }
    const double a = eq7_accuracy(tc, pc);
    rep.per_trait_accuracy[static_cast<std::size_t>(j)] = a;
    total += a;
  }
  rep.mean_accuracy = total / static_cast<double>(t);
  return rep;
}

MetricReport classification_report(const std::vector<std::int64_t>& truth,
                                   const std::vector<std::int64_t>& pred,
                                   std::int64_t k) {
  MetricReport rep;
  rep.classification_accuracy = classification_accuracy(truth, pred);
  rep.weighted_f1 = weighted_f1(truth, pred, k);
  rep.support = class_support(truth, k);
  return rep;
}

std::string report_csv(const MetricReport& rep) {
  std::ostringstream out;
  auto row = [&](const char* name, const std::vector<double>& values) {
    out << name;
    for (double v : values) out << ',' << fmt(v);
    out << '\n';
  };
  if (!rep.per_trait_mse.empty()) {
    row("mse_per_trait", rep.per_trait_mse);
    row("mse_mean", {rep.mean_mse});
    row("accuracy_per_trait", rep.per_trait_accuracy);
    row("accuracy_mean", {rep.mean_accuracy});
  }
  if (!std::isnan(rep.classification_accuracy)) {
    row("classification_accuracy", {rep.classification_accuracy});
  }
  if (!std::isnan(rep.weighted_f1)) {
    row("weighted_f1", {rep.weighted_f1});
  }
  if (!rep.support.empty()) {
    out << "support";
    for (std::int64_t s : rep.support) out << ',' << s;
    out << '\n';
  }
  return out.str();
}

std::string report_table(const MetricReport& rep) {
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& value) {
    out << "  " << name;
    for (std::size_t i = name.size(); i < 26; ++i) out << ' ';
    out << value << '\n';
  };
  auto joined = [&](const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", values[i]);
      if (i) s += "  ";
      s += buf;
    }
    return s;
  };
  if (!rep.per_trait_mse.empty()) {
    line("mse per trait", joined(rep.per_trait_mse));
    line("mse mean", joined({rep.mean_mse}));
    line("accuracy per trait", joined(rep.per_trait_accuracy));
    line("accuracy mean", joined({rep.mean_accuracy}));
  }
  if (!std::isnan(rep.classification_accuracy)) {
    line("classification accuracy", joined({rep.classification_accuracy}));
  }
  if (!std::isnan(rep.weighted_f1)) {
    line("weighted F1", joined({rep.weighted_f1}));
  }
  if (!rep.support.empty()) {
    std::string s;
    for (std::size_t i = 0; i < rep.support.size(); ++i) {
      if (i) s += "  ";
      s += std::to_string(rep.support[i]);
    }
    line("support", s);
  }
  return out.str();
}

}  // namespace fat
