#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "astmask/tasks.hpp"
#include "json.hpp"

namespace astmask {

double metric_accuracy(std::span<const int> preds, std::span<const int> labels);

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Positive class is 1; every 0/0 ratio is taken as 0.
PrecisionRecallF1 metric_f1(std::span<const int> preds, std::span<const int> labels);

/// Fraction of outputs whose code token sequence equals the reference's.
/// Spacing is ignored.
double metric_exact_match(std::span<const std::string> outputs,
                          std::span<const std::string> references);

struct MetricsReport {
  TaskKind task = TaskKind::qa;
  std::string split = "heldout";
  std::size_t n = 0;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> exact_match;
  std::string fingerprint;

  nlohmann::ordered_json to_json() const;
};

}  // namespace astmask
