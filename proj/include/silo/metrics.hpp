#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace silo {

enum class MetricKind { Accuracy, BalancedAccuracy, Auc, CIndex, DiceScore };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view name);

/// Fraction of samples with (prob > 0.5) == label.
double accuracy(std::span<const double> probs, std::span<const int> labels);

/// Fraction of exact class matches.
double class_accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Mean recall over the classes present in `truth`.
double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth, int num_classes);

/// Mann-Whitney AUC with average ranks for ties. Throws UndefinedMetricError
/// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Harrell's C-index: over pairs with event_i and t_j > t_i, the fraction with
/// eta_j < eta_i, ties in eta counting 1/2. Throws UndefinedMetricError when no
/// pair is comparable.
double c_index(std::span<const double> risk, std::span<const double> times, std::span<const std::uint8_t> events);

/// 2TP / (2TP + FP + FN + 1e-9) on predictions binarized at > 0.5.
double dice_score(std::span<const double> pred, std::span<const std::uint8_t> mask);

}  // namespace silo
