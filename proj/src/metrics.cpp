#include "silo/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "silo/error.hpp"

namespace silo {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::BalancedAccuracy: return "balanced_accuracy";
    case MetricKind::Auc: return "auc";
    case MetricKind::CIndex: return "c_index";
    case MetricKind::DiceScore: return "dice";
  }
  return "?";
}

MetricKind parse_metric_kind(std::string_view name) {
  for (auto k : {MetricKind::Accuracy, MetricKind::BalancedAccuracy, MetricKind::Auc, MetricKind::CIndex,
                 MetricKind::DiceScore})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": length mismatch");
  if (a == 0) throw UndefinedMetricError(std::string(what) + ": empty input");
}

}  // namespace

double accuracy(std::span<const double> probs, std::span<const int> labels) {
  check_lengths(probs.size(), labels.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hits += ((probs[i] > 0.5 ? 1 : 0) == labels[i]);
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

double class_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  check_lengths(predicted.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth, int num_classes) {
  check_lengths(predicted.size(), truth.size(), "balanced_accuracy");
  std::vector<std::size_t> support(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::size_t> correct(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes) throw ConfigError("balanced_accuracy: label out of range");
    ++support[static_cast<std::size_t>(truth[i])];
    correct[static_cast<std::size_t>(truth[i])] += predicted[i] == truth[i];
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < support.size(); ++c) {
    if (support[c] == 0) continue;
    sum += static_cast<double>(correct[c]) / static_cast<double>(support[c]);
    ++present;
  }
  return sum / present;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auc: needs both positive and negative samples");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted positions < i.
  std::size_t prefix(std::size_t i) const {
    std::size_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

double c_index(std::span<const double> risk, std::span<const double> times, std::span<const std::uint8_t> events) {
  if (risk.size() != times.size() || risk.size() != events.size()) throw ConfigError("c_index: length mismatch");
  const std::size_t n = risk.size();

  // Compress risk scores to ranks.
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  auto level_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), r) - levels.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // Sweep from the latest time; the tree holds every sample with a strictly later time.
  Fenwick later(levels.size());
  std::size_t inserted = 0;
  double concordant = 0.0;
  double comparable = 0.0;
  std::size_t g = 0;
  while (g < n) {
    std::size_t end = g;
    while (end < n && times[order[end]] == times[order[g]]) ++end;
    for (std::size_t r = g; r < end; ++r) {
      const std::size_t i = order[r];
      if (!events[i]) continue;
      const std::size_t lvl = level_of(risk[i]);
      const auto below = later.prefix(lvl);
      const auto tied = later.prefix(lvl + 1) - below;
      concordant += static_cast<double>(below) + 0.5 * static_cast<double>(tied);
      comparable += static_cast<double>(inserted);
    }
    for (std::size_t r = g; r < end; ++r) later.add(level_of(risk[order[r]]));
    inserted += end - g;
    g = end;
  }
  if (comparable == 0.0) throw UndefinedMetricError("c_index: no comparable pairs");
  return concordant / comparable;
}

double dice_score(std::span<const double> pred, std::span<const std::uint8_t> mask) {
  check_lengths(pred.size(), mask.size(), "dice_score");
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5;
    const bool y = mask[i] != 0;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  return 2.0 * tp / (2.0 * tp + fp + fn + 1e-9);
}

}  // namespace silo
