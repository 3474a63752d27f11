// Per-status evaluation metrics over right-of-way predictions: accuracy,
// precision, recall, F1 for each of the four statuses (pass/stop per
// direction). Ratios with a zero denominator are reported as 0 and flagged.

#pragma once

#include <string>
#include <vector>

#include "lightformer/data.hpp"

namespace lightformer {

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
};

struct StatusMetrics {
  ConfusionCounts counts;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
};

struct MetricsReport {
  StatusMetrics straight_pass, straight_stop, left_pass, left_stop;
  long samples = 0;
};

StatusMetrics metrics_from_counts(const ConfusionCounts& counts);

MetricsReport compute_metrics(const std::vector<RightOfWayLabel>& predictions,
                              const std::vector<RightOfWayLabel>& labels);

// Human-readable aligned table.
std::string format_metrics_text(const MetricsReport& report);
// Machine-readable key=value block.
std::string format_metrics_kv(const MetricsReport& report);

}  // namespace lightformer
