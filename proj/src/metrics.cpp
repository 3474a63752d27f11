#include "lightformer/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace lightformer {

StatusMetrics metrics_from_counts(const ConfusionCounts& c) {
  StatusMetrics m;
  m.counts = c;
  const long total = c.total();
  m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / static_cast<double>(total) : 0.0;
  if (c.tp + c.fp > 0) {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  } else {
    m.precision_defined = false;
  }
  if (c.tp + c.fn > 0) {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  } else {
    m.recall_defined = false;
  }
  if (m.precision_defined && m.recall_defined && m.precision + m.recall > 0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.f1_defined = false;
  }
  return m;
}

MetricsReport compute_metrics(const std::vector<RightOfWayLabel>& predictions,
                              const std::vector<RightOfWayLabel>& labels) {
  if (predictions.size() != labels.size()) {
    throw ContractError("compute_metrics: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("compute_metrics: empty evaluation set");
  ConfusionCounts sp, ss, lp, ls;
  const auto tally = [](ConfusionCounts& c, bool predicted, bool actual) {
    if (predicted && actual) {
      ++c.tp;
    } else if (predicted && !actual) {
      ++c.fp;
    } else if (!predicted && actual) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p_straight_pass = predictions[i].straight == RightOfWay::pass;
    const bool a_straight_pass = labels[i].straight == RightOfWay::pass;
    const bool p_left_pass = predictions[i].left == RightOfWay::pass;
    const bool a_left_pass = labels[i].left == RightOfWay::pass;
    tally(sp, p_straight_pass, a_straight_pass);
    tally(ss, !p_straight_pass, !a_straight_pass);
    tally(lp, p_left_pass, a_left_pass);
    tally(ls, !p_left_pass, !a_left_pass);
  }
  MetricsReport report;
  report.straight_pass = metrics_from_counts(sp);
  report.straight_stop = metrics_from_counts(ss);
  report.left_pass = metrics_from_counts(lp);
  report.left_stop = metrics_from_counts(ls);
  report.samples = static_cast<long>(labels.size());
  return report;
}

namespace {

const char* kStatusNames[4] = {"go straight pass", "go straight stop", "left turn pass",
                               "left turn stop"};

const StatusMetrics* status_by_index(const MetricsReport& r, int i) {
  switch (i) {
    case 0: return &r.straight_pass;
    case 1: return &r.straight_stop;
    case 2: return &r.left_pass;
    default: return &r.left_stop;
  }
}

std::string cell(double value, bool defined) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), defined ? "%8.4f" : "%8.4f*", value);
  return buf;
}

}  // namespace

std::string format_metrics_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "status              accuracy precision    recall        f1   (n=" << report.samples
      << ", * = undefined ratio reported as 0)\n";
  for (int i = 0; i < 4; ++i) {
    const StatusMetrics* m = status_by_index(report, i);
    char name[32];
    std::snprintf(name, sizeof(name), "%-18s", kStatusNames[i]);
    out << name << " " << cell(m->accuracy, true) << "  " << cell(m->precision, m->precision_defined)
        << "  " << cell(m->recall, m->recall_defined) << "  " << cell(m->f1, m->f1_defined) << "\n";
  }
  return out.str();
}

std::string format_metrics_kv(const MetricsReport& report) {
  std::ostringstream out;
  const char* keys[4] = {"straight_pass", "straight_stop", "left_pass", "left_stop"};
  out << "samples=" << report.samples << "\n";
  for (int i = 0; i < 4; ++i) {
    const StatusMetrics* m = status_by_index(report, i);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s.accuracy=%.17g\n%s.precision=%.17g\n%s.recall=%.17g\n%s.f1=%.17g\n"
                  "%s.defined=%d%d%d\n",
                  keys[i], m->accuracy, keys[i], m->precision, keys[i], m->recall, keys[i], m->f1,
                  keys[i], m->precision_defined ? 1 : 0, m->recall_defined ? 1 : 0,
                  m->f1_defined ? 1 : 0);
    out << buf;
  }
  return out.str();
}

}  // namespace lightformer
