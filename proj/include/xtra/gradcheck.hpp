#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xtra/graph.hpp"

namespace xtra {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t parameters_checked = 0;
  std::vector<GradCheckEntry> entries;
  std::vector<std::string> failures;
};

// Compares a gradient map against central finite differences, parameter by
// parameter, in double precision. Perturbation h = 1e-4 * (1 + |w|);
// rel err = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport compare_gradients(
    GraphD& graph, GraphD::Id loss,
    const std::map<std::string, TensorD>& analytic, double tolerance) {
  constexpr std::size_t kMaxParams = 50000;
  std::size_t total = 0;
  for (auto leaf : graph.leaves()) total += graph.value(leaf).numel();
  if (total > kMaxParams) {
    throw ContractError("check_gradients: " + std::to_string(total) +
                        " parameters exceeds the " +
                        std::to_string(kMaxParams) + " cost guard");
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.parameters_checked = total;
  for (auto leaf : graph.leaves()) {
    const std::string& name = graph.leaf_name(leaf);
    const TensorD& agrad = analytic.at(name);
    GradCheckEntry entry;
    entry.name = name;
    TensorD& value = graph.leaf_value(leaf);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double orig = value.data[i];
      const double h = 1e-4 * (1.0 + std::abs(orig));
      value.data[i] = orig + h;
      graph.refresh();
      const double fp = graph.value(loss).data[0];
      value.data[i] = orig - h;
      graph.refresh();
      const double fm = graph.value(loss).data[0];
      value.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = agrad.data[i];
      const double denom =
          std::max({1.0, std::abs(ana), std::abs(numeric)});
      const double rel = std::abs(ana - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = ana;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_err > tolerance) {
      report.failures.push_back(name + ": rel err " +
                                std::to_string(entry.max_rel_err) + " at [" +
                                std::to_string(entry.worst_index) + "]");
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  graph.refresh();
  report.pass = report.failures.empty();
  return report;
}

inline GradCheckReport check_gradients(GraphD& graph, GraphD::Id loss,
                                       double tolerance) {
  return compare_gradients(graph, loss, graph.backward(loss), tolerance);
}

}  // namespace xtra
