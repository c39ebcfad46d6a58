#pragma once

// Detection metrics with OOD as the positive class: a higher score means more
// anomalous.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latent_scan/errors.hpp"
#include "latent_scan/scan.hpp"

namespace latent_scan {

// Mann-Whitney AUROC: fraction of (positive, negative) pairs where the positive
// scores higher, tied pairs counting one half.
inline double auroc(std::span<const double> scores, const std::vector<bool>& labels) {
  require_input(scores.size() == labels.size(), "auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the credited pair count, kept integral so the result is exact.
  std::uint64_t twice_credit = 0;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos_here = 0;
    std::uint64_t neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos_here : neg_here) += 1;
      ++j;
    }
    twice_credit += pos_here * (2 * neg_below + neg_here);
    neg_below += neg_here;
    n_pos += pos_here;
    n_neg += neg_here;
    i = j;
  }
  require_input(n_pos > 0 && n_neg > 0, "auroc is undefined without both positive and negative labels");
  return static_cast<double>(twice_credit) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;
};

inline double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

// Best F1 of the rule "score > threshold => OOD" over thresholds at -inf, at
// every midpoint between consecutive distinct scores, and at +inf. Among equal
// F1 values the highest threshold wins.
inline F1Result max_f1(std::span<const double> scores, const std::vector<bool>& labels) {
  require_input(scores.size() == labels.size(), "max_f1: scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  require_input(n_pos > 0, "max_f1 requires at least one positive label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk thresholds from +inf downward; predicted positives grow one distinct
  // score at a time.
  F1Result best{0.0, std::numeric_limits<double>::infinity()};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    double threshold = -std::numeric_limits<double>::infinity();
    if (j < order.size()) {
      const double hi = scores[order[i]];
      const double lo = scores[order[j]];
      threshold = hi / 2.0 + lo / 2.0;
      if (threshold >= hi) threshold = lo;  // adjacent doubles
    }
    const double f1 = f1_from_counts(tp, fp, n_pos - tp);
    if (f1 > best.f1) best = {f1, threshold};
    i = j;
  }
  return best;
}

struct MetricBundle {
  double auroc = 0.0;
  double max_f1 = 0.0;
  double best_threshold = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

inline MetricBundle evaluate_scores(const std::vector<double>& scores, const std::vector<bool>& labels) {
  MetricBundle m;
  m.auroc = auroc(scores, labels);
  const auto f1 = max_f1(scores, labels);
  m.max_f1 = f1.f1;
  m.best_threshold = f1.threshold;
  m.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  m.n_neg = labels.size() - m.n_pos;
  return m;
}

struct LayerMetrics {
  MetricBundle overall;
  std::map<std::string, MetricBundle> per_group;
  std::map<std::string, double> delta_auroc;  // group AUROC minus overall AUROC
};

struct EvaluationReport {
  MetricBundle overall;
  std::map<std::string, MetricBundle> per_group;
  std::map<std::string, LayerMetrics> per_layer;
  std::vector<std::string> layer_order;
  std::vector<std::string> warnings;
};

namespace detail {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> labels;
  std::vector<std::optional<std::string>> groups;
};

// Overall metrics plus, for each group, all negatives pooled with that group's
// positives.
inline void stratify(const LabeledScores& data, MetricBundle& overall,
                     std::map<std::string, MetricBundle>& per_group, std::vector<std::string>& warnings,
                     const std::vector<std::string>& expected_groups) {
  overall = evaluate_scores(data.scores, data.labels);
  std::map<std::string, std::vector<std::size_t>> members;
  for (const auto& g : expected_groups) members[g];
  for (std::size_t i = 0; i < data.scores.size(); ++i)
    if (data.labels[i] && data.groups[i]) members[*data.groups[i]].push_back(i);

  std::vector<double> neg_scores;
  for (std::size_t i = 0; i < data.scores.size(); ++i)
    if (!data.labels[i]) neg_scores.push_back(data.scores[i]);

  for (const auto& [group, idx] : members) {
    if (idx.empty()) {
      warnings.push_back("group '" + group + "' has no OOD samples; omitted from stratified metrics");
      continue;
    }
    std::vector<double> s = neg_scores;
    std::vector<bool> l(neg_scores.size(), false);
    for (std::size_t i : idx) {
      s.push_back(data.scores[i]);
      l.push_back(true);
    }
    per_group[group] = evaluate_scores(s, l);
  }
}

}  // namespace detail

// `ood_groups` maps OOD sample ids to their stratum. Every ID sample joins every
// stratum. Groups listed in `expected_groups` that end up with no OOD samples
// are reported as warnings.
inline EvaluationReport stratified_report(const DetectionTable& table,
                                          const std::map<std::string, std::string>& ood_groups,
                                          const std::vector<std::string>& expected_groups = {}) {
  table.validate();
  detail::LabeledScores data;
  for (const auto& r : table.records) {
    require_input(r.is_ood.has_value(), "sample '" + r.sample_id + "' has no ground-truth label");
    data.scores.push_back(r.aggregate_score);
    data.labels.push_back(*r.is_ood);
    std::optional<std::string> g;
    if (auto it = ood_groups.find(r.sample_id); it != ood_groups.end()) {
      g = it->second;
    } else if (r.group) {
      g = r.group;
    }
    data.groups.push_back(g);
  }
  EvaluationReport report;
  detail::stratify(data, report.overall, report.per_group, report.warnings, expected_groups);
  return report;
}

// AUROC and max-F1 of each layer's scores on its own, with per-group
// metrics and the per-group change in AUROC relative to the layer overall.
inline void add_per_layer(EvaluationReport& report, std::span<const ScanResult> results,
                          const std::map<std::string, bool>& labels,
                          const std::map<std::string, std::string>& groups,
                          const std::vector<std::string>& expected_groups = {}) {
  for (const auto& r : results) {
    detail::LabeledScores data;
    for (const auto& s : r.samples) {
      auto it = labels.find(s.sample_id);
      require_input(it != labels.end(),
                    "layer '" + r.layer_name + "': sample '" + s.sample_id + "' has no label");
      data.scores.push_back(s.score);
      data.labels.push_back(it->second);
      auto g = groups.find(s.sample_id);
      data.groups.push_back(g == groups.end() ? std::nullopt : std::optional<std::string>(g->second));
    }
    LayerMetrics lm;
    std::vector<std::string> ignored;
    detail::stratify(data, lm.overall, lm.per_group, ignored, expected_groups);
    for (const auto& [g, m] : lm.per_group) lm.delta_auroc[g] = m.auroc - lm.overall.auroc;
    report.per_layer[r.layer_name] = std::move(lm);
    report.layer_order.push_back(r.layer_name);
  }
}

inline EvaluationReport per_layer_report(std::span<const ScanResult> results, const std::map<std::string, bool>& labels,
                                         const std::map<std::string, std::string>& groups) {
  EvaluationReport report;
  add_per_layer(report, results, labels, groups);
  return report;
}

}  // namespace latent_scan
