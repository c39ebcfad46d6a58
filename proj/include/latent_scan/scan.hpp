#pragma once

// Empirical p-values of test activations against a background set, and the
// linear-time subset scan over the nodes of one layer using nonparametric scan
// statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latent_scan/errors.hpp"
#include "latent_scan/parallel.hpp"
#include "latent_scan/tensor_io.hpp"

namespace latent_scan {

enum class Statistic { BerkJones, HigherCriticism };

inline std::string to_string(Statistic s) {
  return s == Statistic::BerkJones ? "berk_jones" : "higher_criticism";
}

inline Statistic parse_statistic(std::string_view s) {
  if (s == "berk_jones" || s == "BerkJones" || s == "bj") return Statistic::BerkJones;
  if (s == "higher_criticism" || s == "HigherCriticism" || s == "hc") return Statistic::HigherCriticism;
  throw InputError("unknown statistic '" + std::string(s) + "' (expected berk_jones or higher_criticism)");
}

inline constexpr double kDefaultAlphaMax = 0.5;

struct ScanConfig {
  double alpha_max = kDefaultAlphaMax;
  Statistic statistic = Statistic::BerkJones;
  std::vector<std::string> layers;  // empty: every layer in the store

  void validate() const {
    require_input(alpha_max > 0.0 && alpha_max <= 1.0,
                  "alpha_max must lie in (0, 1], got " + std::to_string(alpha_max));
  }
};

// p-values of R evaluation samples over J nodes. Each entry is
// (#{background >= test} + 1) / (M + 1).
struct PValueMatrix {
  std::string layer_name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t background_count = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Background columns sorted once so each query is a binary search.
class BackgroundRanks {
 public:
  explicit BackgroundRanks(const LayerActivations& background)
      : name_(background.name()), rows_(background.rows()), cols_(background.cols()),
        sorted_(rows_ * cols_) {
    for (std::size_t c = 0; c < cols_; ++c) {
      auto column = std::span<double>(sorted_).subspan(c * rows_, rows_);
      for (std::size_t r = 0; r < rows_; ++r) column[r] = background.at(r, c);
      std::sort(column.begin(), column.end());
    }
  }

  std::size_t background_count() const { return rows_; }
  std::size_t cols() const { return cols_; }

  // #{z : background[z][node] >= value}
  std::size_t count_at_least(std::size_t node, double value) const {
    const auto column = std::span<const double>(sorted_).subspan(node * rows_, rows_);
    const auto it = std::lower_bound(column.begin(), column.end(), value);
    return static_cast<std::size_t>(column.end() - it);
  }

  double pvalue(std::size_t node, double value) const {
    return static_cast<double>(count_at_least(node, value) + 1) / static_cast<double>(rows_ + 1);
  }

 private:
  std::string name_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> sorted_;  // column-major
};

inline PValueMatrix compute_pvalues(const BackgroundRanks& ranks, const LayerActivations& evaluation) {
  require_input(ranks.cols() == evaluation.cols(),
                "column-count mismatch for layer '" + evaluation.name() + "': background has " +
                    std::to_string(ranks.cols()) + " nodes, evaluation has " +
                    std::to_string(evaluation.cols()));
  PValueMatrix p;
  p.layer_name = evaluation.name();
  p.rows = evaluation.rows();
  p.cols = evaluation.cols();
  p.background_count = ranks.background_count();
  p.values.resize(p.rows * p.cols);
  parallel_for(p.rows, [&](std::size_t r) {
    for (std::size_t c = 0; c < p.cols; ++c) p.values[r * p.cols + c] = ranks.pvalue(c, evaluation.at(r, c));
  });
  return p;
}

inline PValueMatrix compute_pvalues(const LayerActivations& background, const LayerActivations& evaluation) {
  require_input(background.cols() == evaluation.cols(),
                "column-count mismatch for layer '" + evaluation.name() + "': background has " +
                    std::to_string(background.cols()) + " nodes, evaluation has " +
                    std::to_string(evaluation.cols()));
  return compute_pvalues(BackgroundRanks(background), evaluation);
}

namespace detail {

// a*ln(a/b) with 0*ln(0) := 0
inline double xlogx_ratio(double a, double b) { return a == 0.0 ? 0.0 : a * std::log(a / b); }

}  // namespace detail

// Bernoulli Kullback-Leibler divergence KL(a || b).
inline double bernoulli_kl(double a, double b) {
  return detail::xlogx_ratio(a, b) + detail::xlogx_ratio(1.0 - a, 1.0 - b);
}

// Nonparametric scan statistic for n p-values of which n_alpha are at most
// alpha. Zero unless the observed fraction exceeds alpha.
inline double npss_score(double alpha, std::size_t n_alpha, std::size_t n, Statistic statistic) {
  require_input(alpha > 0.0 && alpha < 1.0, "npss alpha must lie in (0, 1), got " + std::to_string(alpha));
  require_input(n >= 1 && n_alpha <= n, "npss requires 0 <= n_alpha <= n and n >= 1");
  const double nd = static_cast<double>(n);
  const double frac = static_cast<double>(n_alpha) / nd;
  if (frac <= alpha) return 0.0;
  switch (statistic) {
    case Statistic::BerkJones:
      return nd * bernoulli_kl(frac, alpha);
    case Statistic::HigherCriticism:
      return (static_cast<double>(n_alpha) - nd * alpha) / std::sqrt(nd * alpha * (1.0 - alpha));
  }
  throw InvariantError("unhandled statistic");
}

struct SampleScan {
  std::string sample_id;
  double score = 0.0;
  std::size_t k_star = 0;
  double alpha_star = 0.0;  // alpha_max when k_star == 0
  std::vector<std::size_t> node_indices;
};

struct ScanResult {
  std::string layer_name;
  std::vector<SampleScan> samples;
};

// Most anomalous node subset of one sample. Only p-values strictly below
// alpha_max are eligible. Sorting them ascending (ties by node index) and
// scoring each prefix finds the global maximum because the score of a subset
// only grows with its size and shrinks with its largest p-value.
inline SampleScan scan_sample(std::span<const double> pvalues, const ScanConfig& config) {
  std::vector<std::size_t> order;
  order.reserve(pvalues.size());
  for (std::size_t j = 0; j < pvalues.size(); ++j)
    if (pvalues[j] < config.alpha_max) order.push_back(j);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });

  SampleScan best;
  best.alpha_star = config.alpha_max;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    const double alpha_k = pvalues[order[k - 1]];
    const double f = npss_score(alpha_k, k, k, config.statistic);
    if (f > best.score) {  // strict: the smallest k wins ties
      best.score = f;
      best.k_star = k;
      best.alpha_star = alpha_k;
    }
  }
  best.node_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(best.k_star));
  return best;
}

inline ScanResult scan_layer(const PValueMatrix& pvals, const ScanConfig& config,
                             std::span<const std::string> sample_ids = {}) {
  config.validate();
  require_input(sample_ids.empty() || sample_ids.size() == pvals.rows,
                "sample id count does not match p-value rows for layer '" + pvals.layer_name + "'");
  ScanResult result;
  result.layer_name = pvals.layer_name;
  result.samples.resize(pvals.rows);
  parallel_for(pvals.rows, [&](std::size_t r) {
    result.samples[r] = scan_sample(pvals.row(r), config);
    result.samples[r].sample_id = sample_ids.empty() ? std::to_string(r) : sample_ids[r];
  });
  return result;
}

// Optional ground truth and stratum attached to each scored sample.
struct DetectionRecord {
  std::string sample_id;
  double aggregate_score = 0.0;
  std::optional<bool> is_ood;
  std::optional<std::string> group;
};

struct DetectionTable {
  std::vector<DetectionRecord> records;

  std::vector<double> scores() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.aggregate_score);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& r : records)
      require_input(seen.insert(r.sample_id).second, "duplicate sample id '" + r.sample_id + "'");
  }
};

struct Aggregation {
  enum class Kind { SumAll, SingleLayer } kind = Kind::SumAll;
  std::string layer;

  static Aggregation sum_all() { return {}; }
  static Aggregation single_layer(std::string name) { return {Kind::SingleLayer, std::move(name)}; }

  // "sum" or "layer:<name>"
  static Aggregation parse(std::string_view text) {
    if (text == "sum" || text == "sum_all") return sum_all();
    if (text.starts_with("layer:") && text.size() > 6) return single_layer(std::string(text.substr(6)));
    throw InputError("aggregation must be 'sum' or 'layer:<name>', got '" + std::string(text) + "'");
  }

  std::string to_string() const { return kind == Kind::SumAll ? "sum" : "layer:" + layer; }
};

// Combines per-layer scores into one score per sample, in the sample order of
// the first result.
inline DetectionTable aggregate_scores(std::span<const ScanResult> results, const Aggregation& mode) {
  require_input(!results.empty(), "no scan results to aggregate");
  const auto& first = results.front();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < first.samples.size(); ++i) {
    require_input(index.emplace(first.samples[i].sample_id, i).second,
                  "duplicate sample id '" + first.samples[i].sample_id + "' in layer '" +
                      first.layer_name + "'");
  }
  for (const auto& r : results) {
    require_input(r.samples.size() == first.samples.size(),
                  "layer '" + r.layer_name + "' covers a different number of samples than '" +
                      first.layer_name + "'");
    for (const auto& s : r.samples)
      require_input(index.count(s.sample_id) == 1,
                    "sample id '" + s.sample_id + "' of layer '" + r.layer_name + "' is missing from layer '" +
                        first.layer_name + "'");
  }

  DetectionTable table;
  table.records.resize(first.samples.size());
  for (std::size_t i = 0; i < first.samples.size(); ++i) table.records[i].sample_id = first.samples[i].sample_id;

  if (mode.kind == Aggregation::Kind::SingleLayer) {
    auto it = std::find_if(results.begin(), results.end(),
                           [&](const ScanResult& r) { return r.layer_name == mode.layer; });
    require_input(it != results.end(), "aggregation layer '" + mode.layer + "' was not scanned");
    for (const auto& s : it->samples) table.records[index.at(s.sample_id)].aggregate_score = s.score;
    return table;
  }
  for (const auto& r : results)
    for (const auto& s : r.samples) table.records[index.at(s.sample_id)].aggregate_score += s.score;
  return table;
}

inline std::vector<bool> threshold_detect(const DetectionTable& table, double threshold) {
  std::vector<bool> flags;
  flags.reserve(table.records.size());
  for (const auto& r : table.records) flags.push_back(r.aggregate_score > threshold);
  return flags;
}

// p-values and scan of every configured layer of `evaluation` against
// `background`, in configured order.
inline std::vector<ScanResult> scan_sets(const ActivationSet& background, const ActivationSet& evaluation,
                                         const ScanConfig& config) {
  config.validate();
  std::vector<std::string> layers = config.layers;
  if (layers.empty()) layers = evaluation.layer_names();
  std::vector<ScanResult> results;
  for (const auto& name : layers) {
    require_input(evaluation.has_layer(name), "evaluation set '" + evaluation.name() + "' has no layer '" + name +
                                                  "'; available layers: " + evaluation.layer_names_joined());
    require_input(background.has_layer(name), "background set '" + background.name() + "' has no layer '" +
                                                  name + "'; available layers: " + background.layer_names_joined());
    const auto pvals = compute_pvalues(background.layer(name), evaluation.layer(name));
    results.push_back(scan_layer(pvals, config, evaluation.sample_ids()));
  }
  return results;
}

}  // namespace latent_scan
