#pragma once

// Text formats exchanged between pipeline stages: scan results, detection
// tables, labels, ITA records, evaluation reports and the key-value run config.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latent_scan/errors.hpp"
#include "latent_scan/ita.hpp"
#include "latent_scan/metrics.hpp"
#include "latent_scan/odin.hpp"
#include "latent_scan/scan.hpp"
#include "latent_scan/tensor_io.hpp"

namespace latent_scan {

// Shortest decimal that round-trips; "inf"/"-inf" for infinities.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double_cell(std::string_view cell, const std::string& where) {
  cell = detail::trim(cell);
  if (cell == "inf" || cell == "+inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  return detail::parse_double(cell, where);
}

inline bool parse_bool_cell(std::string_view cell, const std::string& where) {
  cell = detail::trim(cell);
  if (cell == "1" || cell == "true" || cell == "True" || cell == "ood" || cell == "OOD") return true;
  if (cell == "0" || cell == "false" || cell == "False" || cell == "id" || cell == "ID") return false;
  throw InputError("expected a boolean (0/1/true/false) at " + where + ", got '" + std::string(cell) + "'");
}

namespace detail {

// Rows of a headed CSV as column-name -> cell maps, checking required columns.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name, const std::string& what) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InputError(what + " is missing column '" + std::string(name) + "'");
  }
  std::optional<std::size_t> find_column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline CsvTable parse_csv(std::string_view text, const std::string& what) {
  std::istringstream in{std::string(text)};
  CsvTable t;
  std::string line;
  require_input(static_cast<bool>(std::getline(in, line)), what + " is empty; a header row is required");
  for (auto& h : split(trim(line), ',')) t.header.emplace_back(trim(h));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ',');
    require_input(cells.size() == t.header.size(), what + ": ragged row at line " + std::to_string(line_no));
    for (auto& c : cells) c = std::string(trim(c));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace detail

// --- scan results ----------------------------------------------------------

inline std::string scan_result_csv(const ScanResult& r) {
  std::string out = "sample_id,score,k_star,alpha_star,node_indices\n";
  for (const auto& s : r.samples) {
    out += s.sample_id + "," + format_double(s.score) + "," + std::to_string(s.k_star) + "," +
           format_double(s.alpha_star) + ",";
    for (std::size_t i = 0; i < s.node_indices.size(); ++i)
      out += (i ? " " : "") + std::to_string(s.node_indices[i]);
    out += "\n";
  }
  return out;
}

inline ScanResult parse_scan_result_csv(std::string_view text, const std::string& layer_name) {
  const auto t = detail::parse_csv(text, "scan result '" + layer_name + "'");
  const auto c_id = t.column("sample_id", "scan result");
  const auto c_score = t.column("score", "scan result");
  const auto c_k = t.column("k_star", "scan result");
  const auto c_alpha = t.column("alpha_star", "scan result");
  const auto c_nodes = t.column("node_indices", "scan result");
  ScanResult r;
  r.layer_name = layer_name;
  for (const auto& row : t.rows) {
    SampleScan s;
    s.sample_id = row[c_id];
    s.score = parse_double_cell(row[c_score], "scan result score");
    s.k_star = static_cast<std::size_t>(parse_double_cell(row[c_k], "scan result k_star"));
    s.alpha_star = parse_double_cell(row[c_alpha], "scan result alpha_star");
    std::istringstream nodes(row[c_nodes]);
    for (std::size_t v; nodes >> v;) s.node_indices.push_back(v);
    r.samples.push_back(std::move(s));
  }
  return r;
}

inline ScanResult read_scan_result(const fs::path& path) {
  std::string layer = path.stem().string();
  if (layer.starts_with("scan_")) layer = layer.substr(5);
  return parse_scan_result_csv(detail::read_text_file(path), layer);
}

// --- detection tables ------------------------------------------------------

inline std::string detection_table_csv(const DetectionTable& t) {
  std::string out = "sample_id,aggregate_score,is_ood,group\n";
  for (const auto& r : t.records) {
    out += r.sample_id + "," + format_double(r.aggregate_score) + ",";
    if (r.is_ood) out += *r.is_ood ? "1" : "0";
    out += ",";
    if (r.group) out += *r.group;
    out += "\n";
  }
  return out;
}

inline DetectionTable parse_detection_table_csv(std::string_view text) {
  const auto t = detail::parse_csv(text, "detection table");
  const auto c_id = t.column("sample_id", "detection table");
  const auto c_score = t.column("aggregate_score", "detection table");
  const auto c_ood = t.find_column("is_ood");
  const auto c_group = t.find_column("group");
  DetectionTable table;
  for (const auto& row : t.rows) {
    DetectionRecord r;
    r.sample_id = row[c_id];
    r.aggregate_score = parse_double_cell(row[c_score], "detection table score of '" + r.sample_id + "'");
    if (c_ood && !row[*c_ood].empty()) r.is_ood = parse_bool_cell(row[*c_ood], "is_ood of '" + r.sample_id + "'");
    if (c_group && !row[*c_group].empty()) r.group = row[*c_group];
    table.records.push_back(std::move(r));
  }
  table.validate();
  return table;
}

// --- labels ----------------------------------------------------------------

// "sample_id,is_ood" with 1/true marking OOD samples.
inline std::map<std::string, bool> parse_labels_csv(std::string_view text) {
  const auto t = detail::parse_csv(text, "labels file");
  const auto c_id = t.column("sample_id", "labels file");
  const auto c_ood = t.column("is_ood", "labels file");
  std::map<std::string, bool> labels;
  for (const auto& row : t.rows)
    require_input(labels.emplace(row[c_id], parse_bool_cell(row[c_ood], "label of '" + row[c_id] + "'")).second,
                  "duplicate sample id '" + row[c_id] + "' in labels file");
  return labels;
}

inline std::string labels_csv(const std::vector<std::pair<std::string, bool>>& labels) {
  std::string out = "sample_id,is_ood\n";
  for (const auto& [id, ood] : labels) out += id + "," + (ood ? "1" : "0") + "\n";
  return out;
}

// --- ITA records -----------------------------------------------------------

inline std::string ita_csv(const std::vector<ItaRecord>& records) {
  std::string out = "sample_id,l_mean,b_mean,ita_degrees,category\n";
  for (const auto& r : records)
    out += r.sample_id + "," + format_double(r.l_mean) + "," + format_double(r.b_mean) + "," +
           format_double(r.ita_degrees) + "," + to_string(r.category) + "\n";
  return out;
}

// sample_id -> category name
inline std::map<std::string, std::string> parse_ita_groups_csv(std::string_view text) {
  const auto t = detail::parse_csv(text, "ITA CSV");
  const auto c_id = t.column("sample_id", "ITA CSV");
  const auto c_cat = t.column("category", "ITA CSV");
  std::map<std::string, std::string> groups;
  for (const auto& row : t.rows) {
    parse_skin_tone(row[c_cat]);
    groups[row[c_id]] = row[c_cat];
  }
  return groups;
}

// --- evaluation reports ----------------------------------------------------

inline std::string report_csv(const EvaluationReport& rep) {
  std::string out = "scope,group,layer,auroc,max_f1,best_threshold,n_pos,n_neg\n";
  auto row = [&](std::string_view scope, std::string_view group, std::string_view layer, const MetricBundle& m) {
    out += std::string(scope) + "," + std::string(group) + "," + std::string(layer) + "," + format_double(m.auroc) +
           "," + format_double(m.max_f1) + "," + format_double(m.best_threshold) + "," + std::to_string(m.n_pos) +
           "," + std::to_string(m.n_neg) + "\n";
  };
  row("overall", "", "", rep.overall);
  for (const auto& [g, m] : rep.per_group) row("group", g, "", m);
  for (const auto& layer : rep.layer_order) {
    const auto& lm = rep.per_layer.at(layer);
    row("layer", "", layer, lm.overall);
    for (const auto& [g, m] : lm.per_group) row("layer_group", g, layer, m);
  }
  return out;
}

inline nlohmann::ordered_json bundle_json(const MetricBundle& m) {
  nlohmann::ordered_json j;
  j["auroc"] = m.auroc;
  j["max_f1"] = m.max_f1;
  j["best_threshold"] = format_double(m.best_threshold);
  j["n_pos"] = m.n_pos;
  j["n_neg"] = m.n_neg;
  return j;
}

inline MetricBundle bundle_from_json(const nlohmann::ordered_json& j) {
  MetricBundle m;
  m.auroc = j.at("auroc").get<double>();
  m.max_f1 = j.at("max_f1").get<double>();
  m.best_threshold = parse_double_cell(j.at("best_threshold").get<std::string>(), "report JSON");
  m.n_pos = j.at("n_pos").get<std::size_t>();
  m.n_neg = j.at("n_neg").get<std::size_t>();
  return m;
}

inline nlohmann::ordered_json report_json(const EvaluationReport& rep) {
  nlohmann::ordered_json j;
  j["overall"] = bundle_json(rep.overall);
  j["per_group"] = nlohmann::ordered_json::object();
  for (const auto& [g, m] : rep.per_group) j["per_group"][g] = bundle_json(m);
  j["per_layer"] = nlohmann::ordered_json::object();
  for (const auto& layer : rep.layer_order) {
    const auto& lm = rep.per_layer.at(layer);
    nlohmann::ordered_json jl = bundle_json(lm.overall);
    jl["per_group"] = nlohmann::ordered_json::object();
    for (const auto& [g, m] : lm.per_group) jl["per_group"][g] = bundle_json(m);
    jl["delta_auroc"] = nlohmann::ordered_json::object();
    for (const auto& [g, d] : lm.delta_auroc) jl["delta_auroc"][g] = d;
    j["per_layer"][layer] = std::move(jl);
  }
  j["warnings"] = rep.warnings;
  return j;
}

inline EvaluationReport report_from_json(const nlohmann::ordered_json& j) {
  EvaluationReport rep;
  try {
    rep.overall = bundle_from_json(j.at("overall"));
    for (const auto& [g, m] : j.at("per_group").items()) rep.per_group[g] = bundle_from_json(m);
    const auto empty = nlohmann::ordered_json::object();
    const auto& layers = j.contains("per_layer") ? j.at("per_layer") : empty;
    for (const auto& [layer, jl] : layers.items()) {
      LayerMetrics lm;
      lm.overall = bundle_from_json(jl);
      for (const auto& [g, m] : (jl.contains("per_group") ? jl.at("per_group") : empty).items())
        lm.per_group[g] = bundle_from_json(m);
      for (const auto& [g, d] : (jl.contains("delta_auroc") ? jl.at("delta_auroc") : empty).items())
        lm.delta_auroc[g] = d.get<double>();
      rep.per_layer[layer] = std::move(lm);
      rep.layer_order.push_back(layer);
    }
    if (j.contains("warnings")) rep.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed report JSON: ") + e.what());
  }
  return rep;
}

inline std::string report_text(const EvaluationReport& rep) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  auto line = [&](const std::string& label, const MetricBundle& m) {
    out << "  " << label;
    for (std::size_t i = label.size(); i < 28; ++i) out << ' ';
    out << "AUROC " << m.auroc << "  maxF1 " << m.max_f1 << "  n_pos " << m.n_pos << "  n_neg " << m.n_neg << "\n";
  };
  out << "Overall\n";
  line("all", rep.overall);
  if (!rep.per_group.empty()) {
    out << "Per group (all ID samples + OOD samples of the group)\n";
    for (const auto& [g, m] : rep.per_group) line(g, m);
  }
  if (!rep.layer_order.empty()) {
    out << "Per layer\n";
    for (const auto& layer : rep.layer_order) {
      const auto& lm = rep.per_layer.at(layer);
      line(layer, lm.overall);
      for (const auto& [g, d] : lm.delta_auroc) {
        out << "    delta AUROC " << g << ": " << std::showpos << d << std::noshowpos << "\n";
      }
    }
  }
  for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
  return out.str();
}

// --- key-value config ------------------------------------------------------

// "key = value" lines; '#' starts a comment. Later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_value(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    require_input(eq != std::string_view::npos, "config line " + std::to_string(line_no) + " has no '='");
    const auto key = detail::trim(body.substr(0, eq));
    require_input(!key.empty(), "config line " + std::to_string(line_no) + " has an empty key");
    kv[std::string(key)] = std::string(detail::trim(body.substr(eq + 1)));
  }
  return kv;
}

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& item : detail::split(text, ','))
    if (const auto t = detail::trim(item); !t.empty()) out.emplace_back(t);
  return out;
}

struct PipelineSettings {
  ScanConfig scan;
  Aggregation aggregation;
  OdinConfig odin{1.0, 0.0, OdinMode::Off};

  static constexpr std::string_view kKnownKeys[] = {"alpha_max", "statistic", "layers", "aggregation",
                                                    "tau",       "epsilon",   "odin_mode"};

  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
      if (key == "alpha_max") {
        scan.alpha_max = parse_double_cell(value, "config key alpha_max");
      } else if (key == "statistic") {
        scan.statistic = parse_statistic(value);
      } else if (key == "layers") {
        scan.layers = split_list(value);
      } else if (key == "aggregation") {
        aggregation = Aggregation::parse(value);
      } else if (key == "tau") {
        odin.tau = parse_double_cell(value, "config key tau");
      } else if (key == "epsilon") {
        odin.epsilon = parse_double_cell(value, "config key epsilon");
      } else if (key == "odin_mode") {
        odin.mode = parse_odin_mode(value);
      } else {
        throw InputError("unknown config key '" + key + "'");
      }
    }
    scan.validate();
    odin.validate();
  }
};

}  // namespace latent_scan
