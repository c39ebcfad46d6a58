#pragma once

// On-disk activation store: a JSON manifest plus one raw little-endian float32
// row-major file per layer.
//
//   manifest.json
//   {
//     "format_version": 1,
//     "sets": [
//       { "set_name": "background",
//         "samples_file": "background.samples.txt",
//         "layers": [ {"layer_name": "dense_0", "rows": 400, "cols": 64,
//                      "dtype": "f32le", "file": "background__dense_0.f32"} ] }
//     ]
//   }
//
// samples_file is optional. When absent, samples.txt in the store directory is
// used if present, otherwise sample ids default to the row index.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latent_scan/errors.hpp"

namespace latent_scan {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;
inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kDtype = "f32le";

// Node activations of one layer, one row per sample. Values are kept as float so
// a read-back store is bit-identical to what was written; consumers widen to
// double for arithmetic.
class LayerActivations {
 public:
  LayerActivations() = default;
  LayerActivations(std::string name, std::size_t rows, std::size_t cols, std::vector<float> values)
      : name_(std::move(name)), rows_(rows), cols_(cols), values_(std::move(values)) {
    require_input(rows_ >= 1 && cols_ >= 1,
                  "layer '" + name_ + "' must have at least one row and one column");
    require_input(values_.size() == rows_ * cols_,
                  "layer '" + name_ + "' has " + std::to_string(values_.size()) +
                      " values, expected rows*cols = " + std::to_string(rows_ * cols_));
    for (float v : values_)
      require_input(std::isfinite(v), "layer '" + name_ + "' contains a non-finite value");
  }

  const std::string& name() const { return name_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values_).subspan(r * cols_, cols_);
  }
  float at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  friend bool operator==(const LayerActivations& a, const LayerActivations& b) {
    if (a.name_ != b.name_ || a.rows_ != b.rows_ || a.cols_ != b.cols_) return false;
    return std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0;
  }

 private:
  std::string name_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> values_;
};

class ActivationSet {
 public:
  ActivationSet() = default;
  ActivationSet(std::string set_name, std::vector<std::string> sample_ids,
                std::vector<LayerActivations> layers)
      : set_name_(std::move(set_name)), sample_ids_(std::move(sample_ids)), layers_(std::move(layers)) {
    std::set<std::string> seen;
    for (const auto& layer : layers_) {
      require_input(seen.insert(layer.name()).second,
                    "duplicate layer name '" + layer.name() + "' in set '" + set_name_ + "'");
      require_input(layer.rows() == sample_ids_.size(),
                    "layer '" + layer.name() + "' has " + std::to_string(layer.rows()) +
                        " rows but set '" + set_name_ + "' has " +
                        std::to_string(sample_ids_.size()) + " sample ids");
    }
  }

  const std::string& name() const { return set_name_; }
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }
  const std::vector<LayerActivations>& layers() const { return layers_; }
  std::size_t sample_count() const { return sample_ids_.size(); }

  bool has_layer(std::string_view name) const {
    return std::any_of(layers_.begin(), layers_.end(),
                       [&](const auto& l) { return l.name() == name; });
  }

  const LayerActivations& layer(std::string_view name) const {
    for (const auto& l : layers_)
      if (l.name() == name) return l;
    throw InputError("set '" + set_name_ + "' has no layer '" + std::string(name) +
                     "'; available layers: " + layer_names_joined());
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto& l : layers_) out.push_back(l.name());
    return out;
  }

  std::string layer_names_joined() const {
    std::string out;
    for (const auto& l : layers_) out += (out.empty() ? "" : ",") + l.name();
    return out;
  }

  friend bool operator==(const ActivationSet&, const ActivationSet&) = default;

 private:
  std::string set_name_;
  std::vector<std::string> sample_ids_;
  std::vector<LayerActivations> layers_;
};

struct LayerDescriptor {
  std::string layer_name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string dtype{kDtype};
  std::string file;
};

struct SetDescriptor {
  std::string set_name;
  std::string samples_file;
  std::vector<LayerDescriptor> layers;
};

struct Manifest {
  int format_version = kFormatVersion;
  std::vector<SetDescriptor> sets;
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  } else {
    return v;
  }
}

inline std::string safe_file_component(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

inline void write_floats(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    words[i] = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require_input(static_cast<bool>(out), "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  require_input(static_cast<bool>(out), "write failed for '" + path.string() + "'");
}

inline std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  require_input(fs::exists(path), "missing layer file '" + path.string() + "'");
  const auto bytes = fs::file_size(path);
  require_input(bytes == count * sizeof(float),
                "byte-length mismatch for '" + path.string() + "': " + std::to_string(bytes) +
                    " bytes, expected " + std::to_string(count * sizeof(float)));
  std::vector<std::uint32_t> words(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  require_input(static_cast<bool>(in), "read failed for '" + path.string() + "'");
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i)
    values[i] = std::bit_cast<float>(to_little_endian(words[i]));
  return values;
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require_input(static_cast<bool>(in), "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require_input(static_cast<bool>(out), "cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require_input(static_cast<bool>(out), "write failed for '" + path.string() + "'");
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["sets"] = nlohmann::json::array();
  for (const auto& s : m.sets) {
    nlohmann::json js;
    js["set_name"] = s.set_name;
    if (!s.samples_file.empty()) js["samples_file"] = s.samples_file;
    js["layers"] = nlohmann::json::array();
    for (const auto& l : s.layers) {
      js["layers"].push_back({{"layer_name", l.layer_name},
                              {"rows", l.rows},
                              {"cols", l.cols},
                              {"dtype", l.dtype},
                              {"file", l.file}});
    }
    j["sets"].push_back(std::move(js));
  }
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    require_input(m.format_version == kFormatVersion,
                  "unsupported format_version " + std::to_string(m.format_version));
    for (const auto& js : j.at("sets")) {
      SetDescriptor s;
      s.set_name = js.at("set_name").get<std::string>();
      s.samples_file = js.value("samples_file", std::string{});
      for (const auto& jl : js.at("layers")) {
        LayerDescriptor l;
        l.layer_name = jl.at("layer_name").get<std::string>();
        l.rows = jl.at("rows").get<std::size_t>();
        l.cols = jl.at("cols").get<std::size_t>();
        l.dtype = jl.at("dtype").get<std::string>();
        l.file = jl.at("file").get<std::string>();
        require_input(l.dtype == kDtype, "unsupported dtype '" + l.dtype + "'");
        s.layers.push_back(std::move(l));
      }
      m.sets.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline Manifest read_manifest(const fs::path& directory) {
  const fs::path path = directory / kManifestName;
  require_input(fs::exists(path), "no " + std::string(kManifestName) + " in '" + directory.string() + "'");
  try {
    return manifest_from_json(nlohmann::json::parse(detail::read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("cannot parse '" + path.string() + "': " + e.what());
  }
}

// Writes the set's layer binaries and sample list into `directory` and records
// the set in manifest.json. An existing set with the same name is replaced;
// other sets already in the manifest are kept.
inline Manifest write_activation_set(const ActivationSet& set, const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  require_input(!ec && fs::is_directory(directory),
                "cannot create directory '" + directory.string() + "'");

  Manifest manifest;
  if (fs::exists(directory / kManifestName)) manifest = read_manifest(directory);

  SetDescriptor desc;
  desc.set_name = set.name();
  const std::string stem = detail::safe_file_component(set.name());
  desc.samples_file = stem + ".samples.txt";
  for (const auto& layer : set.layers()) {
    for (float v : layer.values())
      require_input(std::isfinite(v), "refusing to write non-finite value in layer '" + layer.name() + "'");
    LayerDescriptor l;
    l.layer_name = layer.name();
    l.rows = layer.rows();
    l.cols = layer.cols();
    l.file = stem + "__" + detail::safe_file_component(layer.name()) + ".f32";
    detail::write_floats(directory / l.file, layer.values());
    desc.layers.push_back(std::move(l));
  }
  std::string samples;
  for (const auto& id : set.sample_ids()) samples += id + "\n";
  detail::write_text_file(directory / desc.samples_file, samples);

  auto it = std::find_if(manifest.sets.begin(), manifest.sets.end(),
                         [&](const auto& s) { return s.set_name == set.name(); });
  if (it != manifest.sets.end()) {
    *it = desc;
  } else {
    manifest.sets.push_back(desc);
  }
  detail::write_text_file(directory / kManifestName, manifest_to_json(manifest).dump(2) + "\n");
  return manifest;
}

inline ActivationSet load_set(const fs::path& directory, const SetDescriptor& desc) {
  std::vector<LayerActivations> layers;
  for (const auto& l : desc.layers) {
    auto values = detail::read_floats(directory / l.file, l.rows * l.cols);
    layers.emplace_back(l.layer_name, l.rows, l.cols, std::move(values));
  }
  require_input(!layers.empty(), "set '" + desc.set_name + "' has no layers");

  std::vector<std::string> ids;
  fs::path samples_path;
  if (!desc.samples_file.empty()) {
    samples_path = directory / desc.samples_file;
    require_input(fs::exists(samples_path), "missing samples file '" + samples_path.string() + "'");
  } else if (fs::exists(directory / "samples.txt")) {
    samples_path = directory / "samples.txt";
  }
  if (!samples_path.empty()) {
    ids = detail::read_lines(samples_path);
  } else {
    for (std::size_t r = 0; r < layers.front().rows(); ++r) ids.push_back(std::to_string(r));
  }
  return ActivationSet(desc.set_name, std::move(ids), std::move(layers));
}

// Reads the only set in the store, or the one named `set_name`.
inline ActivationSet read_activation_set(const fs::path& directory, std::string_view set_name = {}) {
  const Manifest manifest = read_manifest(directory);
  require_input(!manifest.sets.empty(), "manifest in '" + directory.string() + "' lists no sets");
  if (set_name.empty()) {
    require_input(manifest.sets.size() == 1,
                  "store '" + directory.string() + "' holds several sets; name one explicitly");
    return load_set(directory, manifest.sets.front());
  }
  for (const auto& s : manifest.sets)
    if (s.set_name == set_name) return load_set(directory, s);
  throw InputError("store '" + directory.string() + "' has no set '" + std::string(set_name) + "'");
}

struct CsvLayer {
  LayerActivations layer;
  std::vector<std::string> sample_ids;
};

namespace detail {

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view cell, const std::string& where) {
  cell = trim(cell);
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  require_input(ec == std::errc() && ptr == end && !cell.empty(),
                "non-numeric cell '" + std::string(cell) + "' at " + where);
  return v;
}

}  // namespace detail

// Parses "sample_id,node_0,...,node_{J-1}" with one sample per row.
inline CsvLayer import_csv_layer_text(std::string_view text, const std::string& layer_name) {
  std::istringstream in{std::string(text)};
  std::string line;
  require_input(static_cast<bool>(std::getline(in, line)), "CSV is empty; a header row is required");
  const auto header = detail::split(detail::trim(line), ',');
  require_input(header.size() >= 2, "CSV header must have sample_id and at least one node column");
  const std::size_t cols = header.size() - 1;

  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(detail::trim(line), ',');
    require_input(cells.size() == cols + 1,
                  "ragged row at line " + std::to_string(line_no) + ": " +
                      std::to_string(cells.size() - 1) + " values, expected " + std::to_string(cols));
    ids.emplace_back(detail::trim(cells[0]));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const double v = detail::parse_double(cells[c], "line " + std::to_string(line_no));
      require_input(std::isfinite(static_cast<float>(v)),
                    "non-finite value at line " + std::to_string(line_no));
      values.push_back(static_cast<float>(v));
    }
  }
  require_input(!ids.empty(), "CSV has no data rows");
  const std::size_t rows = ids.size();
  return CsvLayer{LayerActivations(layer_name, rows, cols, std::move(values)), std::move(ids)};
}

inline CsvLayer import_csv_layer(const fs::path& file, const std::string& layer_name) {
  return import_csv_layer_text(detail::read_text_file(file), layer_name);
}

}  // namespace latent_scan
