#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "jebm/data.hpp"
#include "jebm/model.hpp"
#include "jebm/training.hpp"

namespace jebm {

/// Thrown on malformed config files; message includes the line number.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// TOML subset value: booleans, integers, floats, quoted strings, and
/// (possibly nested) single-line arrays.
struct TomlValue {
  using Array = std::vector<TomlValue>;
  std::variant<bool, std::int64_t, double, std::string, Array> v;
  int line = 0;

  bool is_array() const { return std::holds_alternative<Array>(v); }
  bool as_bool() const;
  std::int64_t as_int() const;
  double as_double() const;  // accepts integers
  const std::string& as_string() const;
  const Array& as_array() const;
};

using TomlTable = std::map<std::string, TomlValue>;

struct TomlDocument {
  TomlTable root;
  std::map<std::string, TomlTable> sections;
};

/// Parses the supported TOML subset: comments, [section] headers, and
/// key = value lines. Errors carry the 1-based line number.
TomlDocument parse_toml(const std::string& text);
TomlDocument parse_toml_file(const std::string& path);

struct DataConfig {
  std::string kind = "mixture";  // mixture | pinwheel | rings | file
  std::size_t n = 2000;
  std::vector<std::vector<double>> centers = {{-2.0, 0.0}, {2.0, 0.0}};
  double std_dev = 0.2;
  std::size_t arms = 5;
  std::vector<double> radii = {1.0, 2.5};
  std::string path;  // kind = file
};

struct AppConfig {
  ModelConfig model;
  TrainerConfig trainer;  // holds prior_sampler / posterior_sampler
  DataConfig data;
};

/// Binds a parsed document to the typed configs. Unknown keys and a missing
/// or unsupported schema_version are errors.
AppConfig bind_config(const TomlDocument& doc);
AppConfig load_config(const std::string& path);

/// Generates a dataset (or loads one for kind = file) per the data section.
Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed);

}  // namespace jebm
