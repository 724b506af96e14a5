#include "jebm/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace jebm {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config: line " + std::to_string(line) + ": " + msg);
}

struct Cursor {
  const std::string& s;
  std::size_t i = 0;
  int line;

  bool done() const { return i >= s.size(); }
  char peek() const { return s[i]; }
  void skip_ws() {
    while (!done() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
};

TomlValue parse_value(Cursor& c);

TomlValue parse_string(Cursor& c) {
  ++c.i;  // opening quote
  std::string out;
  while (!c.done() && c.peek() != '"') {
    char ch = c.s[c.i++];
    if (ch == '\\') {
      if (c.done()) fail(c.line, "unterminated escape in string");
      char e = c.s[c.i++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(c.line, std::string("unsupported escape \\") + e);
      }
    } else {
      out += ch;
    }
  }
  if (c.done()) fail(c.line, "unterminated string");
  ++c.i;  // closing quote
  return TomlValue{out, c.line};
}

TomlValue parse_array(Cursor& c) {
  ++c.i;  // '['
  TomlValue::Array arr;
  c.skip_ws();
  if (!c.done() && c.peek() == ']') {
    ++c.i;
    return TomlValue{arr, c.line};
  }
  while (true) {
    c.skip_ws();
    arr.push_back(parse_value(c));
    c.skip_ws();
    if (c.done()) fail(c.line, "unterminated array");
    char ch = c.s[c.i++];
    if (ch == ']') break;
    if (ch != ',') fail(c.line, "expected ',' or ']' in array");
  }
  return TomlValue{arr, c.line};
}

TomlValue parse_scalar(Cursor& c) {
  std::size_t start = c.i;
  while (!c.done() && c.peek() != ',' && c.peek() != ']' && c.peek() != '#' &&
         c.peek() != ' ' && c.peek() != '\t')
    ++c.i;
  std::string tok = c.s.substr(start, c.i - start);
  if (tok.empty()) fail(c.line, "missing value");
  if (tok == "true") return TomlValue{true, c.line};
  if (tok == "false") return TomlValue{false, c.line};

  bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                     tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
  if (!looks_float) {
    std::int64_t iv = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (ec == std::errc() && p == tok.data() + tok.size())
      return TomlValue{iv, c.line};
  }
  try {
    std::size_t used = 0;
    double dv = std::stod(tok, &used);
    if (used == tok.size()) return TomlValue{dv, c.line};
  } catch (const std::exception&) {
  }
  fail(c.line, "cannot parse value '" + tok + "'");
}

TomlValue parse_value(Cursor& c) {
  c.skip_ws();
  if (c.done()) fail(c.line, "missing value");
  char ch = c.peek();
  if (ch == '"') return parse_string(c);
  if (ch == '[') return parse_array(c);
  return parse_scalar(c);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char ch : k)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'))
      return false;
  return true;
}

}  // namespace

bool TomlValue::as_bool() const {
  if (const bool* b = std::get_if<bool>(&v)) return *b;
  fail(line, "expected a boolean");
}

std::int64_t TomlValue::as_int() const {
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v)) return *i;
  fail(line, "expected an integer");
}

double TomlValue::as_double() const {
  if (const double* d = std::get_if<double>(&v)) return *d;
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v))
    return static_cast<double>(*i);
  fail(line, "expected a number");
}

const std::string& TomlValue::as_string() const {
  if (const std::string* s = std::get_if<std::string>(&v)) return *s;
  fail(line, "expected a string");
}

const TomlValue::Array& TomlValue::as_array() const {
  if (const Array* a = std::get_if<Array>(&v)) return *a;
  fail(line, "expected an array");
}

TomlDocument parse_toml(const std::string& text) {
  TomlDocument doc;
  TomlTable* current = &doc.root;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    Cursor c{raw, 0, line_no};
    c.skip_ws();
    if (c.done() || c.peek() == '#') continue;
    if (c.peek() == '[') {
      std::size_t close = raw.find(']', c.i);
      if (close == std::string::npos) fail(line_no, "unterminated section header");
      std::string name = raw.substr(c.i + 1, close - c.i - 1);
      if (!valid_key(name)) fail(line_no, "bad section name '" + name + "'");
      c.i = close + 1;
      c.skip_ws();
      if (!c.done() && c.peek() != '#')
        fail(line_no, "trailing characters after section header");
      current = &doc.sections[name];
      continue;
    }
    std::size_t eq = raw.find('=', c.i);
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    std::string key = raw.substr(c.i, eq - c.i);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    if (!valid_key(key)) fail(line_no, "bad key '" + key + "'");
    c.i = eq + 1;
    TomlValue val = parse_value(c);
    c.skip_ws();
    if (!c.done() && c.peek() != '#') fail(line_no, "trailing characters after value");
    if (current->count(key)) fail(line_no, "duplicate key '" + key + "'");
    (*current)[key] = std::move(val);
  }
  return doc;
}

TomlDocument parse_toml_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_toml(ss.str());
}

namespace {

/// Tracks which keys a section binder consumed so typos are rejected.
struct Binder {
  const TomlTable& table;
  std::string section;
  std::map<std::string, bool> seen;

  Binder(const TomlTable& t, std::string name) : table(t), section(std::move(name)) {
    for (const auto& [k, v] : table) seen[k] = false;
  }

  const TomlValue* find(const std::string& key) {
    auto it = table.find(key);
    if (it == table.end()) return nullptr;
    seen[key] = true;
    return &it->second;
  }

  void get(const std::string& key, double& out) {
    if (const TomlValue* v = find(key)) out = v->as_double();
  }
  void get(const std::string& key, bool& out) {
    if (const TomlValue* v = find(key)) out = v->as_bool();
  }
  void get(const std::string& key, std::string& out) {
    if (const TomlValue* v = find(key)) out = v->as_string();
  }
  template <typename Int>
  void get_int(const std::string& key, Int& out) {
    if (const TomlValue* v = find(key)) {
      std::int64_t i = v->as_int();
      if (std::is_unsigned_v<Int> && i < 0)
        fail(v->line, "key '" + key + "' must be non-negative");
      out = static_cast<Int>(i);
    }
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const TomlValue* v = find(key)) {
      out.clear();
      for (const TomlValue& e : v->as_array()) {
        std::int64_t i = e.as_int();
        if (i < 0) fail(e.line, "key '" + key + "' entries must be non-negative");
        out.push_back(static_cast<std::size_t>(i));
      }
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const TomlValue* v = find(key)) {
      out.clear();
      for (const TomlValue& e : v->as_array()) out.push_back(e.as_double());
    }
  }
  void get(const std::string& key, std::vector<std::vector<double>>& out) {
    if (const TomlValue* v = find(key)) {
      out.clear();
      for (const TomlValue& row : v->as_array()) {
        std::vector<double> r;
        for (const TomlValue& e : row.as_array()) r.push_back(e.as_double());
        out.push_back(std::move(r));
      }
    }
  }

  void finish() {
    for (const auto& [k, used] : seen)
      if (!used)
        fail(table.at(k).line, "unknown key '" + k + "' in [" + section + "]");
  }
};

void bind_sampler(const TomlTable& t, const std::string& name, LangevinConfig& cfg) {
  Binder b(t, name);
  b.get_int("steps", cfg.steps);
  b.get("step_size", cfg.step_size);
  b.get("noise_enabled", cfg.noise_enabled);
  if (const TomlValue* v = b.find("space")) {
    const std::string& s = v->as_string();
    if (s == "z")
      cfg.space = LangevinConfig::Space::Z;
    else if (s == "epsilon")
      cfg.space = LangevinConfig::Space::Epsilon;
    else
      fail(v->line, "space must be \"z\" or \"epsilon\"");
  }
  if (const TomlValue* v = b.find("clamp_grad")) cfg.clamp_grad = v->as_double();
  b.get_int("thin", cfg.thin);
  b.finish();
  cfg.validate();
}

}  // namespace

AppConfig bind_config(const TomlDocument& doc) {
  {
    Binder b(doc.root, "<root>");
    const TomlValue* v = b.find("schema_version");
    if (!v) throw ConfigError("config: missing schema_version");
    if (v->as_int() != 1)
      fail(v->line, "unsupported schema_version " + std::to_string(v->as_int()));
    b.finish();
  }
  for (const auto& [name, table] : doc.sections)
    if (name != "model" && name != "prior_sampler" && name != "posterior_sampler" &&
        name != "trainer" && name != "data")
      fail(table.empty() ? 0 : table.begin()->second.line,
           "unknown section [" + name + "]");

  AppConfig app;
  if (auto it = doc.sections.find("model"); it != doc.sections.end()) {
    Binder b(it->second, "model");
    b.get("latent_dims", app.model.latent_dims);
    b.get_int("data_dim", app.model.data_dim);
    b.get("energy_hidden", app.model.energy_hidden);
    b.get("conditional_hidden", app.model.conditional_hidden);
    b.get("decoder_hidden", app.model.decoder_hidden);
    b.get("inference_hidden", app.model.inference_hidden);
    b.get("observation_sigma", app.model.observation_sigma);
    b.get("lrelu_slope", app.model.lrelu_slope);
    b.get("decoder_tanh", app.model.decoder_tanh);
    b.get("energy_weight_std", app.model.energy_weight_std);
    b.get("dtype", app.model.dtype);
    b.finish();
    app.model.validate();
  }
  if (auto it = doc.sections.find("prior_sampler"); it != doc.sections.end())
    bind_sampler(it->second, "prior_sampler", app.trainer.prior_sampler);
  if (auto it = doc.sections.find("posterior_sampler"); it != doc.sections.end())
    bind_sampler(it->second, "posterior_sampler", app.trainer.posterior_sampler);
  if (auto it = doc.sections.find("trainer"); it != doc.sections.end()) {
    Binder b(it->second, "trainer");
    if (const TomlValue* v = b.find("mode")) {
      const std::string& s = v->as_string();
      if (s == "mle")
        app.trainer.mode = TrainerConfig::Mode::Mle;
      else if (s == "variational")
        app.trainer.mode = TrainerConfig::Mode::Variational;
      else if (s == "two_stage")
        app.trainer.mode = TrainerConfig::Mode::TwoStage;
      else
        fail(v->line, "mode must be \"mle\", \"variational\", or \"two_stage\"");
    }
    b.get_int("batch_size", app.trainer.batch_size);
    b.get_int("iterations", app.trainer.iterations);
    b.get("lr_alpha", app.trainer.lr_alpha);
    b.get("lr_beta", app.trainer.lr_beta);
    b.get("lr_omega", app.trainer.lr_omega);
    b.get("adam_beta1", app.trainer.adam.beta1);
    b.get("adam_beta2", app.trainer.adam.beta2);
    b.get("adam_eps", app.trainer.adam.eps);
    b.get_int("n_prior_chains", app.trainer.n_prior_chains);
    b.get_int("seed", app.trainer.seed);
    b.get_int("checkpoint_every", app.trainer.checkpoint_every);
    b.get_int("log_every", app.trainer.log_every);
    b.get_int("stage1_iterations", app.trainer.stage1_iterations);
    b.get("persistent_posterior_chains", app.trainer.persistent_posterior_chains);
    b.get("detach_positive_path", app.trainer.detach_positive_path);
    b.get("plain_sgd", app.trainer.plain_sgd);
    b.get("energy_l2", app.trainer.energy_l2);
    b.finish();
    app.trainer.validate();
  }
  if (auto it = doc.sections.find("data"); it != doc.sections.end()) {
    Binder b(it->second, "data");
    if (const TomlValue* v = b.find("kind")) {
      const std::string& s = v->as_string();
      if (s != "mixture" && s != "pinwheel" && s != "rings" && s != "file")
        fail(v->line, "kind must be mixture, pinwheel, rings, or file");
      app.data.kind = s;
    }
    b.get_int("n", app.data.n);
    b.get("centers", app.data.centers);
    b.get("std_dev", app.data.std_dev);
    b.get_int("arms", app.data.arms);
    b.get("radii", app.data.radii);
    b.get("path", app.data.path);
    b.finish();
  }
  return app;
}

AppConfig load_config(const std::string& path) {
  return bind_config(parse_toml_file(path));
}

Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed) {
  RngStream rng = make_stream(seed, "data/gen", 0);
  if (cfg.kind == "mixture") return gen_mixture(cfg.n, cfg.centers, cfg.std_dev, rng);
  if (cfg.kind == "pinwheel") return gen_pinwheel(cfg.n, cfg.arms, rng);
  if (cfg.kind == "rings") return gen_rings(cfg.n, cfg.radii, rng);
  if (cfg.kind == "file") return load_dataset(cfg.path);
  throw ConfigError("config: unknown data kind " + cfg.kind);
}

}  // namespace jebm
