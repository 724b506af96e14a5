#include "jebm/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace jebm {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

void append_mlp(std::vector<std::pair<std::string, Tensor*>>& out,
                const std::string& prefix, Mlp& mlp) {
  for (std::size_t j = 0; j < mlp.weights.size(); ++j) {
    out.emplace_back(prefix + ".w" + std::to_string(j), &mlp.weights[j]);
    out.emplace_back(prefix + ".b" + std::to_string(j), &mlp.biases[j]);
  }
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["latent_dims"] = c.latent_dims;
  j["data_dim"] = c.data_dim;
  j["energy_hidden"] = c.energy_hidden;
  j["conditional_hidden"] = c.conditional_hidden;
  j["decoder_hidden"] = c.decoder_hidden;
  j["inference_hidden"] = c.inference_hidden;
  j["observation_sigma"] = c.observation_sigma;
  j["lrelu_slope"] = c.lrelu_slope;
  j["decoder_tanh"] = c.decoder_tanh;
  j["energy_weight_std"] = c.energy_weight_std;
  j["dtype"] = c.dtype;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.latent_dims = j.at("latent_dims").get<std::vector<std::size_t>>();
  c.data_dim = j.at("data_dim").get<std::size_t>();
  c.energy_hidden = j.at("energy_hidden").get<std::vector<std::size_t>>();
  c.conditional_hidden = j.at("conditional_hidden").get<std::vector<std::size_t>>();
  c.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
  c.inference_hidden = j.at("inference_hidden").get<std::vector<std::size_t>>();
  c.observation_sigma = j.at("observation_sigma").get<double>();
  c.lrelu_slope = j.at("lrelu_slope").get<double>();
  c.decoder_tanh = j.at("decoder_tanh").get<bool>();
  c.energy_weight_std = j.at("energy_weight_std").get<double>();
  c.dtype = j.at("dtype").get<std::string>();
  c.validate();
  return c;
}

std::size_t value_width(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw CheckpointError("checkpoint: unsupported dtype " + dtype);
}

void write_values(std::ostream& os, const Tensor& t, std::size_t width) {
  for (double v : t.data()) {
    if (width == 4) {
      float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      os.write(buf, 4);
    } else {
      char buf[8];
      std::memcpy(buf, &v, 8);
      os.write(buf, 8);
    }
  }
}

void read_values(std::istream& is, Tensor& t, std::size_t width, const std::string& name) {
  for (double& v : t.data()) {
    char buf[8];
    is.read(buf, static_cast<std::streamsize>(width));
    if (!is) throw CheckpointError("checkpoint: weights.bin truncated at tensor " + name);
    if (width == 4) {
      float f;
      std::memcpy(&f, buf, 4);
      v = static_cast<double>(f);
    } else {
      std::memcpy(&v, buf, 8);
    }
  }
}

json load_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw CheckpointError("checkpoint: cannot open " + dir + "/manifest.json");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad manifest.json: ") + e.what());
  }
  if (j.value("schema_version", -1) != kSchemaVersion)
    throw CheckpointError("checkpoint: unsupported schema_version");
  return j;
}

/// Optimizer moment tensors paired with their parameter, named for the index.
std::vector<std::pair<std::string, Tensor*>> optimizer_tensors(
    Adam& adam, const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const auto& [name, p] : params) {
    Adam::State& st = adam.state_for(p);
    if (st.m.empty()) st.m = Tensor::zeros(p->shape());
    if (st.v.empty()) st.v = Tensor::zeros(p->shape());
    out.emplace_back("opt." + name + ".m", &st.m);
    out.emplace_back("opt." + name + ".v", &st.v);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(Models& models) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < models.prior.energies.size(); ++i)
    append_mlp(out, "prior.energy" + std::to_string(i + 1), models.prior.energies[i].net);
  for (std::size_t i = 0; i < models.prior.layers.size(); ++i)
    append_mlp(out, "prior.layer" + std::to_string(i + 1),
               models.prior.layers[i].trunk);
  append_mlp(out, "decoder", models.decoder.net);
  for (std::size_t i = 0; i < models.inference.heads.size(); ++i)
    append_mlp(out, "inference.head" + std::to_string(i + 1),
               models.inference.heads[i]);
  return out;
}

void save_checkpoint(const std::string& dir, Models& models, Trainer* trainer) {
  std::filesystem::create_directories(dir);
  std::size_t width = value_width(models.config.dtype);
  auto params = named_parameters(models);

  json index = json::array();
  std::size_t offset = 0;
  std::ofstream wb(dir + "/weights.bin", std::ios::binary);
  if (!wb) throw CheckpointError("checkpoint: cannot open " + dir + "/weights.bin");
  auto emit = [&](const std::string& name, const Tensor& t) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    write_values(wb, t, width);
    offset += t.size() * width;
  };
  for (const auto& [name, p] : params) emit(name, *p);

  json manifest;
  manifest["format"] = "jebm-checkpoint";
  manifest["schema_version"] = kSchemaVersion;
  manifest["model"] = config_to_json(models.config);
  manifest["dtype"] = models.config.dtype;

  if (trainer) {
    auto opt = optimizer_tensors(trainer->optimizer(), params);
    for (const auto& [name, t] : opt) emit(name, *t);
    json steps = json::array();
    for (const auto& [name, p] : params)
      steps.push_back({{"name", name}, {"t", trainer->optimizer().state_for(p).t}});
    manifest["trainer"] = {{"iteration", trainer->iteration()}, {"adam_t", steps}};
  }
  manifest["tensors"] = index;
  wb.close();
  if (!wb) throw CheckpointError("checkpoint: failed writing " + dir + "/weights.bin");

  std::string tmp = dir + "/manifest.json.tmp";
  {
    std::ofstream mf(tmp);
    if (!mf) throw CheckpointError("checkpoint: cannot open " + tmp);
    mf << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir + "/manifest.json");
}

namespace {

struct IndexEntry {
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
};

std::unordered_map<std::string, IndexEntry> tensor_index(const json& manifest) {
  std::unordered_map<std::string, IndexEntry> idx;
  for (const auto& e : manifest.at("tensors")) {
    IndexEntry ent;
    ent.shape = e.at("shape").get<std::vector<std::size_t>>();
    ent.offset = e.at("offset").get<std::size_t>();
    idx[e.at("name").get<std::string>()] = std::move(ent);
  }
  return idx;
}

void load_tensor(std::istream& wb, const IndexEntry& ent, std::size_t width,
                 const std::string& name, Tensor& dst) {
  if (ent.shape != dst.shape())
    throw CheckpointError("checkpoint: shape mismatch for tensor " + name);
  wb.seekg(static_cast<std::streamoff>(ent.offset));
  read_values(wb, dst, width, name);
}

}  // namespace

Models load_checkpoint(const std::string& dir) {
  json manifest = load_manifest(dir);
  ModelConfig cfg = config_from_json(manifest.at("model"));
  Models models = build_models(cfg, /*seed=*/0);
  std::size_t width = value_width(manifest.at("dtype").get<std::string>());
  auto idx = tensor_index(manifest);

  std::ifstream wb(dir + "/weights.bin", std::ios::binary);
  if (!wb) throw CheckpointError("checkpoint: cannot open " + dir + "/weights.bin");
  for (auto& [name, p] : named_parameters(models)) {
    auto it = idx.find(name);
    if (it == idx.end())
      throw CheckpointError("checkpoint: missing tensor " + name + " in manifest");
    load_tensor(wb, it->second, width, name, *p);
  }
  return models;
}

bool checkpoint_has_trainer(const std::string& dir) {
  return load_manifest(dir).contains("trainer");
}

void restore_trainer(const std::string& dir, Models& models, Trainer& trainer) {
  json manifest = load_manifest(dir);
  if (!manifest.contains("trainer"))
    throw CheckpointError("checkpoint: no trainer state in " + dir);
  std::size_t width = value_width(manifest.at("dtype").get<std::string>());
  auto idx = tensor_index(manifest);

  std::ifstream wb(dir + "/weights.bin", std::ios::binary);
  if (!wb) throw CheckpointError("checkpoint: cannot open " + dir + "/weights.bin");

  std::unordered_map<std::string, std::int64_t> steps;
  for (const auto& e : manifest["trainer"].at("adam_t"))
    steps[e.at("name").get<std::string>()] = e.at("t").get<std::int64_t>();

  for (auto& [name, p] : named_parameters(models)) {
    Adam::State& st = trainer.optimizer().state_for(p);
    st.m = Tensor::zeros(p->shape());
    st.v = Tensor::zeros(p->shape());
    auto mi = idx.find("opt." + name + ".m");
    auto vi = idx.find("opt." + name + ".v");
    if (mi == idx.end() || vi == idx.end())
      throw CheckpointError("checkpoint: missing optimizer state for " + name);
    load_tensor(wb, mi->second, width, mi->first, st.m);
    load_tensor(wb, vi->second, width, vi->first, st.v);
    auto ti = steps.find(name);
    st.t = ti == steps.end() ? 0 : ti->second;
  }
  trainer.set_iteration(manifest["trainer"].at("iteration").get<std::int64_t>());
}

}  // namespace jebm
