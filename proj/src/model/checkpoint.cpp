#include "hrt/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace hrt::model {

namespace {

constexpr char kMagic[] = "HRTCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "hrt-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = ckpt.config.to_json();
  manifest["step"] = ckpt.step;
  manifest["meta"] = ckpt.meta;
  auto params = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& p : ckpt.parameters) {
    if (tensor::shape_size(p.shape) != p.values.size()) {
      throw std::invalid_argument("parameter " + p.name + " has inconsistent shape");
    }
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["shape"] = p.shape;
    e["offset"] = offset;
    params.push_back(e);
    offset += p.values.size();
  }
  manifest["parameters"] = params;
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, kMagicLen);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : ckpt.parameters) {
    os.write(reinterpret_cast<const char*>(p.values.data()),
             static_cast<std::streamsize>(p.values.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  is.read(magic, kMagicLen);
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("truncated checkpoint manifest in " + path.string());
  const auto manifest = nlohmann::ordered_json::parse(text);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(manifest.at("config"));
  ckpt.step = manifest.at("step").get<std::uint64_t>();
  ckpt.meta = manifest.at("meta");
  for (const auto& e : manifest.at("parameters")) {
    StoredParameter p;
    p.name = e.at("name").get<std::string>();
    p.shape = e.at("shape").get<tensor::Shape>();
    p.values.resize(tensor::shape_size(p.shape));
    is.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated parameter data for " + p.name + " in " + path.string());
    ckpt.parameters.push_back(std::move(p));
  }
  return ckpt;
}

template <typename T>
Checkpoint make_checkpoint(const Transformer<T>& model, std::uint64_t step, nlohmann::ordered_json meta) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.step = step;
  ckpt.meta = std::move(meta);
  for (const auto& [name, t] : model.named_parameters()) {
    StoredParameter p{name, t.shape(), {}};
    p.values.reserve(t.size());
    for (T v : t.values()) p.values.push_back(static_cast<float>(v));
    ckpt.parameters.push_back(std::move(p));
  }
  return ckpt;
}

template <typename T>
void load_parameters(Transformer<T>& model, const Checkpoint& ckpt, bool allow_missing) {
  std::map<std::string, const StoredParameter*> stored;
  for (const auto& p : ckpt.parameters) {
    if (!stored.emplace(p.name, &p).second) throw std::invalid_argument("duplicate parameter " + p.name);
  }
  for (auto& [name, t] : model.named_parameters()) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      if (allow_missing) continue;
      throw std::invalid_argument("checkpoint lacks parameter " + name);
    }
    if (it->second->shape != t.shape()) {
      throw std::invalid_argument("parameter " + name + " has shape " + tensor::shape_string(it->second->shape) +
                                  " in checkpoint but " + tensor::shape_string(t.shape()) + " in model");
    }
    auto dst = Tensor<T>(t).mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
}

template <typename T>
Transformer<T> model_from_checkpoint(const Checkpoint& ckpt) {
  Transformer<T> model(ckpt.config);
  load_parameters(model, ckpt);
  return model;
}

template Checkpoint make_checkpoint<float>(const Transformer<float>&, std::uint64_t, nlohmann::ordered_json);
template Checkpoint make_checkpoint<double>(const Transformer<double>&, std::uint64_t, nlohmann::ordered_json);
template void load_parameters<float>(Transformer<float>&, const Checkpoint&, bool);
template void load_parameters<double>(Transformer<double>&, const Checkpoint&, bool);
template Transformer<float> model_from_checkpoint<float>(const Checkpoint&);
template Transformer<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace hrt::model
