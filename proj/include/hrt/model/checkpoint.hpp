#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hrt/model/config.hpp"
#include "hrt/model/transformer.hpp"
#include "json.hpp"

namespace hrt::model {

struct StoredParameter {
  std::string name;
  tensor::Shape shape;
  std::vector<float> values;
};

// On disk: the magic line "HRTCKPT1\n", a little-endian uint64 manifest byte
// count, the UTF-8 JSON manifest, then float32 little-endian arrays in
// manifest order.
struct Checkpoint {
  ModelConfig config;
  std::vector<StoredParameter> parameters;
  std::uint64_t step = 0;
  // Free-form provenance (training mode, data, parent checkpoint, ...).
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint make_checkpoint(const Transformer<T>& model, std::uint64_t step,
                           nlohmann::ordered_json meta = nlohmann::ordered_json::object());

// Copies stored values into the model. Throws std::invalid_argument naming
// the first parameter whose name or shape differs; `allow_missing` tolerates
// model parameters absent from the checkpoint (e.g. a fresh length head).
template <typename T>
void load_parameters(Transformer<T>& model, const Checkpoint& ckpt, bool allow_missing = false);

template <typename T>
Transformer<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace hrt::model
