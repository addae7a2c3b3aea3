#pragma once

#include <cstddef>

#include "json.hpp"

namespace hrt::model {

enum class DecoderMode { CAUSAL, FULL };

// Length head classes cover target-length offsets -kLengthRange..+kLengthRange
// relative to the source length.
inline constexpr int kLengthRange = 8;
inline constexpr std::size_t kLengthClasses = 2 * kLengthRange + 1;

struct ModelConfig {
  std::size_t vocab_size = 72;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t max_position = 256;
  double dropout = 0.0;
  std::size_t chunk_size = 2;
  bool length_head = false;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  bool same_shapes(const ModelConfig& other) const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace hrt::model
