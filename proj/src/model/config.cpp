#include "hrt/model/config.hpp"

#include <stdexcept>

namespace hrt::model {

void ModelConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("vocab-size must be positive");
  if (model_dim == 0 || ffn_dim == 0) throw std::invalid_argument("model-dim and ffn-dim must be positive");
  if (heads == 0 || model_dim % heads != 0) throw std::invalid_argument("model-dim must be divisible by heads");
  if (encoder_layers < 1 || decoder_layers < 1) throw std::invalid_argument("need at least one encoder and one decoder layer");
  if (max_position < 2) throw std::invalid_argument("max-position must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (chunk_size < 1) throw std::invalid_argument("chunk size must be >= 1");
}

bool ModelConfig::same_shapes(const ModelConfig& o) const {
  return vocab_size == o.vocab_size && model_dim == o.model_dim && ffn_dim == o.ffn_dim && heads == o.heads &&
         encoder_layers == o.encoder_layers && decoder_layers == o.decoder_layers && max_position == o.max_position;
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["model_dim"] = model_dim;
  j["ffn_dim"] = ffn_dim;
  j["heads"] = heads;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["max_position"] = max_position;
  j["dropout"] = dropout;
  j["chunk_size"] = chunk_size;
  j["length_head"] = length_head;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.max_position = j.value("max_position", c.max_position);
  c.dropout = j.value("dropout", c.dropout);
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  c.length_head = j.value("length_head", c.length_head);
  c.validate();
  return c;
}

}  // namespace hrt::model
