#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hrt/common/rng.hpp"
#include "hrt/model/config.hpp"
#include "hrt/tensor/tensor.hpp"

namespace hrt::model {

using tensor::Tensor;
using TokenSeq = std::vector<std::int32_t>;

// Encoded sources packed row-wise: source s occupies rows
// [offset[s], offset[s] + length[s]) of `states`.
template <typename T>
struct Memory {
  Tensor<T> states;
  std::vector<std::size_t> offset, length;
  // Indexed by row; nonzero marks a PAD token.
  std::vector<std::uint8_t> pad;

  std::size_t sources() const { return offset.size(); }
};

// Packed decoder inputs. Segment s reads ids/positions
// [offset[s], offset[s] + length[s]) and attends encoded source memory_index[s].
struct DecoderBatch {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> positions;
  std::vector<std::size_t> offset, length, memory_index;
  DecoderMode mode = DecoderMode::CAUSAL;

  void add(std::span<const std::int32_t> seq_ids, std::span<const std::int32_t> seq_positions, std::size_t memory);
  std::size_t segments() const { return offset.size(); }
  std::size_t rows() const { return ids.size(); }
};

// Keys carry no bias: a key bias shifts every score of a query equally and
// cancels in the softmax.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;
};

template <typename T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct NormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct EncoderLayer {
  NormParams<T> attn_norm, ffn_norm;
  AttentionParams<T> attn;
  FeedForwardParams<T> ffn;
};

template <typename T>
struct DecoderLayer {
  NormParams<T> self_norm, cross_norm, ffn_norm;
  AttentionParams<T> self_attn, cross_attn;
  FeedForwardParams<T> ffn;
};

// Everything the decoder reads. The embedding is tied to the output
// projection.
template <typename T>
struct DecoderStack {
  Tensor<T> embed;
  std::vector<DecoderLayer<T>> layers;
  NormParams<T> final_norm;
};


// Transformer encoder plus one decoder stack shared by the causal and the
// unmasked self-attention modes.
template <typename T>
class Transformer {
 public:
  explicit Transformer(ModelConfig config, std::uint64_t seed = 1);

  const ModelConfig& config() const { return config_; }

  // Parameters in a fixed order with unique names.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void set_requires_grad(bool on);

  // `dropout_rng` enables dropout when the configured rate is positive.
  Memory<T> encode(std::span<const TokenSeq> sources, Rng* dropout_rng = nullptr) const;
  Tensor<T> decode(const DecoderBatch& batch, const Memory<T>& memory, Rng* dropout_rng = nullptr) const;
  // Single-sequence convenience wrapper around decode().
  Tensor<T> decode_step(std::span<const std::int32_t> ids, std::span<const std::int32_t> positions,
                        const Memory<T>& memory, DecoderMode mode) const;
  // [sources x kLengthClasses] logits; requires config().length_head.
  Tensor<T> length_logits(const Memory<T>& memory) const;

  // Parameters read by a decoder mode.
  std::vector<Tensor<T>> decoder_parameters(DecoderMode mode) const;
  // Gives the unmasked mode its own deep copy of the decoder (testing aid).
  void untie_decoder_for_testing();

  const DecoderStack<T>& decoder(DecoderMode mode) const {
    return mode == DecoderMode::CAUSAL ? *causal_ : *full_;
  }
  const std::vector<EncoderLayer<T>>& encoder_layers() const { return enc_layers_; }
  const NormParams<T>& encoder_norm() const { return enc_norm_; }
  const Tensor<T>& encoder_embedding() const { return enc_embed_; }

  // Sinusoidal encoding of `position`, written into `out` (model_dim values).
  void positional_encoding(std::size_t position, T* out) const;

 private:
  ModelConfig config_;
  Tensor<T> enc_embed_;
  std::vector<EncoderLayer<T>> enc_layers_;
  NormParams<T> enc_norm_;
  std::shared_ptr<DecoderStack<T>> causal_, full_;
  Tensor<T> length_w_, length_b_;
  std::vector<T> pos_table_;
};

// True iff both decoder modes resolve to the same parameter storage.
template <typename T>
bool shared_decoder_check(const Transformer<T>& model);

// Incremental causal decoding with cached self-attention keys and values.
// Each live hypothesis is tied to one encoded source.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Transformer<T>& model, const Memory<T>& memory, std::vector<std::size_t> hyp_source);

  // Feeds one token per hypothesis; returns log-probabilities [hyps x vocab].
  std::vector<T> step(std::span<const std::int32_t> tokens, std::span<const std::int32_t> positions);
  // Keeps hypotheses `from[i]` as the new hypothesis i (duplicates allowed).
  void reorder(std::span<const std::size_t> from);
  std::size_t hypotheses() const { return hyp_source_.size(); }

 private:
  const Transformer<T>& model_;
  const Memory<T>& memory_;
  std::vector<std::size_t> hyp_source_;
  // [layer] projected memory keys/values.
  std::vector<Tensor<T>> cross_k_, cross_v_;
  // [hyp][layer] cached rows, row-major steps x dim.
  std::vector<std::vector<tensor::Buffer<T>>> self_k_, self_v_;
};

}  // namespace hrt::model
