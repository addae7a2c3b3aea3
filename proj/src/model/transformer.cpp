#include "hrt/model/transformer.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hrt/tensor/ops.hpp"

namespace hrt::model {

using tensor::AttentionLayout;
using tensor::Shape;

void DecoderBatch::add(std::span<const std::int32_t> seq_ids, std::span<const std::int32_t> seq_positions,
                       std::size_t memory) {
  if (seq_ids.size() != seq_positions.size()) throw std::invalid_argument("decoder ids/positions length mismatch");
  offset.push_back(ids.size());
  length.push_back(seq_ids.size());
  memory_index.push_back(memory);
  ids.insert(ids.end(), seq_ids.begin(), seq_ids.end());
  positions.insert(positions.end(), seq_positions.begin(), seq_positions.end());
}

namespace {

template <typename T>
Tensor<T> uniform_matrix(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<T> v(in * out);
  for (auto& x : v) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  return Tensor<T>({in, out}, std::move(v));
}

template <typename T>
Tensor<T> normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>({rows, cols}, std::move(v));
}

template <typename T>
AttentionParams<T> make_attention(std::size_t d, Rng& rng) {
  AttentionParams<T> a;
  a.wq = uniform_matrix<T>(d, d, rng);
  a.wk = uniform_matrix<T>(d, d, rng);
  a.wv = uniform_matrix<T>(d, d, rng);
  a.wo = uniform_matrix<T>(d, d, rng);
  a.bq = Tensor<T>::zeros({d});
  a.bv = Tensor<T>::zeros({d});
  a.bo = Tensor<T>::zeros({d});
  return a;
}

template <typename T>
FeedForwardParams<T> make_ffn(std::size_t d, std::size_t f, Rng& rng) {
  return {uniform_matrix<T>(d, f, rng), Tensor<T>::zeros({f}), uniform_matrix<T>(f, d, rng), Tensor<T>::zeros({d})};
}

template <typename T>
NormParams<T> make_norm(std::size_t d) {
  return {Tensor<T>::filled({d}, T(1)), Tensor<T>::zeros({d})};
}


template <typename T>
void push_attention(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& p,
                    const AttentionParams<T>& a) {
  out.emplace_back(p + ".wq", a.wq);
  out.emplace_back(p + ".bq", a.bq);
  out.emplace_back(p + ".wk", a.wk);
  out.emplace_back(p + ".wv", a.wv);
  out.emplace_back(p + ".bv", a.bv);
  out.emplace_back(p + ".wo", a.wo);
  out.emplace_back(p + ".bo", a.bo);
}

template <typename T>
void push_ffn(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& p,
              const FeedForwardParams<T>& f) {
  out.emplace_back(p + ".w1", f.w1);
  out.emplace_back(p + ".b1", f.b1);
  out.emplace_back(p + ".w2", f.w2);
  out.emplace_back(p + ".b2", f.b2);
}

template <typename T>
void push_norm(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& p, const NormParams<T>& n) {
  out.emplace_back(p + ".gain", n.gain);
  out.emplace_back(p + ".bias", n.bias);
}

template <typename T>
void push_decoder(std::vector<std::pair<std::string, Tensor<T>>>& out, const DecoderStack<T>& dec) {
  out.emplace_back("dec.embed", dec.embed);
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    const auto p = "dec." + std::to_string(l);
    const auto& layer = dec.layers[l];
    push_norm(out, p + ".self_norm", layer.self_norm);
    push_attention(out, p + ".self_attn", layer.self_attn);
    push_norm(out, p + ".cross_norm", layer.cross_norm);
    push_attention(out, p + ".cross_attn", layer.cross_attn);
    push_norm(out, p + ".ffn_norm", layer.ffn_norm);
    push_ffn(out, p + ".ffn", layer.ffn);
  }
  push_norm(out, "dec.final_norm", dec.final_norm);
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  return tensor::dropout(x, static_cast<T>(p), *rng);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& f) {
  return tensor::linear(tensor::gelu(tensor::linear(x, f.w1, f.b1)), f.w2, f.b2);
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const NormParams<T>& n) {
  return tensor::layer_norm(x, n.gain, n.bias);
}

template <typename T>
Tensor<T> deep_copy(const Tensor<T>& t) {
  return t.clone();
}

template <typename T>
AttentionParams<T> copy_attention(const AttentionParams<T>& a) {
  return {a.wq.clone(), a.bq.clone(), a.wk.clone(), a.wv.clone(), a.bv.clone(), a.wo.clone(), a.bo.clone()};
}

template <typename T>
NormParams<T> copy_norm(const NormParams<T>& n) {
  return {n.gain.clone(), n.bias.clone()};
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.model_dim;
  const std::size_t v = config_.vocab_size;
  Rng rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  enc_embed_ = normal_matrix<T>(v, d, embed_std, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    EncoderLayer<T> layer;
    layer.attn_norm = make_norm<T>(d);
    layer.attn = make_attention<T>(d, rng);
    layer.ffn_norm = make_norm<T>(d);
    layer.ffn = make_ffn<T>(d, config_.ffn_dim, rng);
    enc_layers_.push_back(std::move(layer));
  }
  enc_norm_ = make_norm<T>(d);

  auto dec = std::make_shared<DecoderStack<T>>();
  dec->embed = normal_matrix<T>(v, d, embed_std, rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    DecoderLayer<T> layer;
    layer.self_norm = make_norm<T>(d);
    layer.self_attn = make_attention<T>(d, rng);
    layer.cross_norm = make_norm<T>(d);
    layer.cross_attn = make_attention<T>(d, rng);
    layer.ffn_norm = make_norm<T>(d);
    layer.ffn = make_ffn<T>(d, config_.ffn_dim, rng);
    dec->layers.push_back(std::move(layer));
  }
  dec->final_norm = make_norm<T>(d);
  causal_ = dec;
  full_ = dec;

  if (config_.length_head) {
    length_w_ = uniform_matrix<T>(d, kLengthClasses, rng);
    length_b_ = Tensor<T>::zeros({kLengthClasses});
  }

  pos_table_.resize(config_.max_position * d);
  for (std::size_t p = 0; p < config_.max_position; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pos_table_[p * d + i] = static_cast<T>(std::sin(static_cast<double>(p) * freq));
      if (i + 1 < d) pos_table_[p * d + i + 1] = static_cast<T>(std::cos(static_cast<double>(p) * freq));
    }
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Transformer<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("enc.embed", enc_embed_);
  for (std::size_t l = 0; l < enc_layers_.size(); ++l) {
    const auto p = "enc." + std::to_string(l);
    push_norm(out, p + ".attn_norm", enc_layers_[l].attn_norm);
    push_attention(out, p + ".attn", enc_layers_[l].attn);
    push_norm(out, p + ".ffn_norm", enc_layers_[l].ffn_norm);
    push_ffn(out, p + ".ffn", enc_layers_[l].ffn);
  }
  push_norm(out, "enc.final_norm", enc_norm_);
  push_decoder(out, *causal_);
  if (full_ != causal_) {
    // Only reachable after untie_decoder_for_testing().
    std::vector<std::pair<std::string, Tensor<T>>> extra;
    push_decoder(extra, *full_);
    for (auto& [name, t] : extra) out.emplace_back("full." + name, t);
  }
  if (config_.length_head) {
    out.emplace_back("length.w", length_w_);
    out.emplace_back("length.b", length_b_);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Transformer<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t Transformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

template <typename T>
void Transformer<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) {
    auto copy = t;
    copy.set_requires_grad(on);
  }
}

template <typename T>
void Transformer<T>::positional_encoding(std::size_t position, T* out) const {
  if (position >= config_.max_position) {
    throw std::out_of_range("position " + std::to_string(position) + " exceeds max-position " +
                            std::to_string(config_.max_position));
  }
  const std::size_t d = config_.model_dim;
  std::copy_n(pos_table_.data() + position * d, d, out);
}

namespace {

template <typename T>
Tensor<T> embed_with_positions(const Transformer<T>& model, const Tensor<T>& table, std::span<const std::int32_t> ids,
                               std::span<const std::int32_t> positions) {
  const auto& cfg = model.config();
  const std::size_t d = cfg.model_dim;
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(cfg.vocab_size));
    }
  }
  std::vector<T> pos(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (positions[i] < 0) throw std::out_of_range("negative position");
    model.positional_encoding(static_cast<std::size_t>(positions[i]), pos.data() + i * d);
  }
  auto x = tensor::embedding<T>(ids, table, static_cast<T>(std::sqrt(static_cast<double>(d))));
  return tensor::add(x, Tensor<T>({ids.size(), d}, std::move(pos)));
}

template <typename T>
Tensor<T> attend(const Tensor<T>& query_in, const Tensor<T>& key_in, const AttentionParams<T>& a,
                 const AttentionLayout& layout, std::size_t heads) {
  auto q = tensor::linear(query_in, a.wq, a.bq);
  auto k = tensor::linear(key_in, a.wk, Tensor<T>());
  auto v = tensor::linear(key_in, a.wv, a.bv);
  return tensor::linear(tensor::attention(q, k, v, layout, heads), a.wo, a.bo);
}

}  // namespace

template <typename T>
Memory<T> Transformer<T>::encode(std::span<const TokenSeq> sources, Rng* dropout_rng) const {
  if (sources.empty()) throw std::invalid_argument("encode: no sources");
  Memory<T> mem;
  std::vector<std::int32_t> ids, positions;
  for (const auto& src : sources) {
    if (src.empty()) throw std::invalid_argument("encode: empty source");
    if (src.size() > config_.max_position) {
      throw std::out_of_range("source length " + std::to_string(src.size()) + " exceeds max-position " +
                              std::to_string(config_.max_position));
    }
    mem.offset.push_back(ids.size());
    mem.length.push_back(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      ids.push_back(src[i]);
      positions.push_back(static_cast<std::int32_t>(i));
      mem.pad.push_back(src[i] == 0 ? 1 : 0);
    }
  }
  AttentionLayout layout;
  layout.q_offset = mem.offset;
  layout.q_len = mem.length;
  layout.k_offset = mem.offset;
  layout.k_len = mem.length;
  layout.key_blocked = mem.pad;

  auto x = maybe_dropout(embed_with_positions(*this, enc_embed_, ids, positions), config_.dropout, dropout_rng);
  for (const auto& layer : enc_layers_) {
    auto h = norm(x, layer.attn_norm);
    x = tensor::add(x, maybe_dropout(attend(h, h, layer.attn, layout, config_.heads), config_.dropout, dropout_rng));
    h = norm(x, layer.ffn_norm);
    x = tensor::add(x, maybe_dropout(feed_forward(h, layer.ffn), config_.dropout, dropout_rng));
  }
  mem.states = norm(x, enc_norm_);
  return mem;
}

template <typename T>
Tensor<T> Transformer<T>::decode(const DecoderBatch& batch, const Memory<T>& memory, Rng* dropout_rng) const {
  if (batch.rows() == 0) throw std::invalid_argument("decode: empty input");
  const DecoderStack<T>& dec = decoder(batch.mode);
  AttentionLayout self_layout;
  self_layout.q_offset = batch.offset;
  self_layout.q_len = batch.length;
  self_layout.k_offset = batch.offset;
  self_layout.k_len = batch.length;
  self_layout.causal = batch.mode == DecoderMode::CAUSAL;
  self_layout.key_blocked.resize(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) self_layout.key_blocked[i] = batch.ids[i] == 0 ? 1 : 0;

  AttentionLayout cross;
  cross.q_offset = batch.offset;
  cross.q_len = batch.length;
  for (auto m : batch.memory_index) {
    if (m >= memory.sources()) throw std::out_of_range("decode: memory index out of range");
    cross.k_offset.push_back(memory.offset[m]);
    cross.k_len.push_back(memory.length[m]);
  }
  cross.key_blocked = memory.pad;

  auto x = maybe_dropout(embed_with_positions(*this, dec.embed, batch.ids, batch.positions), config_.dropout,
                         dropout_rng);
  for (const auto& layer : dec.layers) {
    auto h = norm(x, layer.self_norm);
    x = tensor::add(x, maybe_dropout(attend(h, h, layer.self_attn, self_layout, config_.heads), config_.dropout,
                                     dropout_rng));
    h = norm(x, layer.cross_norm);
    x = tensor::add(x, maybe_dropout(attend(h, memory.states, layer.cross_attn, cross, config_.heads),
                                     config_.dropout, dropout_rng));
    h = norm(x, layer.ffn_norm);
    x = tensor::add(x, maybe_dropout(feed_forward(h, layer.ffn), config_.dropout, dropout_rng));
  }
  return tensor::matmul_bt(norm(x, dec.final_norm), dec.embed);
}

template <typename T>
Tensor<T> Transformer<T>::decode_step(std::span<const std::int32_t> ids, std::span<const std::int32_t> positions,
                                      const Memory<T>& memory, DecoderMode mode) const {
  if (ids.empty()) throw std::invalid_argument("decode_step: empty input");
  DecoderBatch batch;
  batch.mode = mode;
  batch.add(ids, positions, 0);
  return decode(batch, memory);
}

template <typename T>
Tensor<T> Transformer<T>::length_logits(const Memory<T>& memory) const {
  if (!config_.length_head) throw std::logic_error("model has no length head");
  auto pooled = tensor::segment_mean<T>(memory.states, memory.offset, memory.length);
  return tensor::linear(pooled, length_w_, length_b_);
}

template <typename T>
std::vector<Tensor<T>> Transformer<T>::decoder_parameters(DecoderMode mode) const {
  std::vector<std::pair<std::string, Tensor<T>>> named;
  push_decoder(named, decoder(mode));
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

template <typename T>
void Transformer<T>::untie_decoder_for_testing() {
  auto copy = std::make_shared<DecoderStack<T>>();
  copy->embed = deep_copy(causal_->embed);
  for (const auto& layer : causal_->layers) {
    DecoderLayer<T> c;
    c.self_norm = copy_norm(layer.self_norm);
    c.cross_norm = copy_norm(layer.cross_norm);
    c.ffn_norm = copy_norm(layer.ffn_norm);
    c.self_attn = copy_attention(layer.self_attn);
    c.cross_attn = copy_attention(layer.cross_attn);
    c.ffn = {layer.ffn.w1.clone(), layer.ffn.b1.clone(), layer.ffn.w2.clone(), layer.ffn.b2.clone()};
    copy->layers.push_back(std::move(c));
  }
  copy->final_norm = copy_norm(causal_->final_norm);
  full_ = copy;
}

template <typename T>
bool shared_decoder_check(const Transformer<T>& model) {
  const auto a = model.decoder_parameters(DecoderMode::CAUSAL);
  const auto b = model.decoder_parameters(DecoderMode::FULL);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id() != b[i].id()) return false;
  }
  return true;
}

// Incremental decoding.

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const Transformer<T>& model, const Memory<T>& memory,
                                          std::vector<std::size_t> hyp_source)
    : model_(model), memory_(memory), hyp_source_(std::move(hyp_source)) {
  const auto& dec = model_.decoder(DecoderMode::CAUSAL);
  for (auto s : hyp_source_) {
    if (s >= memory_.sources()) throw std::out_of_range("incremental decoder: source index out of range");
  }
  for (const auto& layer : dec.layers) {
    cross_k_.push_back(tensor::linear(memory_.states, layer.cross_attn.wk, Tensor<T>()));
    cross_v_.push_back(tensor::linear(memory_.states, layer.cross_attn.wv, layer.cross_attn.bv));
  }
  self_k_.assign(hyp_source_.size(), std::vector<tensor::Buffer<T>>(dec.layers.size()));
  self_v_ = self_k_;
}

template <typename T>
void IncrementalDecoder<T>::reorder(std::span<const std::size_t> from) {
  std::vector<std::size_t> src;
  std::vector<std::vector<tensor::Buffer<T>>> k, v;
  src.reserve(from.size());
  k.reserve(from.size());
  v.reserve(from.size());
  for (auto f : from) {
    if (f >= hyp_source_.size()) throw std::out_of_range("reorder: hypothesis index out of range");
    src.push_back(hyp_source_[f]);
    k.push_back(self_k_[f]);
    v.push_back(self_v_[f]);
  }
  hyp_source_ = std::move(src);
  self_k_ = std::move(k);
  self_v_ = std::move(v);
}

template <typename T>
std::vector<T> IncrementalDecoder<T>::step(std::span<const std::int32_t> tokens, std::span<const std::int32_t> positions) {
  const std::size_t n = hyp_source_.size();
  if (tokens.size() != n || positions.size() != n) throw std::invalid_argument("step: one token per hypothesis");
  if (n == 0) return {};
  const auto& cfg = model_.config();
  const auto& dec = model_.decoder(DecoderMode::CAUSAL);
  const std::size_t d = cfg.model_dim;
  const std::size_t heads = cfg.heads;
  const std::size_t dh = d / heads;
  const T inv = T(1) / std::sqrt(T(dh));
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

  auto x = embed_with_positions(model_, dec.embed, tokens, positions);
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    const auto& layer = dec.layers[l];
    // Self-attention over cached steps plus the new one.
    auto h = norm(x, layer.self_norm);
    auto q = tensor::linear(h, layer.self_attn.wq, layer.self_attn.bq);
    auto k = tensor::linear(h, layer.self_attn.wk, Tensor<T>());
    auto v = tensor::linear(h, layer.self_attn.wv, layer.self_attn.bv);
    tensor::Buffer<T> ctx(n * d);
    Vec scores;
    for (std::size_t i = 0; i < n; ++i) {
      auto& kc = self_k_[i][l];
      auto& vc = self_v_[i][l];
      kc.insert(kc.end(), k.data() + i * d, k.data() + (i + 1) * d);
      vc.insert(vc.end(), v.data() + i * d, v.data() + (i + 1) * d);
      const std::size_t steps = kc.size() / d;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        StridedMap kh(kc.data() + hd * dh, steps, dh, Eigen::OuterStride<>(d));
        StridedMap vh(vc.data() + hd * dh, steps, dh, Eigen::OuterStride<>(d));
        Eigen::Map<const Vec> qh(q.data() + i * d + hd * dh, dh);
        scores.noalias() = (kh * qh) * inv;
        const T mx = scores.maxCoeff();
        scores = (scores.array() - mx).exp();
        scores /= scores.sum();
        Eigen::Map<Vec>(ctx.data() + i * d + hd * dh, dh).noalias() = vh.transpose() * scores;
      }
    }
    x = tensor::add(x, tensor::linear(Tensor<T>({n, d}, std::move(ctx)), layer.self_attn.wo, layer.self_attn.bo));

    // Cross-attention against the cached memory projections.
    h = norm(x, layer.cross_norm);
    q = tensor::linear(h, layer.cross_attn.wq, layer.cross_attn.bq);
    AttentionLayout cross;
    for (std::size_t i = 0; i < n; ++i) {
      cross.q_offset.push_back(i);
      cross.q_len.push_back(1);
      cross.k_offset.push_back(memory_.offset[hyp_source_[i]]);
      cross.k_len.push_back(memory_.length[hyp_source_[i]]);
    }
    cross.key_blocked = memory_.pad;
    auto c = tensor::attention(q, cross_k_[l], cross_v_[l], cross, heads);
    x = tensor::add(x, tensor::linear(c, layer.cross_attn.wo, layer.cross_attn.bo));

    h = norm(x, layer.ffn_norm);
    x = tensor::add(x, feed_forward(h, layer.ffn));
  }
  auto logits = tensor::log_softmax_lastdim(tensor::matmul_bt(norm(x, dec.final_norm), dec.embed));
  return std::vector<T>(logits.values().begin(), logits.values().end());
}

template class Transformer<float>;
template class Transformer<double>;
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;
template bool shared_decoder_check<float>(const Transformer<float>&);
template bool shared_decoder_check<double>(const Transformer<double>&);

}  // namespace hrt::model
