#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hrt/common/rng.hpp"
#include "hrt/tensor/tensor.hpp"

// Differentiable kernels. Matrices are row-major [rows x cols]; ops that act
// "per row" treat every leading extent as rows. Each op records its gradient
// rule when a graph is active and an input requires gradients.
namespace hrt::tensor {

inline constexpr std::int32_t kIgnoreIndex = -1;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a [m x p] times the transpose of b [n x p].
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);

// x [m x in] * w [in x out] + bias [out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Rows of `table` selected by ids, multiplied by `factor`.
template <typename T>
Tensor<T> embedding(std::span<const std::int32_t> ids, const Tensor<T>& table, T factor = T(1));

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng);

// Mean of each row segment [offset, offset + length) -> [segments x cols].
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, std::span<const std::size_t> offsets,
                       std::span<const std::size_t> lengths);

// Summed label-smoothed cross-entropy over rows whose target is not
// kIgnoreIndex. Smoothing mass is spread uniformly over the vocabulary.
// Ignored rows contribute zero loss and zero gradient. If `row_loss` is
// non-empty it receives each row's loss (0 for ignored rows).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        T smoothing = T(0), std::span<T> row_loss = {});

// Packed variable-length multi-head attention. Segment s pairs query rows
// [q_offset[s], q_offset[s] + q_len[s]) with key/value rows
// [k_offset[s], k_offset[s] + k_len[s]). Several segments may share key rows;
// query ranges must be disjoint.
struct AttentionLayout {
  std::vector<std::size_t> q_offset, q_len, k_offset, k_len;
  // Query i may attend key j only if j <= i + (k_len - q_len).
  bool causal = false;
  // Optional, indexed by key row: nonzero rows are never attended (PAD).
  std::vector<std::uint8_t> key_blocked;

  std::size_t segments() const { return q_offset.size(); }
};

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionLayout& layout, std::size_t heads);

}  // namespace hrt::tensor
