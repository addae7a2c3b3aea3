#include "hrt/model/grad_suite.hpp"

#include <functional>

#include "hrt/common/rng.hpp"
#include "hrt/model/transformer.hpp"
#include "hrt/tensor/grad_check.hpp"
#include "hrt/tensor/ops.hpp"

namespace hrt::model {

using tensor::Tensor;

namespace {

using Fn = std::function<Tensor<double>(const Tensor<double>&)>;

Tensor<double> random_tensor(tensor::Shape shape, Rng& rng) {
  std::vector<double> v(tensor::shape_size(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<double>(std::move(shape), v);
}

// Non-uniform weights so that gradient errors cannot cancel out.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return tensor::sum(tensor::mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

std::vector<GradResult> op_gradient_checks(std::uint64_t seed, double eps) {
  using namespace tensor;
  Rng rng(seed);
  std::vector<GradResult> out;
  auto check = [&](const std::string& name, Fn f, Tensor<double> x) {
    out.push_back({name, grad_check<double>(f, x, eps)});
  };
  auto w = random_tensor({4, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto gamma = random_tensor({4}, rng);
  auto beta = random_tensor({4}, rng);
  auto other = random_tensor({5, 4}, rng);
  auto x = random_tensor({5, 4}, rng);

  check("matmul lhs", [&](const Tensor<double>& v) { return weighted_sum(matmul(v, w), 1); }, x.clone());
  check("matmul rhs", [&](const Tensor<double>& v) { return weighted_sum(matmul(x, v), 2); }, w.clone());
  check("matmul_bt lhs", [&](const Tensor<double>& v) { return weighted_sum(matmul_bt(v, other), 3); }, x.clone());
  check("matmul_bt rhs", [&](const Tensor<double>& v) { return weighted_sum(matmul_bt(x, v), 4); }, other.clone());
  check("linear x", [&](const Tensor<double>& v) { return weighted_sum(linear(v, w, bias), 5); }, x.clone());
  check("linear w", [&](const Tensor<double>& v) { return weighted_sum(linear(x, v, bias), 6); }, w.clone());
  check("linear b", [&](const Tensor<double>& v) { return weighted_sum(linear(x, w, v), 7); }, bias.clone());
  check("add", [&](const Tensor<double>& v) { return weighted_sum(add(v, other), 8); }, x.clone());
  check("mul", [&](const Tensor<double>& v) { return weighted_sum(mul(v, other), 25); }, x.clone());
  check("scale", [&](const Tensor<double>& v) { return weighted_sum(scale(v, 0.37), 9); }, x.clone());
  check("sum", [&](const Tensor<double>& v) { return sum(v); }, x.clone());
  check("relu", [&](const Tensor<double>& v) { return weighted_sum(relu(v), 26); }, x.clone());
  check("dropout", [&](const Tensor<double>& v) {
    Rng mask_rng(27);
    return weighted_sum(dropout(v, 0.3, mask_rng), 28);
  }, x.clone());
  check("gelu", [&](const Tensor<double>& v) { return weighted_sum(gelu(v), 10); }, x.clone());
  check("softmax", [&](const Tensor<double>& v) { return weighted_sum(softmax_lastdim(v), 11); }, x.clone());
  check("log_softmax", [&](const Tensor<double>& v) { return weighted_sum(log_softmax_lastdim(v), 12); }, x.clone());
  check("layer_norm x", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(v, gamma, beta), 13); },
        x.clone());
  check("layer_norm gain", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(x, v, beta), 14); },
        gamma.clone());
  check("layer_norm bias", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(x, gamma, v), 15); },
        beta.clone());
  const std::vector<std::int32_t> ids{2, 0, 2, 4, 1};
  check("embedding", [&](const Tensor<double>& v) { return weighted_sum(embedding<double>(ids, v, 1.7), 16); },
        x.clone());
  check("concat_rows", [&](const Tensor<double>& v) {
    std::vector<Tensor<double>> parts{other, v, v};
    return weighted_sum(concat_rows<double>(parts), 17);
  }, x.clone());
  check("slice_rows", [&](const Tensor<double>& v) { return weighted_sum(slice_rows(v, 1, 4), 18); }, x.clone());
  const std::vector<std::size_t> rows{4, 0, 0, 3};
  check("gather_rows", [&](const Tensor<double>& v) { return weighted_sum(gather_rows<double>(v, rows), 19); },
        x.clone());
  const std::vector<std::size_t> offs{0, 2}, lens{2, 3};
  check("segment_mean",
        [&](const Tensor<double>& v) { return weighted_sum(segment_mean<double>(v, offs, lens), 20); }, x.clone());
  const std::vector<std::int32_t> targets{1, kIgnoreIndex, 3, 0, kIgnoreIndex};
  check("cross_entropy", [&](const Tensor<double>& v) { return cross_entropy<double>(v, targets, 0.1); }, x.clone());

  AttentionLayout layout;
  layout.q_offset = {0, 2, 5};
  layout.q_len = {2, 3, 2};
  layout.k_offset = {0, 0, 3};
  layout.k_len = {3, 3, 3};
  auto q = random_tensor({7, 4}, rng);
  auto k = random_tensor({6, 4}, rng);
  auto v = random_tensor({6, 4}, rng);
  check("attention q", [&](const Tensor<double>& t) { return weighted_sum(attention(t, k, v, layout, 2), 21); },
        q.clone());
  check("attention k", [&](const Tensor<double>& t) { return weighted_sum(attention(q, t, v, layout, 2), 22); },
        k.clone());
  check("attention v", [&](const Tensor<double>& t) { return weighted_sum(attention(q, k, t, layout, 2), 23); },
        v.clone());
  AttentionLayout causal;
  causal.q_offset = {0, 3};
  causal.q_len = {3, 2};
  causal.k_offset = {0, 3};
  causal.k_len = {3, 3};
  causal.causal = true;
  causal.key_blocked = {0, 0, 0, 0, 0, 1};
  check("causal attention",
        [&](const Tensor<double>& t) { return weighted_sum(attention(t, t, t, causal, 2), 24); },
        random_tensor({6, 4}, rng));
  return out;
}

std::vector<GradResult> model_gradient_checks(std::uint64_t seed, double eps) {
  ModelConfig c;
  c.vocab_size = 12;
  c.model_dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.max_position = 32;
  Transformer<double> model(c, seed);
  const std::vector<TokenSeq> src{{8, 9, 10, 11}, {9, 10}};
  DecoderBatch causal;
  causal.mode = DecoderMode::CAUSAL;
  const std::vector<std::int32_t> a_ids{1, 8, 9}, a_pos{0, 1, 2};
  causal.add(a_ids, a_pos, 0);
  const std::vector<std::int32_t> b_ids{5, 10}, b_pos{0, 2};
  causal.add(b_ids, b_pos, 1);
  const std::vector<std::int32_t> causal_targets{8, 9, 2, 10, 2};
  DecoderBatch full;
  full.mode = DecoderMode::FULL;
  const std::vector<std::int32_t> c_ids{3, 9, 3, 2}, c_pos{1, 2, 3, 4};
  full.add(c_ids, c_pos, 0);
  const std::vector<std::int32_t> full_targets{8, tensor::kIgnoreIndex, 10, tensor::kIgnoreIndex};

  auto loss = [&](const Tensor<double>&) {
    auto mem = model.encode(src);
    auto l1 = tensor::cross_entropy<double>(model.decode(causal, mem), causal_targets, 0.1);
    auto l2 = tensor::cross_entropy<double>(model.decode(full, mem), full_targets, 0.1);
    return tensor::add(l1, l2);
  };
  std::vector<GradResult> out;
  for (auto& [name, p] : model.named_parameters()) {
    out.push_back({"model " + name, tensor::grad_check<double>(loss, p, eps)});
  }
  return out;
}

}  // namespace hrt::model
