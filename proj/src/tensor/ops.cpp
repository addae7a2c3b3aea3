#include "hrt/tensor/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hrt/common/parallel.hpp"

namespace hrt::tensor {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Rows below this are not worth a parallel region.
constexpr std::size_t kRowGrain = 64;

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_graph<T>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
T* grad_of(const Tensor<T>& t) {
  return t.node()->ensure_grad();
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], p = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != p) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Buffer<T> out(m * n);
  const T* ad = a.data();
  const T* bd = b.data();
  parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    MatMap<T>(out.data() + r0 * n, r1 - r0, n).noalias() =
        ConstMatMap<T>(ad + r0 * p, r1 - r0, p) * ConstMatMap<T>(bd, p, n);
  });
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [a, b, m, p, n](Node<T>& self) {
    ConstMatMap<T> dc(self.grad.data(), m, n);
    if (a.requires_grad()) {
      T* ga = grad_of(a);
      parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
        MatMap<T>(ga + r0 * p, r1 - r0, p).noalias() +=
            dc.middleRows(r0, r1 - r0) * ConstMatMap<T>(b.data(), p, n).transpose();
      });
    }
    if (b.requires_grad()) {
      T* gb = grad_of(b);
      ConstMatMap<T> am(a.data(), m, p);
      parallel_for(p, 8, [&](std::size_t r0, std::size_t r1) {
        MatMap<T>(gb + r0 * n, r1 - r0, n).noalias() +=
            am.middleCols(r0, r1 - r0).transpose() * dc;
      });
    }
  });
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_bt");
  require_matrix(b, "matmul_bt");
  const std::size_t m = a.shape()[0], p = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != p) {
    throw ShapeError("matmul_bt: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Buffer<T> out(m * n);
  const T* ad = a.data();
  const T* bd = b.data();
  parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    MatMap<T>(out.data() + r0 * n, r1 - r0, n).noalias() =
        ConstMatMap<T>(ad + r0 * p, r1 - r0, p) * ConstMatMap<T>(bd, n, p).transpose();
  });
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [a, b, m, p, n](Node<T>& self) {
    ConstMatMap<T> dc(self.grad.data(), m, n);
    if (a.requires_grad()) {
      T* ga = grad_of(a);
      parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
        MatMap<T>(ga + r0 * p, r1 - r0, p).noalias() +=
            dc.middleRows(r0, r1 - r0) * ConstMatMap<T>(b.data(), n, p);
      });
    }
    if (b.requires_grad()) {
      T* gb = grad_of(b);
      ConstMatMap<T> am(a.data(), m, p);
      parallel_for(n, 8, [&](std::size_t r0, std::size_t r1) {
        MatMap<T>(gb + r0 * p, r1 - r0, p).noalias() +=
            dc.middleCols(r0, r1 - r0).transpose() * am;
      });
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  if (w.shape()[0] != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                     shape_string(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != out_dim) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not fit weight " +
                     shape_string(w.shape()));
  }
  Buffer<T> out(m * out_dim);
  parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    MatMap<T> y(out.data() + r0 * out_dim, r1 - r0, out_dim);
    y.noalias() = ConstMatMap<T>(x.data() + r0 * in, r1 - r0, in) * ConstMatMap<T>(w.data(), in, out_dim);
    if (has_bias) {
      y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), out_dim);
    }
  });
  return make_result<T>(
      {m, out_dim}, std::move(out), {&x, &w, &bias}, [x, w, bias, m, in, out_dim](Node<T>& self) {
        ConstMatMap<T> dy(self.grad.data(), m, out_dim);
        if (x.requires_grad()) {
          T* gx = grad_of(x);
          parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
            MatMap<T>(gx + r0 * in, r1 - r0, in).noalias() +=
                dy.middleRows(r0, r1 - r0) * ConstMatMap<T>(w.data(), in, out_dim).transpose();
          });
        }
        if (w.requires_grad()) {
          T* gw = grad_of(w);
          ConstMatMap<T> xm(x.data(), m, in);
          parallel_for(in, 8, [&](std::size_t r0, std::size_t r1) {
            MatMap<T>(gw + r0 * out_dim, r1 - r0, out_dim).noalias() +=
                xm.middleCols(r0, r1 - r0).transpose() * dy;
          });
        }
        if (bias.defined() && bias.requires_grad()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad_of(bias), out_dim) +=
              dy.colwise().sum();
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.size());
  const T* ad = a.data();
  const T* bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>& self) {
    const T* g = self.grad.data();
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      T* gt = grad_of(*t);
      for (std::size_t i = 0; i < self.grad.size(); ++i) gt[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>& self) {
    const T* g = self.grad.data();
    if (a.requires_grad()) {
      T* ga = grad_of(a);
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      T* gb = grad_of(b);
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, factor](Node<T>& self) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return make_result<T>({1}, {total}, {&x}, [x](Node<T>& self) {
    T* gx = grad_of(x);
    const T g = self.grad[0];
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], T(0));
  return make_result<T>(x.shape(), std::move(out), {&x}, [x](Node<T>& self) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.data()[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  Buffer<T> out(x.size());
  const T* xd = x.data();
  parallel_for(out.size(), 4096, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * kInvSqrt2));
  });
  return make_result<T>(x.shape(), std::move(out), {&x}, [x](Node<T>& self) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    T* gx = grad_of(x);
    const T* xd = x.data();
    parallel_for(self.grad.size(), 4096, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const T v = xd[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        gx[i] += self.grad[i] * (cdf + v * pdf);
      }
    });
  });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw ShapeError("softmax_lastdim: last extent must be >= 1");
  const std::size_t rows = x.size() / n;
  Buffer<T> out(x.size());
  const T* xd = x.data();
#ifndef NDEBUG
  for (T v : x.values()) {
    if (std::isnan(v)) throw std::domain_error("softmax_lastdim: NaN input");
  }
#endif
  parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const T* in = xd + r * n;
      T* o = out.data() + r * n;
      const T mx = *std::max_element(in, in + n);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        o[j] = std::exp(in[j] - mx);
        total += o[j];
      }
      for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
  });
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, n, rows](Node<T>& self) {
    T* gx = grad_of(x);
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw ShapeError("log_softmax_lastdim: last extent must be >= 1");
  const std::size_t rows = x.size() / n;
  Buffer<T> out(x.size());
  const T* xd = x.data();
  parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const T* in = xd + r * n;
      T* o = out.data() + r * n;
      const T mx = *std::max_element(in, in + n);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
    }
  });
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, n, rows](Node<T>& self) {
    T* gx = grad_of(x);
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gamma.shape()) + " do not fit " +
                     shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> rstd(rows);
  const T* xd = x.data();
  const T* gd = gamma.data();
  const T* bd = beta.data();
  parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const T* in = xd + r * n;
      T mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += in[j];
      mean /= T(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
      var /= T(n);
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[r] = rs;
      for (std::size_t j = 0; j < n; ++j) {
        const T h = (in[j] - mean) * rs;
        xhat[r * n + j] = h;
        out[r * n + j] = h * gd[j] + bd[j];
      }
    }
  });
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = self.grad.data();
        if (gamma.requires_grad() || beta.requires_grad()) {
          T* gg = gamma.requires_grad() ? grad_of(gamma) : nullptr;
          T* gb = beta.requires_grad() ? grad_of(beta) : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) {
              if (gg) gg[j] += g[r * n + j] * xhat[r * n + j];
              if (gb) gb[j] += g[r * n + j];
            }
          }
        }
        if (x.requires_grad()) {
          T* gx = grad_of(x);
          const T* gd = gamma.data();
          parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
            for (std::size_t r = r0; r < r1; ++r) {
              T mean_d = 0, mean_dx = 0;
              for (std::size_t j = 0; j < n; ++j) {
                const T d = g[r * n + j] * gd[j];
                mean_d += d;
                mean_dx += d * xhat[r * n + j];
              }
              mean_d /= T(n);
              mean_dx /= T(n);
              for (std::size_t j = 0; j < n; ++j) {
                const T d = g[r * n + j] * gd[j];
                gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
              }
            }
          });
        }
      });
}

template <typename T>
Tensor<T> embedding(std::span<const std::int32_t> ids, const Tensor<T>& table, T factor) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  Buffer<T> out(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    const T* row = table.data() + static_cast<std::size_t>(ids[i]) * dim;
    for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] = row[j] * factor;
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>({ids.size(), dim}, std::move(out), {&table},
                        [table, dim, factor, saved = std::move(saved)](Node<T>& self) {
                          T* gt = grad_of(table);
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* row = gt + static_cast<std::size_t>(saved[i]) * dim;
                            for (std::size_t j = 0; j < dim; ++j) row[j] += factor * self.grad[i * dim + j];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows += p.size() / cols;
  }
  Buffer<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor<T>> saved(parts.begin(), parts.end());
  auto node_out = make_result<T>({rows, cols}, std::move(out), {}, nullptr);
  // make_result's input list is fixed-size; record manually for the variadic case.
  Graph<T>* graph = active_graph<T>();
  bool needs = false;
  for (const auto& p : saved) needs = needs || p.requires_grad();
  if (graph != nullptr && needs) {
    auto node = node_out.node();
    node->requires_grad = true;
    Node<T>* self = node.get();
    node->backward = [self, saved = std::move(saved)]() {
      std::size_t at = 0;
      for (const auto& p : saved) {
        if (p.requires_grad()) {
          T* gp = grad_of(p);
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += self->grad[at + i];
        }
        at += p.size();
      }
    };
    graph->record(node);
  }
  return node_out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.size() / cols;
  if (begin > end || end > rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_string(x.shape()));
  }
  Buffer<T> out(x.data() + begin * cols, x.data() + end * cols);
  return make_result<T>({end - begin, cols}, std::move(out), {&x}, [x, begin, cols](Node<T>& self) {
    T* gx = grad_of(x) + begin * cols;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  const std::size_t cols = x.cols();
  const std::size_t total = x.size() / cols;
  Buffer<T> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                       shape_string(x.shape()));
    }
    std::copy_n(x.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return make_result<T>({rows.size(), cols}, std::move(out), {&x},
                        [x, cols, saved = std::move(saved)](Node<T>& self) {
                          T* gx = grad_of(x);
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            for (std::size_t j = 0; j < cols; ++j) gx[saved[i] * cols + j] += self.grad[i * cols + j];
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng) {
  if (p <= T(0)) return x;
  if (p >= T(1)) throw std::invalid_argument("dropout probability must be < 1");
  const T keep = T(1) / (T(1) - p);
  Buffer<T> mask(x.size());
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < static_cast<double>(p) ? T(0) : keep;
    out[i] = x.data()[i] * mask[i];
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, mask = std::move(mask)](Node<T>& self) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, std::span<const std::size_t> offsets,
                       std::span<const std::size_t> lengths) {
  const std::size_t cols = x.cols();
  const std::size_t segs = offsets.size();
  if (lengths.size() != segs) throw ShapeError("segment_mean: offsets/lengths size mismatch");
  Buffer<T> out(segs * cols, T(0));
  for (std::size_t s = 0; s < segs; ++s) {
    if (lengths[s] == 0) continue;
    for (std::size_t r = offsets[s]; r < offsets[s] + lengths[s]; ++r) {
      for (std::size_t j = 0; j < cols; ++j) out[s * cols + j] += x.data()[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[s * cols + j] /= T(lengths[s]);
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end()), len(lengths.begin(), lengths.end());
  return make_result<T>({segs, cols}, std::move(out), {&x},
                        [x, cols, off = std::move(off), len = std::move(len)](Node<T>& self) {
                          T* gx = grad_of(x);
                          for (std::size_t s = 0; s < off.size(); ++s) {
                            if (len[s] == 0) continue;
                            const T w = T(1) / T(len[s]);
                            for (std::size_t r = off[s]; r < off[s] + len[s]; ++r) {
                              for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += w * self.grad[s * cols + j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, T smoothing,
                        std::span<T> row_loss) {
  require_matrix(logits, "cross_entropy");
  const std::size_t rows = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_string(logits.shape()));
  }
  if (!row_loss.empty() && row_loss.size() != rows) throw ShapeError("cross_entropy: row_loss size");
  for (auto t : targets) {
    if (t != kIgnoreIndex && (t < 0 || static_cast<std::size_t>(t) >= vocab)) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside vocabulary");
    }
  }
  const bool keep_probs = recording<T>({&logits});
  Buffer<T> probs(keep_probs ? logits.size() : 0);
  Buffer<T> losses(rows, T(0));
  const T* xd = logits.data();
  const T off_mass = smoothing / T(vocab);
  parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      if (targets[r] == kIgnoreIndex) continue;
      const T* in = xd + r * vocab;
      const T mx = *std::max_element(in, in + vocab);
      T total = 0;
      for (std::size_t j = 0; j < vocab; ++j) total += std::exp(in[j] - mx);
      const T lse = mx + std::log(total);
      T mean_logp = 0;
      for (std::size_t j = 0; j < vocab; ++j) mean_logp += in[j] - lse;
      mean_logp /= T(vocab);
      const T nll = lse - in[targets[r]];
      losses[r] = (T(1) - smoothing) * nll - smoothing * mean_logp;
      if (keep_probs) {
        for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(in[j] - lse);
      }
    }
  });
  T total = 0;
  for (T l : losses) total += l;
  if (!row_loss.empty()) std::copy(losses.begin(), losses.end(), row_loss.begin());
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      {1}, {total}, {&logits},
      [logits, rows, vocab, smoothing, off_mass, saved = std::move(saved), probs = std::move(probs)](Node<T>& self) {
        T* gx = grad_of(logits);
        const T g = self.grad[0];
        parallel_for(rows, kRowGrain, [&](std::size_t r0, std::size_t r1) {
          for (std::size_t r = r0; r < r1; ++r) {
            if (saved[r] == kIgnoreIndex) continue;
            for (std::size_t j = 0; j < vocab; ++j) {
              gx[r * vocab + j] += g * (probs[r * vocab + j] - off_mass);
            }
            gx[r * vocab + static_cast<std::size_t>(saved[r])] -= g * (T(1) - smoothing);
          }
        });
      });
}

namespace {

template <typename T>
void validate_layout(const AttentionLayout& layout, std::size_t q_rows, std::size_t k_rows) {
  const std::size_t s = layout.segments();
  if (layout.q_len.size() != s || layout.k_offset.size() != s || layout.k_len.size() != s) {
    throw ShapeError("attention: inconsistent layout vectors");
  }
  for (std::size_t i = 0; i < s; ++i) {
    if (layout.q_offset[i] + layout.q_len[i] > q_rows || layout.k_offset[i] + layout.k_len[i] > k_rows) {
      throw ShapeError("attention: segment " + std::to_string(i) + " exceeds its rows");
    }
    if (layout.causal && layout.q_len[i] > layout.k_len[i]) {
      throw ShapeError("attention: causal segment has more queries than keys");
    }
  }
  if (!layout.key_blocked.empty() && layout.key_blocked.size() != k_rows) {
    throw ShapeError("attention: key_blocked must cover every key row");
  }
}

}  // namespace

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionLayout& layout, std::size_t heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d || v.shape() != k.shape()) {
    throw ShapeError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                     ", v " + shape_string(v.shape()) + " are incompatible");
  }
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  validate_layout<T>(layout, q.shape()[0], k.shape()[0]);
  const std::size_t dh = d / heads;
  const T inv = T(1) / std::sqrt(T(dh));
  const std::size_t segs = layout.segments();

  // Probability buffers, laid out per segment then head.
  std::vector<std::size_t> p_offset(segs + 1, 0);
  for (std::size_t s = 0; s < segs; ++s) p_offset[s + 1] = p_offset[s] + heads * layout.q_len[s] * layout.k_len[s];
  Buffer<T> probs(p_offset[segs]);
  Buffer<T> out(q.size(), T(0));
  const T* qd = q.data();
  const T* kd = k.data();
  const T* vd = v.data();
  const bool blocked = !layout.key_blocked.empty();

  parallel_for(segs, 4, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      const std::size_t lq = layout.q_len[s], lk = layout.k_len[s];
      if (lq == 0 || lk == 0) continue;
      const std::size_t qo = layout.q_offset[s], ko = layout.k_offset[s];
      const std::size_t shift = lk - std::min(lk, lq);
      for (std::size_t h = 0; h < heads; ++h) {
        ConstStridedMap<T> qh(qd + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
        ConstStridedMap<T> kh(kd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
        ConstStridedMap<T> vh(vd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
        MatMap<T> p(probs.data() + p_offset[s] + h * lq * lk, lq, lk);
        p.noalias() = (qh * kh.transpose()) * inv;
        for (std::size_t i = 0; i < lq; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < lk; ++j) {
            const bool allowed = (!layout.causal || j <= i + shift) && !(blocked && layout.key_blocked[ko + j]);
            if (!allowed) {
              p(i, j) = -std::numeric_limits<T>::infinity();
            } else {
              mx = std::max(mx, p(i, j));
            }
          }
          if (mx == -std::numeric_limits<T>::infinity()) {
            p.row(i).setZero();
            continue;
          }
          T total = 0;
          for (std::size_t j = 0; j < lk; ++j) {
            const T e = p(i, j) == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(p(i, j) - mx);
            p(i, j) = e;
            total += e;
          }
          p.row(i) /= total;
        }
        StridedMap<T> oh(out.data() + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
        oh.noalias() = p * vh;
      }
    }
  });

  return make_result<T>(
      q.shape(), std::move(out), {&q, &k, &v},
      [q, k, v, layout, heads, d, dh, inv, p_offset = std::move(p_offset), probs = std::move(probs)](Node<T>& self) {
        T* gq = q.requires_grad() ? grad_of(q) : nullptr;
        T* gk = k.requires_grad() ? grad_of(k) : nullptr;
        T* gv = v.requires_grad() ? grad_of(v) : nullptr;
        const T* go = self.grad.data();
        // Heads own disjoint columns, so they can run concurrently even when
        // segments share key rows. Segments run in order within a head.
        parallel_for(heads, 1, [&](std::size_t h0, std::size_t h1) {
          RowMat<T> dp, ds;
          for (std::size_t h = h0; h < h1; ++h) {
            for (std::size_t s = 0; s < layout.segments(); ++s) {
              const std::size_t lq = layout.q_len[s], lk = layout.k_len[s];
              if (lq == 0 || lk == 0) continue;
              const std::size_t qo = layout.q_offset[s], ko = layout.k_offset[s];
              ConstMatMap<T> p(probs.data() + p_offset[s] + h * lq * lk, lq, lk);
              ConstStridedMap<T> doh(go + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
              ConstStridedMap<T> qh(q.data() + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
              ConstStridedMap<T> kh(k.data() + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
              ConstStridedMap<T> vh(v.data() + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
              if (gv) {
                StridedMap<T>(gv + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() += p.transpose() * doh;
              }
              if (!gq && !gk) continue;
              dp.noalias() = doh * vh.transpose();
              ds.resize(lq, lk);
              for (std::size_t i = 0; i < lq; ++i) {
                T dot = 0;
                for (std::size_t j = 0; j < lk; ++j) dot += dp(i, j) * p(i, j);
                for (std::size_t j = 0; j < lk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv;
              }
              if (gq) {
                StridedMap<T>(gq + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d)).noalias() += ds * kh;
              }
              if (gk) {
                StridedMap<T>(gk + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() += ds.transpose() * qh;
              }
            }
          }
        });
      });
}

#define HRT_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> matmul_bt<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                        \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                            \
  template Tensor<T> log_softmax_lastdim<T>(const Tensor<T>&);                                        \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> embedding<T>(std::span<const std::int32_t>, const Tensor<T>&, T);                \
  template Tensor<T> concat_rows<T>(std::span<const Tensor<T>>);                                      \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, Rng&);                                           \
  template Tensor<T> segment_mean<T>(const Tensor<T>&, std::span<const std::size_t>,                  \
                                     std::span<const std::size_t>);                                   \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>, T, std::span<T>); \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                  const AttentionLayout&, std::size_t);

HRT_INSTANTIATE_OPS(float)
HRT_INSTANTIATE_OPS(double)

#undef HRT_INSTANTIATE_OPS

}  // namespace hrt::tensor
