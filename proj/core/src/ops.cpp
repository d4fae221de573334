#include "fastadd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fastadd/flops.hpp"
#include "fastadd/rng.hpp"

namespace fastadd {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* who) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(who) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_vector(const Tensor<T>& t, const char* who) {
  if (t.rank() != 1) {
    throw ShapeError(std::string(who) + ": expected a vector, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Stable softmax of a contiguous row, writing into out. Counts n madds.
template <typename T>
void softmax_row(const T* in, T* out, std::size_t n) {
  T max_v = in[0];
  for (std::size_t i = 1; i < n; ++i) max_v = std::max(max_v, in[i]);
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - max_v);
    sum += out[i];
  }
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
  flops::count(n);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const T av = pa[i * k + l];
      const T* brow = pb + l * n;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  flops::count(static_cast<std::uint64_t>(m) * k * n);
  return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: outer dimensions disagree " + shape_str(a.shape()) + "^T x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({k, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    const T* brow = pb + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      T* crow = pc + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  flops::count(static_cast<std::uint64_t>(m) * k * n);
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    T* crow = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] = acc;
    }
  }
  flops::count(static_cast<std::uint64_t>(m) * k * n);
  return c;
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& m, const Tensor<T>& v) {
  require_matrix(m, "matvec");
  require_vector(v, "matvec");
  if (m.cols() != v.numel()) {
    throw ShapeError("matvec: " + shape_str(m.shape()) + " x " + shape_str(v.shape()));
  }
  const std::size_t rows = m.rows(), cols = m.cols();
  Tensor<T> out({rows});
  const T* pm = m.data();
  const T* pv = v.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = pm + i * cols;
    T acc = T(0);
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * pv[j];
    out[i] = acc;
  }
  flops::count(static_cast<std::uint64_t>(rows) * cols);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  flops::count(a.numel());
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  flops::count(a.numel());
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  flops::count(a.numel());
  return out;
}

template <typename T>
Tensor<T> rowwise_mul(const Tensor<T>& m, const Tensor<T>& v) {
  require_matrix(m, "rowwise_mul");
  require_vector(v, "rowwise_mul");
  if (m.cols() != v.numel()) {
    throw ShapeError("rowwise_mul: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  }
  Tensor<T> out(m.shape());
  const std::size_t rows = m.rows(), cols = m.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = m.at(i, j) * v[j];
  }
  flops::count(m.numel());
  return out;
}

template <typename T>
Tensor<T> rowwise_add(const Tensor<T>& m, const Tensor<T>& v) {
  require_matrix(m, "rowwise_add");
  require_vector(v, "rowwise_add");
  if (m.cols() != v.numel()) {
    throw ShapeError("rowwise_add: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  }
  Tensor<T> out(m.shape());
  const std::size_t rows = m.rows(), cols = m.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = m.at(i, j) + v[j];
  }
  flops::count(m.numel());
  return out;
}

template <typename T>
Tensor<T> weighted_sum_rows(const Tensor<T>& m, const Tensor<T>& w) {
  require_matrix(m, "weighted_sum_rows");
  require_vector(w, "weighted_sum_rows");
  if (m.rows() != w.numel()) {
    throw ShapeError("weighted_sum_rows: " + shape_str(m.shape()) + " vs " + shape_str(w.shape()));
  }
  const std::size_t rows = m.rows(), cols = m.cols();
  Tensor<T> out({cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const T wi = w[i];
    const T* row = m.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += wi * row[j];
  }
  flops::count(m.numel());
  return out;
}

template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& scores) {
  require_vector(scores, "softmax_stable");
  if (scores.numel() == 0) throw InputError("softmax_stable: empty input");
  scores.check_finite("softmax_stable input");
  Tensor<T> out(scores.shape());
  softmax_row(scores.data(), out.data(), scores.numel());
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores) {
  require_matrix(scores, "softmax_rows");
  if (scores.cols() == 0) throw InputError("softmax_rows: empty rows");
  scores.check_finite("softmax_rows input");
  Tensor<T> out(scores.shape());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    softmax_row(scores.data() + i * scores.cols(), out.data() + i * scores.cols(), scores.cols());
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T epsilon) {
  require_vector(x, "layer_norm");
  require_same_shape(x, gain, "layer_norm gain");
  require_same_shape(x, bias, "layer_norm bias");
  if (!(epsilon > T(0))) throw InputError("layer_norm: epsilon must be positive");
  const std::size_t n = x.numel();
  Tensor<T> row({1, n}, std::vector<T>(x.storage()));
  Tensor<T> out2 = layer_norm_rows(row, gain, bias, epsilon);
  return Tensor<T>({n}, std::move(out2.storage()));
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T epsilon, LayerNormCache<T>* cache) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t rows = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm_rows: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " vs width " + std::to_string(n));
  }
  Tensor<T> out(x.shape());
  if (cache != nullptr) {
    cache->normalized = Tensor<T>(x.shape());
    cache->inv_std.assign(rows, T(0));
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = x.data() + i * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv_std = T(1) / std::sqrt(var + epsilon);
    T* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T xhat = (row[j] - mean) * inv_std;
      if (cache != nullptr) cache->normalized.at(i, j) = xhat;
      orow[j] = xhat * gain[j] + bias[j];
    }
    if (cache != nullptr) cache->inv_std[i] = inv_std;
  }
  flops::count(4 * x.numel());
  return out;
}

template <typename T>
LayerNormGrads<T> layer_norm_rows_backward(const LayerNormCache<T>& cache, const Tensor<T>& gain,
                                           const Tensor<T>& d_out) {
  const std::size_t rows = cache.normalized.rows(), n = cache.normalized.cols();
  require_same_shape(cache.normalized, d_out, "layer_norm_rows_backward");
  LayerNormGrads<T> g;
  g.d_input = Tensor<T>(cache.normalized.shape());
  g.d_gain = Tensor<T>({n});
  g.d_bias = Tensor<T>({n});
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xhat = cache.normalized.data() + i * n;
    const T* dy = d_out.data() + i * n;
    const T inv_std = cache.inv_std[i];
    // d_xhat = dy * gain; dx = inv_std * (d_xhat - mean(d_xhat) - xhat * mean(d_xhat * xhat))
    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T dxh = dy[j] * gain[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat[j];
      g.d_gain[j] += dy[j] * xhat[j];
      g.d_bias[j] += dy[j];
    }
    mean_dxhat /= static_cast<T>(n);
    mean_dxhat_xhat /= static_cast<T>(n);
    T* dx = g.d_input.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T dxh = dy[j] * gain[j];
      dx[j] = inv_std * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  flops::count(x.numel());
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& d_out) {
  require_same_shape(x, d_out, "relu_backward");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? d_out[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> seeded_normal(std::vector<std::size_t> shape, std::uint64_t seed, double std_dev) {
  if (std_dev < 0.0) throw InputError("seeded_normal: std must be non-negative");
  Tensor<T> out(std::move(shape));
  RngStream rng(seed);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(std_dev * rng.next_normal());
  }
  return out;
}

#define FASTADD_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matvec(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> rowwise_mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> rowwise_add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> weighted_sum_rows(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> softmax_stable(const Tensor<T>&);                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,    \
                                     LayerNormCache<T>*);                                        \
  template LayerNormGrads<T> layer_norm_rows_backward(const LayerNormCache<T>&, const Tensor<T>&, \
                                                      const Tensor<T>&);                         \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> seeded_normal<T>(std::vector<std::size_t>, std::uint64_t, double);

FASTADD_INSTANTIATE_OPS(float)
FASTADD_INSTANTIATE_OPS(double)

#undef FASTADD_INSTANTIATE_OPS

}  // namespace fastadd
