#pragma once

#include <cstdint>
#include <vector>

#include "fastadd/tensor.hpp"

namespace fastadd {

// Dense kernels. Every kernel reports exact multiply-add counts to the active
// FlopCounter: matmul variants count m*k*n, element-wise kernels count the
// element count, softmax counts its input length.

/// C[m x n] = A[m x k] * B[k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// C[k x n] = A^T * B for A[m x k], B[m x n].
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

/// C[m x k] = A * B^T for A[m x n], B[k x n].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// y[m] = M[m x n] * v[n].
template <typename T>
Tensor<T> matvec(const Tensor<T>& m, const Tensor<T>& v);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

/// out_i = M_i (*) v, each row multiplied element-wise by v.
template <typename T>
Tensor<T> rowwise_mul(const Tensor<T>& m, const Tensor<T>& v);

/// out_i = M_i + v.
template <typename T>
Tensor<T> rowwise_add(const Tensor<T>& m, const Tensor<T>& v);

/// pooled[n] = sum_i w_i * M_i for M[m x n], w[m].
template <typename T>
Tensor<T> weighted_sum_rows(const Tensor<T>& m, const Tensor<T>& w);

/// Max-subtracted softmax over a length-n vector. Rejects empty and
/// non-finite input.
template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& scores);

/// Row-wise stable softmax of a matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores);

/// Per-row mean/variance normalization followed by gain/bias, vector form.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T epsilon);

template <typename T>
struct LayerNormCache {
  Tensor<T> normalized;        // x_hat, before gain/bias
  std::vector<T> inv_std;      // 1/sqrt(var + eps) per row
};

/// Row-wise layer norm of a matrix; fills `cache` when non-null.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T epsilon, LayerNormCache<T>* cache = nullptr);

template <typename T>
struct LayerNormGrads {
  Tensor<T> d_input;
  Tensor<T> d_gain;
  Tensor<T> d_bias;
};

template <typename T>
LayerNormGrads<T> layer_norm_rows_backward(const LayerNormCache<T>& cache, const Tensor<T>& gain,
                                           const Tensor<T>& d_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// d_in = d_out where x > 0, else 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& d_out);

/// Deterministic normal init: identical (shape, seed, std) always produces a
/// bit-identical tensor (SplitMix64 + Box-Muller, computed in double).
template <typename T>
Tensor<T> seeded_normal(std::vector<std::size_t> shape, std::uint64_t seed, double std_dev);

}  // namespace fastadd
