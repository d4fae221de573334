#pragma once

#include <vector>

#include "fastadd/tensor.hpp"

namespace fastadd {

/// How a global summary vector is combined with each row of a matrix.
enum class InteractionMode { elementwise_product, add, concat_project };

const char* interaction_name(InteractionMode mode);

/// Per-head parameters, non-owning. With query-value sharing, `w_value`
/// points at the same tensor as `w_query`. The mix matrices [2d x d] are only
/// set in concat_project mode.
template <typename T>
struct HeadParams {
  const Tensor<T>* w_query = nullptr;
  const Tensor<T>* w_key = nullptr;
  const Tensor<T>* w_value = nullptr;
  const Tensor<T>* w_out = nullptr;       // transform of the key-value interactions
  const Tensor<T>* attn_query = nullptr;  // additive-attention vector over queries
  const Tensor<T>* attn_key = nullptr;    // additive-attention vector over keyed rows
  const Tensor<T>* w_mix_key = nullptr;
  const Tensor<T>* w_mix_value = nullptr;

  std::size_t head_dim() const { return w_query->cols(); }
  std::size_t in_dim() const { return w_query->rows(); }
};

/// Gradient sinks matching HeadParams; backward passes accumulate (+=).
/// Aliased parameters share one sink, so shared gradients add up naturally.
template <typename T>
struct HeadGrads {
  Tensor<T>* w_query = nullptr;
  Tensor<T>* w_key = nullptr;
  Tensor<T>* w_value = nullptr;
  Tensor<T>* w_out = nullptr;
  Tensor<T>* attn_query = nullptr;
  Tensor<T>* attn_key = nullptr;
  Tensor<T>* w_mix_key = nullptr;
  Tensor<T>* w_mix_value = nullptr;
};

/// One attention layer: h heads plus, for the vanilla backbone, the output
/// transform applied after head concatenation.
template <typename T>
struct LayerParams {
  std::vector<HeadParams<T>> heads;
  const Tensor<T>* w_out = nullptr;  // vanilla only, [D x D]
};

template <typename T>
struct LayerGrads {
  std::vector<HeadGrads<T>> heads;
  Tensor<T>* w_out = nullptr;
};

// ---------------------------------------------------------------------------
// Additive attention pooling
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
  Tensor<T> weights;  // softmax((w . M_i)/sqrt(d)), length N
  Tensor<T> pooled;   // sum_i weights_i M_i, length d
};

/// Scores each row by a dot product with `weight`, scaled by 1/sqrt(d),
/// softmax-normalizes, and pools the rows by weighted sum.
template <typename T>
PoolResult<T> additive_pool(const Tensor<T>& rows, const Tensor<T>& weight);

template <typename T>
struct PoolBackwardResult {
  Tensor<T> d_rows;
  Tensor<T> d_weight;
};

/// Exact reverse of additive_pool, including the softmax Jacobian.
/// `pool_weights` is the weights output of the forward call; `d_weights`
/// is an optional cotangent on the weights output (nullptr means zero).
template <typename T>
PoolBackwardResult<T> additive_pool_backward(const Tensor<T>& rows, const Tensor<T>& weight,
                                             const Tensor<T>& pool_weights,
                                             const Tensor<T>& d_pooled,
                                             const Tensor<T>* d_weights = nullptr);

// ---------------------------------------------------------------------------
// Global-vector / row interaction
// ---------------------------------------------------------------------------

/// Combines a global vector with every row: element-wise product, addition,
/// or concatenation followed by a learned [2d x d] projection.
template <typename T>
Tensor<T> interact(const Tensor<T>& global, const Tensor<T>& rows, InteractionMode mode,
                   const Tensor<T>* w_mix = nullptr);

template <typename T>
struct InteractBackwardResult {
  Tensor<T> d_global;
  Tensor<T> d_rows;
  Tensor<T> d_w_mix;  // empty unless concat_project
};

template <typename T>
InteractBackwardResult<T> interact_backward(const Tensor<T>& global, const Tensor<T>& rows,
                                            InteractionMode mode, const Tensor<T>* w_mix,
                                            const Tensor<T>& d_out);

// ---------------------------------------------------------------------------
// Fastformer head
// ---------------------------------------------------------------------------

/// Everything the backward pass needs from one head's forward run.
template <typename T>
struct HeadCache {
  Tensor<T> input;          // x [N x in]
  Tensor<T> query;          // Q = x W_q [N x d]
  Tensor<T> key;            // K [N x d]
  Tensor<T> value;          // V [N x d]
  Tensor<T> query_weights;  // alpha [N]
  Tensor<T> global_query;   // q [d]
  Tensor<T> keyed;          // P, global-query/key interactions [N x d]
  Tensor<T> key_weights;    // beta [N]
  Tensor<T> global_key;     // k [d]
  Tensor<T> interactions;   // U, global-key/value interactions [N x d]
  Tensor<T> transformed;    // R = U W_out [N x d]
};

/// Global query -> keyed rows -> global key -> value interactions ->
/// transform -> +Q residual. Throws NumericError naming the stage if an
/// intermediate goes non-finite.
template <typename T>
Tensor<T> fastformer_head_forward(const Tensor<T>& x, const HeadParams<T>& params,
                                  InteractionMode mode, HeadCache<T>* cache = nullptr);

/// Exact reverse of fastformer_head_forward. Gradients accumulate into
/// `grads`; returns d_input.
template <typename T>
Tensor<T> fastformer_head_backward(const HeadCache<T>& cache, const HeadParams<T>& params,
                                   InteractionMode mode, const Tensor<T>& d_out,
                                   HeadGrads<T>& grads);

// ---------------------------------------------------------------------------
// Multi-head layers
// ---------------------------------------------------------------------------

template <typename T>
struct MultiheadCache {
  std::vector<HeadCache<T>> heads;
};

/// Splits the width-D input into h contiguous d-wide chunks, runs one head
/// per chunk (or all heads on the full input when the head matrices are
/// [D x d]), and concatenates head outputs along the width.
template <typename T>
Tensor<T> multihead_forward(const Tensor<T>& x, const LayerParams<T>& layer, InteractionMode mode,
                            MultiheadCache<T>* cache = nullptr);

template <typename T>
Tensor<T> multihead_backward(const MultiheadCache<T>& cache, const LayerParams<T>& layer,
                             InteractionMode mode, const Tensor<T>& d_out, LayerGrads<T>& grads);

// ---------------------------------------------------------------------------
// Vanilla multi-head self-attention (the quadratic baseline)
// ---------------------------------------------------------------------------

template <typename T>
struct VanillaHeadCache {
  Tensor<T> input;
  Tensor<T> query, key, value;
  Tensor<T> attn;  // softmax(Q K^T / sqrt(d)) [N x N]
};

template <typename T>
struct VanillaCache {
  std::vector<VanillaHeadCache<T>> heads;
  Tensor<T> concat;  // head outputs before w_out [N x D]
};

/// softmax(Q K^T / sqrt(d)) V per head, concatenated, then the [D x D]
/// output transform. Same chunk-split convention as multihead_forward.
template <typename T>
Tensor<T> vanilla_attention_forward(const Tensor<T>& x, const LayerParams<T>& layer,
                                    VanillaCache<T>* cache = nullptr);

template <typename T>
Tensor<T> vanilla_attention_backward(const VanillaCache<T>& cache, const LayerParams<T>& layer,
                                     const Tensor<T>& d_out, LayerGrads<T>& grads);

}  // namespace fastadd
