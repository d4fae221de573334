#include "fastadd/attention.hpp"

#include <cmath>
#include <string>

#include "fastadd/flops.hpp"
#include "fastadd/ops.hpp"

namespace fastadd {

const char* interaction_name(InteractionMode mode) {
  switch (mode) {
    case InteractionMode::elementwise_product: return "product";
    case InteractionMode::add: return "add";
    case InteractionMode::concat_project: return "concat_project";
  }
  return "unknown";
}

namespace {

template <typename T>
void accumulate(Tensor<T>* sink, const Tensor<T>& delta) {
  if (sink == nullptr) return;  // frozen parameter
  if (!sink->same_shape(delta)) {
    throw ShapeError("gradient accumulate: " + shape_str(sink->shape()) + " vs " +
                     shape_str(delta.shape()));
  }
  for (std::size_t i = 0; i < delta.numel(); ++i) (*sink)[i] += delta[i];
}

// d_scores = weights (*) (d_weights - <d_weights, weights>), the softmax
// Jacobian-vector product for one row.
template <typename T>
Tensor<T> softmax_backward_row(const Tensor<T>& weights, const Tensor<T>& d_weights) {
  T dot = T(0);
  for (std::size_t i = 0; i < weights.numel(); ++i) dot += weights[i] * d_weights[i];
  Tensor<T> d_scores(weights.shape());
  for (std::size_t i = 0; i < weights.numel(); ++i) {
    d_scores[i] = weights[i] * (d_weights[i] - dot);
  }
  return d_scores;
}

template <typename T>
Tensor<T> concat_global_rows(const Tensor<T>& global, const Tensor<T>& rows) {
  const std::size_t n = rows.rows(), d = rows.cols();
  Tensor<T> cat({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      cat.at(i, j) = global[j];
      cat.at(i, d + j) = rows.at(i, j);
    }
  }
  return cat;
}

}  // namespace

// ---------------------------------------------------------------------------
// Additive attention pooling
// ---------------------------------------------------------------------------

template <typename T>
PoolResult<T> additive_pool(const Tensor<T>& rows, const Tensor<T>& weight) {
  if (rows.rank() != 2 || rows.rows() == 0) {
    throw InputError("additive_pool: need at least one row, got " + shape_str(rows.shape()));
  }
  const std::size_t d = rows.cols();
  if (weight.numel() != d) {
    throw ShapeError("additive_pool: weight " + shape_str(weight.shape()) + " vs rows " +
                     shape_str(rows.shape()));
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> scores = scale(matvec(rows, weight), inv_sqrt_d);
  PoolResult<T> result;
  result.weights = softmax_stable(scores);
  result.pooled = weighted_sum_rows(rows, result.weights);
  return result;
}

template <typename T>
PoolBackwardResult<T> additive_pool_backward(const Tensor<T>& rows, const Tensor<T>& weight,
                                             const Tensor<T>& pool_weights,
                                             const Tensor<T>& d_pooled,
                                             const Tensor<T>* d_weights) {
  const std::size_t n = rows.rows(), d = rows.cols();
  if (pool_weights.numel() != n || d_pooled.numel() != d ||
      (d_weights != nullptr && d_weights->numel() != n)) {
    throw ShapeError("additive_pool_backward: cotangents do not match cache shapes " +
                     shape_str(rows.shape()));
  }
  // pooled = sum_i alpha_i rows_i: d_alpha_i += d_pooled . rows_i, d_rows_i += alpha_i d_pooled.
  Tensor<T> d_alpha({n});
  PoolBackwardResult<T> out;
  out.d_rows = Tensor<T>({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      acc += d_pooled[j] * rows.at(i, j);
      out.d_rows.at(i, j) = pool_weights[i] * d_pooled[j];
    }
    d_alpha[i] = acc + (d_weights != nullptr ? (*d_weights)[i] : T(0));
  }
  // Through the softmax and the scaled scores s_i = (weight . rows_i)/sqrt(d).
  Tensor<T> d_scores = softmax_backward_row(pool_weights, d_alpha);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  out.d_weight = Tensor<T>({d});
  for (std::size_t i = 0; i < n; ++i) {
    const T ds = d_scores[i] * inv_sqrt_d;
    for (std::size_t j = 0; j < d; ++j) {
      out.d_rows.at(i, j) += ds * weight[j];
      out.d_weight[j] += ds * rows.at(i, j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interaction functions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> interact(const Tensor<T>& global, const Tensor<T>& rows, InteractionMode mode,
                   const Tensor<T>* w_mix) {
  switch (mode) {
    case InteractionMode::elementwise_product:
      return rowwise_mul(rows, global);
    case InteractionMode::add:
      return rowwise_add(rows, global);
    case InteractionMode::concat_project: {
      if (w_mix == nullptr) {
        throw ConfigError("interact: concat_project requires a [2d x d] projection matrix");
      }
      return matmul(concat_global_rows(global, rows), *w_mix);
    }
  }
  throw ConfigError("interact: unknown mode");
}

template <typename T>
InteractBackwardResult<T> interact_backward(const Tensor<T>& global, const Tensor<T>& rows,
                                            InteractionMode mode, const Tensor<T>* w_mix,
                                            const Tensor<T>& d_out) {
  const std::size_t n = rows.rows(), d = rows.cols();
  InteractBackwardResult<T> out;
  out.d_global = Tensor<T>({d});
  switch (mode) {
    case InteractionMode::elementwise_product: {
      out.d_rows = Tensor<T>({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          out.d_global[j] += d_out.at(i, j) * rows.at(i, j);
          out.d_rows.at(i, j) = d_out.at(i, j) * global[j];
        }
      }
      return out;
    }
    case InteractionMode::add: {
      out.d_rows = d_out;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out.d_global[j] += d_out.at(i, j);
      }
      return out;
    }
    case InteractionMode::concat_project: {
      if (w_mix == nullptr) {
        throw ConfigError("interact_backward: concat_project requires the projection matrix");
      }
      Tensor<T> cat = concat_global_rows(global, rows);
      out.d_w_mix = matmul_tn(cat, d_out);
      Tensor<T> d_cat = matmul_nt(d_out, *w_mix);
      out.d_rows = Tensor<T>({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          out.d_global[j] += d_cat.at(i, j);
          out.d_rows.at(i, j) = d_cat.at(i, d + j);
        }
      }
      return out;
    }
  }
  throw ConfigError("interact_backward: unknown mode");
}

// ---------------------------------------------------------------------------
// Fastformer head
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fastformer_head_forward(const Tensor<T>& x, const HeadParams<T>& params,
                                  InteractionMode mode, HeadCache<T>* cache) {
  if (x.rank() != 2 || x.rows() == 0) {
    throw InputError("fastformer head: input must be a non-empty matrix, got " +
                     shape_str(x.shape()));
  }
  if (x.cols() != params.in_dim()) {
    throw ShapeError("fastformer head: input " + shape_str(x.shape()) + " vs w_query " +
                     shape_str(params.w_query->shape()));
  }
  Tensor<T> query = matmul(x, *params.w_query);
  query.check_finite("query projection");
  Tensor<T> key = matmul(x, *params.w_key);
  key.check_finite("key projection");
  Tensor<T> value = matmul(x, *params.w_value);
  value.check_finite("value projection");

  PoolResult<T> query_pool = additive_pool(query, *params.attn_query);
  query_pool.pooled.check_finite("global query");

  Tensor<T> keyed = interact(query_pool.pooled, key, mode, params.w_mix_key);
  keyed.check_finite("keyed rows");

  PoolResult<T> key_pool = additive_pool(keyed, *params.attn_key);
  key_pool.pooled.check_finite("global key");

  Tensor<T> interactions = interact(key_pool.pooled, value, mode, params.w_mix_value);
  interactions.check_finite("value interactions");

  Tensor<T> transformed = matmul(interactions, *params.w_out);
  transformed.check_finite("interaction transform");

  Tensor<T> out = add(transformed, query);
  out.check_finite("head output");

  if (cache != nullptr) {
    cache->input = x;
    cache->query = std::move(query);
    cache->key = std::move(key);
    cache->value = std::move(value);
    cache->query_weights = std::move(query_pool.weights);
    cache->global_query = std::move(query_pool.pooled);
    cache->keyed = std::move(keyed);
    cache->key_weights = std::move(key_pool.weights);
    cache->global_key = std::move(key_pool.pooled);
    cache->interactions = std::move(interactions);
    cache->transformed = std::move(transformed);
  }
  return out;
}

template <typename T>
Tensor<T> fastformer_head_backward(const HeadCache<T>& cache, const HeadParams<T>& params,
                                   InteractionMode mode, const Tensor<T>& d_out,
                                   HeadGrads<T>& grads) {
  if (!d_out.same_shape(cache.query)) {
    throw ShapeError("fastformer head backward: cotangent " + shape_str(d_out.shape()) +
                     " vs cached output " + shape_str(cache.query.shape()));
  }
  // out = R + Q with R = U w_out.
  accumulate(grads.w_out, matmul_tn(cache.interactions, d_out));
  Tensor<T> d_interactions = matmul_nt(d_out, *params.w_out);

  // U = interact(k, V).
  InteractBackwardResult<T> value_side = interact_backward(
      cache.global_key, cache.value, mode, params.w_mix_value, d_interactions);
  if (mode == InteractionMode::concat_project) accumulate(grads.w_mix_value, value_side.d_w_mix);

  // (beta, k) = additive_pool(P, attn_key).
  PoolBackwardResult<T> key_pool = additive_pool_backward(
      cache.keyed, *params.attn_key, cache.key_weights, value_side.d_global);
  accumulate(grads.attn_key, key_pool.d_weight);

  // P = interact(q, K).
  InteractBackwardResult<T> key_side =
      interact_backward(cache.global_query, cache.key, mode, params.w_mix_key, key_pool.d_rows);
  if (mode == InteractionMode::concat_project) accumulate(grads.w_mix_key, key_side.d_w_mix);

  // (alpha, q) = additive_pool(Q, attn_query).
  PoolBackwardResult<T> query_pool = additive_pool_backward(
      cache.query, *params.attn_query, cache.query_weights, key_side.d_global);
  accumulate(grads.attn_query, query_pool.d_weight);

  // d_Q collects the residual path and the pooling path.
  Tensor<T> d_query = add(d_out, query_pool.d_rows);

  accumulate(grads.w_query, matmul_tn(cache.input, d_query));
  accumulate(grads.w_key, matmul_tn(cache.input, key_side.d_rows));
  accumulate(grads.w_value, matmul_tn(cache.input, value_side.d_rows));

  Tensor<T> d_input = matmul_nt(d_query, *params.w_query);
  accumulate(&d_input, matmul_nt(key_side.d_rows, *params.w_key));
  accumulate(&d_input, matmul_nt(value_side.d_rows, *params.w_value));
  return d_input;
}

// ---------------------------------------------------------------------------
// Multi-head layers
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> chunk_of(const Tensor<T>& x, std::size_t head, std::size_t d) {
  const std::size_t n = x.rows();
  Tensor<T> out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = x.data() + i * x.cols() + head * d;
    T* dst = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  return out;
}

template <typename T>
void place_chunk(Tensor<T>& y, const Tensor<T>& chunk, std::size_t head) {
  const std::size_t n = y.rows(), d = chunk.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = chunk.data() + i * d;
    T* dst = y.data() + i * y.cols() + head * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
  }
}

// Heads with square [d x d] transforms consume contiguous d-wide chunks of
// the input; rectangular [D x d] transforms (full_projection) consume the
// whole input.
template <typename T>
void check_layer_width(const Tensor<T>& x, const LayerParams<T>& layer, const char* who) {
  if (layer.heads.empty()) throw ConfigError(std::string(who) + ": layer has no heads");
  const std::size_t h = layer.heads.size();
  const std::size_t d = layer.heads[0].head_dim();
  const std::size_t in = layer.heads[0].in_dim();
  if (in == d) {
    if (x.cols() != h * d) {
      throw ConfigError(std::string(who) + ": width " + std::to_string(x.cols()) +
                        " does not split into " + std::to_string(h) + " heads of " +
                        std::to_string(d));
    }
  } else if (x.cols() != in) {
    throw ShapeError(std::string(who) + ": input " + shape_str(x.shape()) +
                     " vs head projection " + shape_str(layer.heads[0].w_query->shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> multihead_forward(const Tensor<T>& x, const LayerParams<T>& layer, InteractionMode mode,
                            MultiheadCache<T>* cache) {
  check_layer_width(x, layer, "multihead_forward");
  const std::size_t h = layer.heads.size();
  const std::size_t d = layer.heads[0].head_dim();
  const bool chunked = layer.heads[0].in_dim() == d;
  Tensor<T> y({x.rows(), h * d});
  if (cache != nullptr) cache->heads.resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    Tensor<T> head_in = chunked ? chunk_of(x, j, d) : x;
    HeadCache<T>* head_cache = cache != nullptr ? &cache->heads[j] : nullptr;
    Tensor<T> head_out = fastformer_head_forward(head_in, layer.heads[j], mode, head_cache);
    place_chunk(y, head_out, j);
  }
  return y;
}

template <typename T>
Tensor<T> multihead_backward(const MultiheadCache<T>& cache, const LayerParams<T>& layer,
                             InteractionMode mode, const Tensor<T>& d_out, LayerGrads<T>& grads) {
  const std::size_t h = layer.heads.size();
  if (cache.heads.size() != h || grads.heads.size() != h) {
    throw ShapeError("multihead_backward: cache/grads hold " + std::to_string(cache.heads.size()) +
                     "/" + std::to_string(grads.heads.size()) + " heads, layer has " +
                     std::to_string(h));
  }
  const std::size_t d = layer.heads[0].head_dim();
  const std::size_t in = layer.heads[0].in_dim();
  const bool chunked = in == d;
  Tensor<T> d_x({d_out.rows(), chunked ? h * d : in});
  for (std::size_t j = 0; j < h; ++j) {
    Tensor<T> d_head = chunk_of(d_out, j, d);
    Tensor<T> d_in =
        fastformer_head_backward(cache.heads[j], layer.heads[j], mode, d_head, grads.heads[j]);
    if (chunked) {
      place_chunk(d_x, d_in, j);
    } else {
      for (std::size_t i = 0; i < d_x.numel(); ++i) d_x[i] += d_in[i];
    }
  }
  return d_x;
}

// ---------------------------------------------------------------------------
// Vanilla attention
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> vanilla_attention_forward(const Tensor<T>& x, const LayerParams<T>& layer,
                                    VanillaCache<T>* cache) {
  check_layer_width(x, layer, "vanilla_attention_forward");
  if (layer.w_out == nullptr) {
    throw ConfigError("vanilla_attention_forward: missing output transform");
  }
  if (x.rows() == 0) throw InputError("vanilla_attention_forward: empty input");
  const std::size_t h = layer.heads.size();
  const std::size_t d = layer.heads[0].head_dim();
  const bool chunked = layer.heads[0].in_dim() == d;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  Tensor<T> concat({x.rows(), h * d});
  if (cache != nullptr) cache->heads.resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    Tensor<T> head_in = chunked ? chunk_of(x, j, d) : x;
    const HeadParams<T>& p = layer.heads[j];
    Tensor<T> query = matmul(head_in, *p.w_query);
    Tensor<T> key = matmul(head_in, *p.w_key);
    Tensor<T> value = matmul(head_in, *p.w_value);
    Tensor<T> scores = scale(matmul_nt(query, key), inv_sqrt_d);
    scores.check_finite("attention scores");
    Tensor<T> attn = softmax_rows(scores);
    Tensor<T> head_out = matmul(attn, value);
    head_out.check_finite("attention output");
    place_chunk(concat, head_out, j);
    if (cache != nullptr) {
      VanillaHeadCache<T>& hc = cache->heads[j];
      hc.input = std::move(head_in);
      hc.query = std::move(query);
      hc.key = std::move(key);
      hc.value = std::move(value);
      hc.attn = std::move(attn);
    }
  }
  Tensor<T> y = matmul(concat, *layer.w_out);
  if (cache != nullptr) cache->concat = std::move(concat);
  return y;
}

template <typename T>
Tensor<T> vanilla_attention_backward(const VanillaCache<T>& cache, const LayerParams<T>& layer,
                                     const Tensor<T>& d_out, LayerGrads<T>& grads) {
  const std::size_t h = layer.heads.size();
  if (cache.heads.size() != h || grads.heads.size() != h) {
    throw ShapeError("vanilla_attention_backward: head count mismatch");
  }
  const std::size_t d = layer.heads[0].head_dim();
  const std::size_t in = layer.heads[0].in_dim();
  const bool chunked = in == d;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  accumulate(grads.w_out, matmul_tn(cache.concat, d_out));
  Tensor<T> d_concat = matmul_nt(d_out, *layer.w_out);

  Tensor<T> d_x({d_out.rows(), chunked ? h * d : in});
  for (std::size_t j = 0; j < h; ++j) {
    const VanillaHeadCache<T>& hc = cache.heads[j];
    const HeadParams<T>& p = layer.heads[j];
    Tensor<T> d_head = chunk_of(d_concat, j, d);

    Tensor<T> d_attn = matmul_nt(d_head, hc.value);
    Tensor<T> d_value = matmul_tn(hc.attn, d_head);

    // Row-wise softmax backward.
    Tensor<T> d_scores(d_attn.shape());
    for (std::size_t i = 0; i < d_attn.rows(); ++i) {
      T dot = T(0);
      for (std::size_t c = 0; c < d_attn.cols(); ++c) dot += d_attn.at(i, c) * hc.attn.at(i, c);
      for (std::size_t c = 0; c < d_attn.cols(); ++c) {
        d_scores.at(i, c) = hc.attn.at(i, c) * (d_attn.at(i, c) - dot) * inv_sqrt_d;
      }
    }
    Tensor<T> d_query = matmul(d_scores, hc.key);
    Tensor<T> d_key = matmul_tn(d_scores, hc.query);

    accumulate(grads.heads[j].w_query, matmul_tn(hc.input, d_query));
    accumulate(grads.heads[j].w_key, matmul_tn(hc.input, d_key));
    accumulate(grads.heads[j].w_value, matmul_tn(hc.input, d_value));

    Tensor<T> d_in = matmul_nt(d_query, *p.w_query);
    accumulate(&d_in, matmul_nt(d_key, *p.w_key));
    accumulate(&d_in, matmul_nt(d_value, *p.w_value));
    if (chunked) {
      place_chunk(d_x, d_in, j);
    } else {
      for (std::size_t i = 0; i < d_x.numel(); ++i) d_x[i] += d_in[i];
    }
  }
  return d_x;
}

#define FASTADD_INSTANTIATE_ATTENTION(T)                                                        \
  template PoolResult<T> additive_pool(const Tensor<T>&, const Tensor<T>&);                     \
  template PoolBackwardResult<T> additive_pool_backward(const Tensor<T>&, const Tensor<T>&,     \
                                                        const Tensor<T>&, const Tensor<T>&,    \
                                                        const Tensor<T>*);                     \
  template Tensor<T> interact(const Tensor<T>&, const Tensor<T>&, InteractionMode,             \
                              const Tensor<T>*);                                               \
  template InteractBackwardResult<T> interact_backward(const Tensor<T>&, const Tensor<T>&,     \
                                                       InteractionMode, const Tensor<T>*,      \
                                                       const Tensor<T>&);                      \
  template Tensor<T> fastformer_head_forward(const Tensor<T>&, const HeadParams<T>&,           \
                                             InteractionMode, HeadCache<T>*);                  \
  template Tensor<T> fastformer_head_backward(const HeadCache<T>&, const HeadParams<T>&,       \
                                              InteractionMode, const Tensor<T>&, HeadGrads<T>&); \
  template Tensor<T> multihead_forward(const Tensor<T>&, const LayerParams<T>&,                \
                                       InteractionMode, MultiheadCache<T>*);                   \
  template Tensor<T> multihead_backward(const MultiheadCache<T>&, const LayerParams<T>&,       \
                                        InteractionMode, const Tensor<T>&, LayerGrads<T>&);    \
  template Tensor<T> vanilla_attention_forward(const Tensor<T>&, const LayerParams<T>&,        \
                                               VanillaCache<T>*);                              \
  template Tensor<T> vanilla_attention_backward(const VanillaCache<T>&, const LayerParams<T>&, \
                                                const Tensor<T>&, LayerGrads<T>&);

FASTADD_INSTANTIATE_ATTENTION(float)
FASTADD_INSTANTIATE_ATTENTION(double)

#undef FASTADD_INSTANTIATE_ATTENTION

}  // namespace fastadd
