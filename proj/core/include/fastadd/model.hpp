#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fastadd/attention.hpp"
#include "fastadd/config.hpp"
#include "fastadd/ops.hpp"
#include "fastadd/rng.hpp"

namespace fastadd {

/// Insertion-ordered collection of named tensors. Aliased parameters (from
/// the sharing flags) appear exactly once; iteration order is the layout
/// order, which keeps every traversal deterministic.
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::unordered_map<std::string, std::size_t> index;

  Tensor<T>& add(const std::string& name, Tensor<T> value);
  bool has(const std::string& name) const { return index.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  std::size_t size() const { return values.size(); }
  std::size_t total_scalars() const;
  void fill_zero();
};

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

/// The full named-parameter layout implied by a config: names, shapes, and
/// order. build_model, gradient buffers and checkpoint validation all derive
/// from this single description.
std::vector<ParamSpec> param_layout(const FastformerConfig& config);

template <typename T>
struct ModelParams {
  FastformerConfig config;
  ParamSet<T> params;
};

/// Deterministic per (config, seed): each named parameter draws from its own
/// stream seeded by hash(name) ^ seed, so initialization is order-independent.
/// Layer-norm gains start at one; biases at zero; everything else is normal
/// with config.init_std.
template <typename T>
ModelParams<T> build_model(const FastformerConfig& config, std::uint64_t seed);

/// Zero tensors in the exact layout of `config`, for gradients and optimizer
/// state.
template <typename T>
ParamSet<T> zeros_like_params(const FastformerConfig& config);

/// Number of attention-core scalars actually stored in the model (heads and
/// vanilla output transforms; excludes embeddings, layer norm, FFN and the
/// classifier head).
template <typename T>
std::size_t structural_attention_params(const ModelParams<T>& model);

/// Non-owning view of one layer's attention parameters, with the sharing
/// flags resolved to aliased tensors.
template <typename T>
LayerParams<T> layer_params(const ModelParams<T>& model, std::size_t layer);

template <typename T>
LayerGrads<T> layer_grads(const FastformerConfig& config, ParamSet<T>& grads, std::size_t layer);

// ---------------------------------------------------------------------------
// Forward / backward over the stacked model
// ---------------------------------------------------------------------------

enum class RunMode { train, eval };

template <typename T>
struct SublayerCache {
  MultiheadCache<T> attn_fast;
  VanillaCache<T> attn_vanilla;
  Tensor<T> attn_dropout_mask;
  LayerNormCache<T> norm1;
  Tensor<T> ffn_input;   // input to the FFN sublayer (post-norm1 activations)
  Tensor<T> ffn_pre;     // ffn_input W1, before the activation
  Tensor<T> ffn_hidden;  // relu(ffn_pre)
  Tensor<T> ffn_dropout_mask;
  LayerNormCache<T> norm2;
};

template <typename T>
struct EncodeCache {
  std::vector<int> token_ids;
  Tensor<T> embed_dropout_mask;
  std::vector<SublayerCache<T>> layers;
};

/// Embedding (+ positional) -> attention sublayer -> optional post-norm ->
/// optional FFN sublayer with residual and post-norm, per layer. The
/// fastformer attention sublayer carries its own internal +Q residual; the
/// vanilla sublayer uses the classic x + attention(x).
///
/// `mode == train` applies dropout (needs `dropout_rng` when the rate is
/// non-zero) and is what fills caches for the backward pass.
template <typename T>
Tensor<T> encode(const ModelParams<T>& model, const std::vector<int>& token_ids,
                 RunMode mode = RunMode::eval, EncodeCache<T>* cache = nullptr,
                 RngStream* dropout_rng = nullptr);

/// Accumulates parameter gradients into `grads` and returns nothing; set
/// `skip_embedding` to leave token/positional embeddings frozen.
template <typename T>
void encode_backward(const ModelParams<T>& model, const EncodeCache<T>& cache,
                     const Tensor<T>& d_out, ParamSet<T>& grads, bool skip_embedding = false);

template <typename T>
struct ClassifyCache {
  EncodeCache<T> encode;
  Tensor<T> encoded;       // [N x D]
  Tensor<T> pool_weights;  // [N]
  Tensor<T> pooled;        // [D]
};

/// Additive-attention pooling of the encoded sequence followed by a linear
/// classifier.
template <typename T>
Tensor<T> classify(const ModelParams<T>& model, const std::vector<int>& token_ids,
                   RunMode mode = RunMode::eval, ClassifyCache<T>* cache = nullptr,
                   RngStream* dropout_rng = nullptr);

template <typename T>
void classify_backward(const ModelParams<T>& model, const ClassifyCache<T>& cache,
                       const Tensor<T>& d_logits, ParamSet<T>& grads,
                       bool skip_embedding = false);

}  // namespace fastadd
