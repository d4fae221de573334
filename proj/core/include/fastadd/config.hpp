#pragma once

#include <cstddef>
#include <string>

#include "fastadd/attention.hpp"

namespace fastadd {

enum class Backbone { fastformer, vanilla };

const char* backbone_name(Backbone b);
Backbone backbone_from_name(const std::string& name);
InteractionMode interaction_from_name(const std::string& name);

/// Architecture, ablation and regularization switches for one model.
struct FastformerConfig {
  std::size_t num_layers = 2;
  std::size_t heads = 16;
  std::size_t head_dim = 16;
  std::size_t vocab_size = 256;
  std::size_t max_len = 512;
  std::size_t num_classes = 8;
  InteractionMode interaction = InteractionMode::elementwise_product;
  bool share_qv = true;      // one matrix serves as both query and value transform
  bool share_heads = false;  // all heads alias one parameter set
  bool share_layers = false; // all layers alias one parameter set
  bool use_positional = true;
  bool use_layernorm = true;
  bool use_ffn = false;
  std::size_t ffn_mult = 4;
  double dropout = 0.2;
  Backbone backbone = Backbone::fastformer;
  bool full_projection = false;  // [D x d] head projections instead of chunked [d x d]
  double init_std = 0.02;

  static constexpr std::size_t kMaxModelDim = 4096;

  std::size_t model_dim() const { return heads * head_dim; }

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

/// Attention-core parameter count per the closed-form accounting; mirrors the
/// structural layout exactly for every sharing configuration.
std::size_t count_attention_params(const FastformerConfig& config);

/// Same count restricted to a single layer (the share_layers flag only
/// affects how many layers are stored, not the per-layer size).
std::size_t count_attention_params_per_layer(const FastformerConfig& config);

}  // namespace fastadd
