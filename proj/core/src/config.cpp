#include "fastadd/config.hpp"

#include <sstream>

#include "fastadd/errors.hpp"

namespace fastadd {

const char* backbone_name(Backbone b) {
  return b == Backbone::fastformer ? "fastformer" : "vanilla";
}

Backbone backbone_from_name(const std::string& name) {
  if (name == "fastformer") return Backbone::fastformer;
  if (name == "vanilla") return Backbone::vanilla;
  throw ConfigError("unknown backbone '" + name + "' (expected fastformer or vanilla)");
}

InteractionMode interaction_from_name(const std::string& name) {
  if (name == "product" || name == "elementwise_product") {
    return InteractionMode::elementwise_product;
  }
  if (name == "add") return InteractionMode::add;
  if (name == "concat_project" || name == "concat") return InteractionMode::concat_project;
  throw ConfigError("unknown interaction '" + name +
                    "' (expected product, add or concat_project)");
}

void FastformerConfig::validate() const {
  std::ostringstream bad;
  auto flag = [&bad](const std::string& msg) {
    if (bad.tellp() > 0) bad << "; ";
    bad << msg;
  };
  if (heads == 0) flag("heads must be positive");
  if (head_dim == 0) flag("head_dim must be positive");
  if (vocab_size == 0) flag("vocab_size must be positive");
  if (max_len == 0) flag("max_len must be positive");
  if (num_classes == 0) flag("num_classes must be positive");
  if (ffn_mult == 0) flag("ffn_mult must be positive");
  if (heads * head_dim > kMaxModelDim) {
    flag("model width " + std::to_string(heads * head_dim) + " exceeds maximum " +
         std::to_string(kMaxModelDim));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) flag("dropout must lie in [0, 1)");
  if (init_std < 0.0) flag("init_std must be non-negative");
  if (bad.tellp() > 0) throw ConfigError("invalid config: " + bad.str());
}

std::size_t count_attention_params_per_layer(const FastformerConfig& config) {
  const std::size_t d = config.head_dim;
  const std::size_t h = config.heads;
  const std::size_t proj_rows = config.full_projection ? h * d : d;
  if (config.backbone == Backbone::vanilla) {
    const std::size_t per_head = (config.share_qv ? 2 : 3) * proj_rows * d;
    const std::size_t dim = h * d;
    return per_head * (config.share_heads ? 1 : h) + dim * dim;
  }
  std::size_t per_head = (config.share_qv ? 2 : 3) * proj_rows * d  // query/key/value transforms
                         + d * d                                    // interaction transform
                         + 2 * d;                                   // two attention vectors
  if (config.interaction == InteractionMode::concat_project) {
    per_head += 2 * (2 * d) * d;  // the two [2d x d] mix projections
  }
  return per_head * (config.share_heads ? 1 : h);
}

std::size_t count_attention_params(const FastformerConfig& config) {
  const std::size_t layers = config.share_layers ? 1 : config.num_layers;
  return count_attention_params_per_layer(config) * layers;
}

}  // namespace fastadd
