#include "fastadd/model.hpp"

#include <cmath>

namespace fastadd {

namespace {
constexpr double kLayerNormEpsilon = 1e-5;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

template <typename T>
Tensor<T>& ParamSet<T>::add(const std::string& name, Tensor<T> value) {
  if (has(name)) throw ConfigError("parameter '" + name + "' registered twice");
  index.emplace(name, values.size());
  names.push_back(name);
  values.push_back(std::move(value));
  return values.back();
}

template <typename T>
Tensor<T>& ParamSet<T>::at(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
  return values[it->second];
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
  return values[it->second];
}

template <typename T>
std::size_t ParamSet<T>::total_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.numel();
  return n;
}

template <typename T>
void ParamSet<T>::fill_zero() {
  for (auto& v : values) v.fill(T(0));
}

std::vector<ParamSpec> param_layout(const FastformerConfig& c) {
  c.validate();
  std::vector<ParamSpec> specs;
  const std::size_t dim = c.model_dim();
  const std::size_t d = c.head_dim;
  const std::size_t proj_rows = c.full_projection ? dim : d;

  specs.push_back({"embed.token", {c.vocab_size, dim}});
  if (c.use_positional) specs.push_back({"embed.position", {c.max_len, dim}});

  const std::size_t stored_layers = c.share_layers ? 1 : c.num_layers;
  const std::size_t stored_heads = c.share_heads ? 1 : c.heads;
  for (std::size_t l = 0; l < stored_layers; ++l) {
    const std::string lt =
        "layers." + (c.share_layers ? std::string("shared") : std::to_string(l));
    for (std::size_t h = 0; h < stored_heads; ++h) {
      const std::string ht =
          lt + ".heads." + (c.share_heads ? std::string("shared") : std::to_string(h));
      specs.push_back({ht + ".w_query", {proj_rows, d}});
      specs.push_back({ht + ".w_key", {proj_rows, d}});
      if (!c.share_qv) specs.push_back({ht + ".w_value", {proj_rows, d}});
      if (c.backbone == Backbone::fastformer) {
        specs.push_back({ht + ".w_out", {d, d}});
        specs.push_back({ht + ".attn_query", {d}});
        specs.push_back({ht + ".attn_key", {d}});
        if (c.interaction == InteractionMode::concat_project) {
          specs.push_back({ht + ".w_mix_key", {2 * d, d}});
          specs.push_back({ht + ".w_mix_value", {2 * d, d}});
        }
      }
    }
    if (c.backbone == Backbone::vanilla) specs.push_back({lt + ".w_out", {dim, dim}});
    if (c.use_layernorm) {
      specs.push_back({lt + ".norm1.gain", {dim}});
      specs.push_back({lt + ".norm1.bias", {dim}});
    }
    if (c.use_ffn) {
      specs.push_back({lt + ".ffn.w1", {dim, c.ffn_mult * dim}});
      specs.push_back({lt + ".ffn.w2", {c.ffn_mult * dim, dim}});
      if (c.use_layernorm) {
        specs.push_back({lt + ".norm2.gain", {dim}});
        specs.push_back({lt + ".norm2.bias", {dim}});
      }
    }
  }
  specs.push_back({"classifier.pool", {dim}});
  specs.push_back({"classifier.weight", {dim, c.num_classes}});
  specs.push_back({"classifier.bias", {c.num_classes}});
  return specs;
}

template <typename T>
ModelParams<T> build_model(const FastformerConfig& config, std::uint64_t seed) {
  ModelParams<T> model;
  model.config = config;
  for (const ParamSpec& spec : param_layout(config)) {
    if (ends_with(spec.name, ".gain")) {
      Tensor<T> t(spec.shape);
      t.fill(T(1));
      model.params.add(spec.name, std::move(t));
    } else if (ends_with(spec.name, ".bias")) {
      model.params.add(spec.name, Tensor<T>(spec.shape));
    } else {
      model.params.add(spec.name,
                       seeded_normal<T>(spec.shape, derive_seed(spec.name, seed), config.init_std));
    }
  }
  return model;
}

template <typename T>
ParamSet<T> zeros_like_params(const FastformerConfig& config) {
  ParamSet<T> set;
  for (const ParamSpec& spec : param_layout(config)) {
    set.add(spec.name, Tensor<T>(spec.shape));
  }
  return set;
}

template <typename T>
std::size_t structural_attention_params(const ModelParams<T>& model) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < model.params.names.size(); ++i) {
    const std::string& name = model.params.names[i];
    if (name.rfind("layers.", 0) != 0) continue;
    if (name.find(".norm") != std::string::npos) continue;
    if (name.find(".ffn.") != std::string::npos) continue;
    n += model.params.values[i].numel();
  }
  return n;
}

namespace {

std::string layer_token(const FastformerConfig& c, std::size_t layer) {
  return "layers." + (c.share_layers ? std::string("shared") : std::to_string(layer));
}

std::string head_token(const FastformerConfig& c, std::size_t layer, std::size_t head) {
  return layer_token(c, layer) + ".heads." +
         (c.share_heads ? std::string("shared") : std::to_string(head));
}

}  // namespace

template <typename T>
LayerParams<T> layer_params(const ModelParams<T>& model, std::size_t layer) {
  const FastformerConfig& c = model.config;
  LayerParams<T> lp;
  lp.heads.resize(c.heads);
  for (std::size_t h = 0; h < c.heads; ++h) {
    const std::string ht = head_token(c, layer, h);
    HeadParams<T>& head = lp.heads[h];
    head.w_query = &model.params.at(ht + ".w_query");
    head.w_key = &model.params.at(ht + ".w_key");
    head.w_value = c.share_qv ? head.w_query : &model.params.at(ht + ".w_value");
    if (c.backbone == Backbone::fastformer) {
      head.w_out = &model.params.at(ht + ".w_out");
      head.attn_query = &model.params.at(ht + ".attn_query");
      head.attn_key = &model.params.at(ht + ".attn_key");
      if (c.interaction == InteractionMode::concat_project) {
        head.w_mix_key = &model.params.at(ht + ".w_mix_key");
        head.w_mix_value = &model.params.at(ht + ".w_mix_value");
      }
    }
  }
  if (c.backbone == Backbone::vanilla) lp.w_out = &model.params.at(layer_token(c, layer) + ".w_out");
  return lp;
}

template <typename T>
LayerGrads<T> layer_grads(const FastformerConfig& c, ParamSet<T>& grads, std::size_t layer) {
  LayerGrads<T> lg;
  lg.heads.resize(c.heads);
  for (std::size_t h = 0; h < c.heads; ++h) {
    const std::string ht = head_token(c, layer, h);
    HeadGrads<T>& head = lg.heads[h];
    head.w_query = &grads.at(ht + ".w_query");
    head.w_key = &grads.at(ht + ".w_key");
    head.w_value = c.share_qv ? head.w_query : &grads.at(ht + ".w_value");
    if (c.backbone == Backbone::fastformer) {
      head.w_out = &grads.at(ht + ".w_out");
      head.attn_query = &grads.at(ht + ".attn_query");
      head.attn_key = &grads.at(ht + ".attn_key");
      if (c.interaction == InteractionMode::concat_project) {
        head.w_mix_key = &grads.at(ht + ".w_mix_key");
        head.w_mix_value = &grads.at(ht + ".w_mix_value");
      }
    }
  }
  if (c.backbone == Backbone::vanilla) lg.w_out = &grads.at(layer_token(c, layer) + ".w_out");
  return lg;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> apply_dropout(Tensor<T> x, double rate, bool training, RngStream* rng,
                        Tensor<T>* mask_out) {
  if (!training || rate <= 0.0) {
    if (mask_out != nullptr) *mask_out = Tensor<T>();
    return x;
  }
  if (rng == nullptr) throw ConfigError("dropout in training mode requires an rng stream");
  const T keep_scale = T(1) / static_cast<T>(1.0 - rate);
  Tensor<T> mask(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = rng->next_uniform() < rate ? T(0) : keep_scale;
    x[i] *= mask[i];
  }
  if (mask_out != nullptr) *mask_out = std::move(mask);
  return x;
}

template <typename T>
void dropout_backward_inplace(Tensor<T>& d, const Tensor<T>& mask) {
  if (mask.numel() == 0) return;
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= mask[i];
}

}  // namespace

template <typename T>
Tensor<T> encode(const ModelParams<T>& model, const std::vector<int>& token_ids, RunMode mode,
                 EncodeCache<T>* cache, RngStream* dropout_rng) {
  const FastformerConfig& c = model.config;
  const std::size_t n = token_ids.size();
  const std::size_t dim = c.model_dim();
  if (n == 0) throw InputError("encode: empty token sequence");
  if (n > c.max_len) {
    throw InputError("encode: sequence length " + std::to_string(n) + " exceeds max_len " +
                     std::to_string(c.max_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (token_ids[i] < 0 || static_cast<std::size_t>(token_ids[i]) >= c.vocab_size) {
      throw InputError("encode: token id " + std::to_string(token_ids[i]) +
                       " out of range at position " + std::to_string(i));
    }
  }
  const bool training = mode == RunMode::train;

  const Tensor<T>& token_embed = model.params.at("embed.token");
  const Tensor<T>* pos_embed = c.use_positional ? &model.params.at("embed.position") : nullptr;
  Tensor<T> x({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const T* tok = token_embed.data() + static_cast<std::size_t>(token_ids[i]) * dim;
    const T* pos = pos_embed != nullptr ? pos_embed->data() + i * dim : nullptr;
    T* row = x.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) row[j] = tok[j] + (pos != nullptr ? pos[j] : T(0));
  }

  if (cache != nullptr) {
    cache->token_ids = token_ids;
    cache->layers.clear();
    cache->layers.resize(c.num_layers);
  }
  x = apply_dropout(std::move(x), c.dropout, training, dropout_rng,
                    cache != nullptr ? &cache->embed_dropout_mask : nullptr);

  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const LayerParams<T> lp = layer_params(model, l);
    SublayerCache<T>* sc = cache != nullptr ? &cache->layers[l] : nullptr;

    Tensor<T> a;
    if (c.backbone == Backbone::fastformer) {
      a = multihead_forward(x, lp, c.interaction, sc != nullptr ? &sc->attn_fast : nullptr);
    } else {
      Tensor<T> attn =
          vanilla_attention_forward(x, lp, sc != nullptr ? &sc->attn_vanilla : nullptr);
      a = add(x, attn);
    }
    a = apply_dropout(std::move(a), c.dropout, training, dropout_rng,
                      sc != nullptr ? &sc->attn_dropout_mask : nullptr);
    if (c.use_layernorm) {
      const std::string lt = layer_token(c, l);
      a = layer_norm_rows(a, model.params.at(lt + ".norm1.gain"), model.params.at(lt + ".norm1.bias"),
                          static_cast<T>(kLayerNormEpsilon), sc != nullptr ? &sc->norm1 : nullptr);
    }
    if (c.use_ffn) {
      const std::string lt = layer_token(c, l);
      if (sc != nullptr) sc->ffn_input = a;
      Tensor<T> pre = matmul(a, model.params.at(lt + ".ffn.w1"));
      Tensor<T> hidden = relu(pre);
      Tensor<T> f = matmul(hidden, model.params.at(lt + ".ffn.w2"));
      f = apply_dropout(std::move(f), c.dropout, training, dropout_rng,
                        sc != nullptr ? &sc->ffn_dropout_mask : nullptr);
      a = add(a, f);
      if (c.use_layernorm) {
        a = layer_norm_rows(a, model.params.at(lt + ".norm2.gain"),
                            model.params.at(lt + ".norm2.bias"), static_cast<T>(kLayerNormEpsilon),
                            sc != nullptr ? &sc->norm2 : nullptr);
      }
      if (sc != nullptr) {
        sc->ffn_pre = std::move(pre);
        sc->ffn_hidden = std::move(hidden);
      }
    }
    x = std::move(a);
  }
  return x;
}

template <typename T>
void encode_backward(const ModelParams<T>& model, const EncodeCache<T>& cache,
                     const Tensor<T>& d_out, ParamSet<T>& grads, bool skip_embedding) {
  const FastformerConfig& c = model.config;
  if (cache.layers.size() != c.num_layers) {
    throw ShapeError("encode_backward: cache holds " + std::to_string(cache.layers.size()) +
                     " layers, config has " + std::to_string(c.num_layers));
  }
  Tensor<T> d = d_out;
  for (std::size_t li = c.num_layers; li-- > 0;) {
    const SublayerCache<T>& sc = cache.layers[li];
    const LayerParams<T> lp = layer_params(model, li);
    LayerGrads<T> lg = layer_grads(c, grads, li);
    const std::string lt = layer_token(c, li);

    if (c.use_ffn) {
      if (c.use_layernorm) {
        LayerNormGrads<T> g2 =
            layer_norm_rows_backward(sc.norm2, model.params.at(lt + ".norm2.gain"), d);
        for (std::size_t i = 0; i < g2.d_gain.numel(); ++i) {
          grads.at(lt + ".norm2.gain")[i] += g2.d_gain[i];
          grads.at(lt + ".norm2.bias")[i] += g2.d_bias[i];
        }
        d = std::move(g2.d_input);
      }
      Tensor<T> d_f = d;
      dropout_backward_inplace(d_f, sc.ffn_dropout_mask);
      // f = relu(a W1) W2
      Tensor<T> dw2 = matmul_tn(sc.ffn_hidden, d_f);
      for (std::size_t i = 0; i < dw2.numel(); ++i) grads.at(lt + ".ffn.w2")[i] += dw2[i];
      Tensor<T> d_hidden = matmul_nt(d_f, model.params.at(lt + ".ffn.w2"));
      Tensor<T> d_pre = relu_backward(sc.ffn_pre, d_hidden);
      Tensor<T> dw1 = matmul_tn(sc.ffn_input, d_pre);
      for (std::size_t i = 0; i < dw1.numel(); ++i) grads.at(lt + ".ffn.w1")[i] += dw1[i];
      Tensor<T> d_ffn_in = matmul_nt(d_pre, model.params.at(lt + ".ffn.w1"));
      d = add(d, d_ffn_in);  // residual around the FFN
    }
    if (c.use_layernorm) {
      LayerNormGrads<T> g1 =
          layer_norm_rows_backward(sc.norm1, model.params.at(lt + ".norm1.gain"), d);
      for (std::size_t i = 0; i < g1.d_gain.numel(); ++i) {
        grads.at(lt + ".norm1.gain")[i] += g1.d_gain[i];
        grads.at(lt + ".norm1.bias")[i] += g1.d_bias[i];
      }
      d = std::move(g1.d_input);
    }
    dropout_backward_inplace(d, sc.attn_dropout_mask);
    if (c.backbone == Backbone::fastformer) {
      d = multihead_backward(sc.attn_fast, lp, c.interaction, d, lg);
    } else {
      Tensor<T> d_attn = vanilla_attention_backward(sc.attn_vanilla, lp, d, lg);
      d = add(d, d_attn);  // residual around vanilla attention
    }
  }
  dropout_backward_inplace(d, cache.embed_dropout_mask);

  if (!skip_embedding) {
    const std::size_t dim = c.model_dim();
    Tensor<T>& d_tok = grads.at("embed.token");
    Tensor<T>* d_pos = c.use_positional ? &grads.at("embed.position") : nullptr;
    for (std::size_t i = 0; i < cache.token_ids.size(); ++i) {
      const T* src = d.data() + i * dim;
      T* tok_row = d_tok.data() + static_cast<std::size_t>(cache.token_ids[i]) * dim;
      for (std::size_t j = 0; j < dim; ++j) tok_row[j] += src[j];
      if (d_pos != nullptr) {
        T* pos_row = d_pos->data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) pos_row[j] += src[j];
      }
    }
  }
}

template <typename T>
Tensor<T> classify(const ModelParams<T>& model, const std::vector<int>& token_ids, RunMode mode,
                   ClassifyCache<T>* cache, RngStream* dropout_rng) {
  Tensor<T> encoded = encode(model, token_ids, mode,
                             cache != nullptr ? &cache->encode : nullptr, dropout_rng);
  PoolResult<T> pool = additive_pool(encoded, model.params.at("classifier.pool"));
  const Tensor<T>& weight = model.params.at("classifier.weight");
  const Tensor<T>& bias = model.params.at("classifier.bias");
  const std::size_t dim = weight.rows(), classes = weight.cols();
  Tensor<T> logits({classes});
  for (std::size_t cidx = 0; cidx < classes; ++cidx) {
    T acc = bias[cidx];
    for (std::size_t j = 0; j < dim; ++j) acc += pool.pooled[j] * weight.at(j, cidx);
    logits[cidx] = acc;
  }
  logits.check_finite("classifier logits");
  if (cache != nullptr) {
    cache->encoded = std::move(encoded);
    cache->pool_weights = std::move(pool.weights);
    cache->pooled = std::move(pool.pooled);
  }
  return logits;
}

template <typename T>
void classify_backward(const ModelParams<T>& model, const ClassifyCache<T>& cache,
                       const Tensor<T>& d_logits, ParamSet<T>& grads, bool skip_embedding) {
  const Tensor<T>& weight = model.params.at("classifier.weight");
  const std::size_t dim = weight.rows(), classes = weight.cols();
  if (d_logits.numel() != classes) {
    throw ShapeError("classify_backward: cotangent " + shape_str(d_logits.shape()) + " vs " +
                     std::to_string(classes) + " classes");
  }
  Tensor<T>& d_weight = grads.at("classifier.weight");
  Tensor<T>& d_bias = grads.at("classifier.bias");
  Tensor<T> d_pooled({dim});
  for (std::size_t cidx = 0; cidx < classes; ++cidx) {
    d_bias[cidx] += d_logits[cidx];
    for (std::size_t j = 0; j < dim; ++j) {
      d_weight.at(j, cidx) += cache.pooled[j] * d_logits[cidx];
      d_pooled[j] += weight.at(j, cidx) * d_logits[cidx];
    }
  }
  PoolBackwardResult<T> pool_back = additive_pool_backward(
      cache.encoded, model.params.at("classifier.pool"), cache.pool_weights, d_pooled);
  Tensor<T>& d_pool_vec = grads.at("classifier.pool");
  for (std::size_t j = 0; j < dim; ++j) d_pool_vec[j] += pool_back.d_weight[j];
  encode_backward(model, cache.encode, pool_back.d_rows, grads, skip_embedding);
}

#define FASTADD_INSTANTIATE_MODEL(T)                                                           \
  template struct ParamSet<T>;                                                                 \
  template ModelParams<T> build_model(const FastformerConfig&, std::uint64_t);                 \
  template ParamSet<T> zeros_like_params(const FastformerConfig&);                             \
  template std::size_t structural_attention_params(const ModelParams<T>&);                     \
  template LayerParams<T> layer_params(const ModelParams<T>&, std::size_t);                    \
  template LayerGrads<T> layer_grads(const FastformerConfig&, ParamSet<T>&, std::size_t);      \
  template Tensor<T> encode(const ModelParams<T>&, const std::vector<int>&, RunMode,           \
                            EncodeCache<T>*, RngStream*);                                      \
  template void encode_backward(const ModelParams<T>&, const EncodeCache<T>&, const Tensor<T>&, \
                                ParamSet<T>&, bool);                                           \
  template Tensor<T> classify(const ModelParams<T>&, const std::vector<int>&, RunMode,         \
                              ClassifyCache<T>*, RngStream*);                                  \
  template void classify_backward(const ModelParams<T>&, const ClassifyCache<T>&,              \
                                  const Tensor<T>&, ParamSet<T>&, bool);

FASTADD_INSTANTIATE_MODEL(float)
FASTADD_INSTANTIATE_MODEL(double)

#undef FASTADD_INSTANTIATE_MODEL

}  // namespace fastadd
