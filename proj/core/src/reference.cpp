#include "fastadd/reference.hpp"

#include <cmath>
#include <vector>

namespace fastadd {

namespace {

// All loops index scalars directly; nothing here calls the kernel layer.

template <typename T>
std::vector<std::vector<T>> ref_project(const std::vector<std::vector<T>>& x,
                                        const Tensor<T>& w) {
  const std::size_t n = x.size(), in = w.rows(), out = w.cols();
  std::vector<std::vector<T>> y(n, std::vector<T>(out, T(0)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      T acc = T(0);
      for (std::size_t k = 0; k < in; ++k) acc += x[i][k] * w.at(k, o);
      y[i][o] = acc;
    }
  }
  return y;
}

template <typename T>
std::vector<T> ref_pool(const std::vector<std::vector<T>>& rows, const Tensor<T>& weight) {
  const std::size_t n = rows.size(), d = rows[0].size();
  std::vector<T> scores(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < d; ++j) acc += weight[j] * rows[i][j];
    scores[i] = acc / std::sqrt(static_cast<T>(d));
  }
  // Naive exp/sum softmax, no max subtraction.
  T denom = T(0);
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(scores[i]);
  std::vector<T> pooled(d, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const T w = std::exp(scores[i]) / denom;
    for (std::size_t j = 0; j < d; ++j) pooled[j] += w * rows[i][j];
  }
  return pooled;
}

template <typename T>
std::vector<std::vector<T>> ref_interact(const std::vector<T>& global,
                                         const std::vector<std::vector<T>>& rows,
                                         InteractionMode mode, const Tensor<T>* w_mix) {
  const std::size_t n = rows.size(), d = global.size();
  std::vector<std::vector<T>> out(n, std::vector<T>(d, T(0)));
  for (std::size_t i = 0; i < n; ++i) {
    switch (mode) {
      case InteractionMode::elementwise_product:
        for (std::size_t j = 0; j < d; ++j) out[i][j] = global[j] * rows[i][j];
        break;
      case InteractionMode::add:
        for (std::size_t j = 0; j < d; ++j) out[i][j] = global[j] + rows[i][j];
        break;
      case InteractionMode::concat_project:
        if (w_mix == nullptr) {
          throw ConfigError("reference_forward: concat_project requires the projection matrix");
        }
        for (std::size_t j = 0; j < d; ++j) {
          T acc = T(0);
          for (std::size_t k = 0; k < d; ++k) {
            acc += global[k] * w_mix->at(k, j);
            acc += rows[i][k] * w_mix->at(d + k, j);
          }
          out[i][j] = acc;
        }
        break;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> reference_forward(const Tensor<T>& x, const LayerParams<T>& layer,
                            InteractionMode mode) {
  if (layer.heads.empty()) throw ConfigError("reference_forward: layer has no heads");
  const std::size_t n = x.rows();
  if (n == 0) throw InputError("reference_forward: empty input");
  const std::size_t h = layer.heads.size();
  const std::size_t d = layer.heads[0].head_dim();
  const std::size_t in = layer.heads[0].in_dim();
  const bool chunked = in == d;
  if (chunked && x.cols() != h * d) {
    throw ConfigError("reference_forward: width does not split into heads");
  }
  if (!chunked && x.cols() != in) {
    throw ShapeError("reference_forward: input width vs head projection");
  }

  Tensor<T> y({n, h * d});
  for (std::size_t head = 0; head < h; ++head) {
    const HeadParams<T>& p = layer.heads[head];

    std::vector<std::vector<T>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      rows[i].resize(chunked ? d : in);
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        rows[i][j] = x.at(i, chunked ? head * d + j : j);
      }
    }

    const auto query = ref_project(rows, *p.w_query);
    const auto key = ref_project(rows, *p.w_key);
    const auto value = ref_project(rows, *p.w_value);

    const auto global_query = ref_pool(query, *p.attn_query);
    const auto keyed = ref_interact(global_query, key, mode, p.w_mix_key);
    const auto global_key = ref_pool(keyed, *p.attn_key);
    const auto interactions = ref_interact(global_key, value, mode, p.w_mix_value);
    const auto transformed = ref_project(interactions, *p.w_out);

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        y.at(i, head * d + j) = transformed[i][j] + query[i][j];
      }
    }
  }
  return y;
}

template Tensor<float> reference_forward(const Tensor<float>&, const LayerParams<float>&,
                                         InteractionMode);
template Tensor<double> reference_forward(const Tensor<double>&, const LayerParams<double>&,
                                          InteractionMode);

}  // namespace fastadd
