#include "fastadd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "fastadd/checkpoint.hpp"

namespace fastadd {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.numel() == 0) {
    throw InputError("cross_entropy: logits must be a non-empty vector");
  }
  if (label >= logits.numel()) {
    throw InputError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.numel()) + " classes");
  }
  logits.check_finite("cross_entropy logits");
  T max_v = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i) max_v = std::max(max_v, logits[i]);
  T sum = T(0);
  LossResult<T> out;
  out.d_logits = Tensor<T>(logits.shape());
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    out.d_logits[i] = std::exp(logits[i] - max_v);
    sum += out.d_logits[i];
  }
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < logits.numel(); ++i) out.d_logits[i] *= inv;
  out.loss = std::log(sum) - (logits[label] - max_v);
  out.d_logits[label] -= T(1);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
AdamState<T> AdamState<T>::make(const FastformerConfig& config) {
  AdamState<T> state;
  state.first_moment = zeros_like_params<T>(config);
  state.second_moment = zeros_like_params<T>(config);
  return state;
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state,
               const AdamOptions& options) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter/gradient/state layouts differ");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params.values[k];
    const Tensor<T>& g = grads.values[k];
    Tensor<T>& m = state.first_moment.values[k];
    Tensor<T>& v = state.second_moment.values[k];
    if (!p.same_shape(g)) {
      throw ShapeError("adam_step: '" + params.names[k] + "' parameter " + shape_str(p.shape()) +
                       " vs gradient " + shape_str(g.shape()));
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = options.beta1 * static_cast<double>(m[i]) + (1.0 - options.beta1) * gi;
      const double vi =
          options.beta2 * static_cast<double>(v[i]) + (1.0 - options.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

namespace {
// Fraction of positions forced to the oversampled token in the majority task.
constexpr double kMajorityBoost = 0.25;
}  // namespace

SyntheticDataset gen_majority(std::uint64_t seed, std::size_t count, std::size_t seq_len,
                              std::size_t vocab) {
  if (vocab < 2) throw InputError("gen_majority: vocab must be at least 2");
  if (seq_len < 1) throw InputError("gen_majority: seq_len must be at least 1");
  SyntheticDataset data;
  data.generator = "majority";
  data.seed = seed;
  RngStream rng(derive_seed("majority", seed));
  data.sequences.reserve(count);
  data.labels.reserve(count);
  std::vector<std::size_t> counts(vocab);
  for (std::size_t e = 0; e < count; ++e) {
    const std::size_t boost = static_cast<std::size_t>(rng.next_below(vocab));
    std::vector<int> seq(seq_len);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < seq_len; ++i) {
      std::size_t tok = boost;
      if (rng.next_uniform() >= kMajorityBoost) {
        tok = static_cast<std::size_t>(rng.next_below(vocab));
      }
      seq[i] = static_cast<int>(tok);
      counts[tok] += 1;
    }
    std::size_t label = 0;
    for (std::size_t t = 1; t < vocab; ++t) {
      if (counts[t] > counts[label]) label = t;  // ties keep the smaller id
    }
    data.sequences.push_back(std::move(seq));
    data.labels.push_back(label);
  }
  return data;
}

SyntheticDataset gen_probe(std::uint64_t seed, std::size_t count, std::size_t seq_len,
                           std::size_t vocab) {
  if (vocab < 2) throw InputError("gen_probe: vocab must be at least 2");
  if (seq_len < 3) throw InputError("gen_probe: seq_len must be at least 3");
  SyntheticDataset data;
  data.generator = "probe";
  data.seed = seed;
  RngStream rng(derive_seed("probe", seed));
  data.sequences.reserve(count);
  data.labels.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    std::vector<int> seq(seq_len);
    const std::size_t key = static_cast<std::size_t>(rng.next_below(vocab));
    seq[0] = static_cast<int>(key);
    for (std::size_t i = 1; i < seq_len; ++i) {
      // Draw from vocab minus the key so the planted occurrence stays unique.
      std::size_t tok = static_cast<std::size_t>(rng.next_below(vocab - 1));
      if (tok >= key) tok += 1;
      seq[i] = static_cast<int>(tok);
    }
    const std::size_t at = 1 + static_cast<std::size_t>(rng.next_below(seq_len - 2));
    seq[at] = static_cast<int>(key);
    data.sequences.push_back(std::move(seq));
    data.labels.push_back(static_cast<std::size_t>(data.sequences.back()[at + 1]));
  }
  return data;
}

SyntheticDataset generate_task(const std::string& name, std::uint64_t seed, std::size_t count,
                               std::size_t seq_len, std::size_t vocab) {
  if (name == "majority") return gen_majority(seed, count, seq_len, vocab);
  if (name == "probe") return gen_probe(seed, count, seq_len, vocab);
  throw ConfigError("unknown task '" + name + "' (expected majority or probe)");
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::size_t worker_count() {
  const char* env = std::getenv("FASTADD_THREADS");
  if (env == nullptr) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v <= 1) return 1;
  return std::min<std::size_t>(static_cast<std::size_t>(v), 64);
}

namespace {

template <typename T>
double evaluate_accuracy(const ModelParams<T>& model, const SyntheticDataset& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    Tensor<T> logits = classify(model, data.sequences[i]);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.numel(); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    if (best == data.labels[i]) hits += 1;
  }
  return data.sequences.empty() ? 0.0 : static_cast<double>(hits) / data.sequences.size();
}

template <typename T>
struct ItemGrad {
  ParamSet<T> grads;
  T loss = T(0);
};

// Per-item losses/gradients; items get their own dropout streams so the
// result is identical for any worker count.
template <typename T>
void batch_gradients(const ModelParams<T>& model, const SyntheticDataset& data,
                     const std::vector<std::size_t>& items, std::size_t step,
                     std::uint64_t run_seed, std::vector<ItemGrad<T>>& out) {
  const std::size_t workers = std::min(worker_count(), items.size());
  auto run_item = [&](std::size_t slot) {
    const std::size_t idx = items[slot];
    RngStream rng(derive_seed(
        "dropout/" + std::to_string(step) + "/" + std::to_string(slot), run_seed));
    ClassifyCache<T> cache;
    Tensor<T> logits =
        classify(model, data.sequences[idx], RunMode::train, &cache, &rng);
    LossResult<T> loss = cross_entropy(logits, data.labels[idx]);
    out[slot].loss = loss.loss;
    classify_backward(model, cache, loss.d_logits, out[slot].grads);
  };
  if (workers <= 1) {
    for (std::size_t s = 0; s < items.size(); ++s) run_item(s);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t s = w; s < items.size(); s += workers) run_item(s);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

template <typename T>
TrainResult train_loop(const FastformerConfig& config, const TrainOptions& options,
                       ModelParams<T>* final_model) {
  config.validate();
  if (options.batch == 0) throw ConfigError("train: batch must be positive");
  if (options.task_vocab > config.vocab_size) {
    throw ConfigError("train: task vocab " + std::to_string(options.task_vocab) +
                      " exceeds model vocab " + std::to_string(config.vocab_size));
  }
  if (options.task_vocab > config.num_classes) {
    throw ConfigError("train: task labels need " + std::to_string(options.task_vocab) +
                      " classes, model has " + std::to_string(config.num_classes));
  }
  if (options.seq_len > config.max_len) {
    throw ConfigError("train: seq_len " + std::to_string(options.seq_len) + " exceeds max_len " +
                      std::to_string(config.max_len));
  }

  const SyntheticDataset train_set = generate_task(options.task, options.seed, options.pool_size,
                                                   options.seq_len, options.task_vocab);
  const SyntheticDataset val_set =
      generate_task(options.task, derive_seed("validation", options.seed),
                    std::max<std::size_t>(1, options.pool_size / 10), options.seq_len,
                    options.task_vocab);

  ModelParams<T> model = build_model<T>(config, options.seed);
  AdamState<T> adam = AdamState<T>::make(config);
  AdamOptions adam_options;
  adam_options.learning_rate = options.learning_rate;

  TrainResult result;
  result.steps_to_threshold = options.steps + 1;

  ParamSet<T> grads = zeros_like_params<T>(config);
  std::vector<ItemGrad<T>> item_grads(options.batch);
  for (auto& ig : item_grads) ig.grads = zeros_like_params<T>(config);
  std::vector<std::size_t> items(options.batch);

  std::size_t cursor = 0;
  bool crossed = false;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    for (std::size_t b = 0; b < options.batch; ++b) {
      items[b] = cursor;
      cursor = (cursor + 1) % train_set.sequences.size();
    }
    for (auto& ig : item_grads) ig.grads.fill_zero();
    batch_gradients(model, train_set, items, step, options.seed, item_grads);

    double loss = 0.0;
    grads.fill_zero();
    for (std::size_t s = 0; s < options.batch; ++s) {
      loss += static_cast<double>(item_grads[s].loss);
      for (std::size_t k = 0; k < grads.size(); ++k) {
        Tensor<T>& sink = grads.values[k];
        const Tensor<T>& src = item_grads[s].grads.values[k];
        for (std::size_t i = 0; i < sink.numel(); ++i) sink[i] += src[i];
      }
    }
    loss /= static_cast<double>(options.batch);
    const T inv_batch = T(1) / static_cast<T>(options.batch);
    for (auto& g : grads.values) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv_batch;
    }

    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.last_finite_step = step - 1;
      break;
    }
    result.last_finite_step = step;

    adam_step(model.params, grads, adam, adam_options);

    if (step % options.eval_every == 0 || step == options.steps) {
      const double acc = evaluate_accuracy(model, val_set);
      result.history.push_back({step, loss, acc});
      result.final_accuracy = acc;
      if (!crossed && options.stop_at_accuracy.has_value() &&
          acc >= *options.stop_at_accuracy) {
        crossed = true;
        result.steps_to_threshold = step;
        break;
      }
    }
  }

  if (!options.metrics_csv_path.empty()) {
    std::ofstream csv(options.metrics_csv_path, std::ios::trunc);
    if (!csv) throw Error("cannot write metrics to '" + options.metrics_csv_path + "'");
    csv << "step,loss,val_accuracy\n";
    char buf[128];
    for (const MetricsRow& row : result.history) {
      std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g\n", row.step, row.loss, row.val_accuracy);
      csv << buf;
    }
  }
  if (!options.checkpoint_path.empty() && !result.diverged) {
    save_checkpoint(model, options.checkpoint_path);
  }
  if (final_model != nullptr) *final_model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckResult grad_check(const FastformerConfig& config, const std::vector<int>& token_ids,
                           std::size_t label, std::uint64_t model_seed,
                           const GradCheckOptions& options) {
  FastformerConfig check_config = config;
  check_config.dropout = 0.0;  // by contract, gradient checks run without dropout
  ModelParams<double> model = build_model<double>(check_config, model_seed);

  ClassifyCache<double> cache;
  Tensor<double> logits = classify(model, token_ids, RunMode::eval, &cache);
  LossResult<double> loss = cross_entropy(logits, label);
  ParamSet<double> grads = zeros_like_params<double>(check_config);
  classify_backward(model, cache, loss.d_logits, grads);

  auto loss_now = [&]() {
    return cross_entropy(classify(model, token_ids), label).loss;
  };

  // Coordinate list: every scalar, or a deterministic subsample (stream seed
  // fixed at 0) when the model is large.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  const std::size_t total = model.params.total_scalars();
  if (total <= options.subsample_threshold) {
    for (std::size_t k = 0; k < model.params.size(); ++k) {
      for (std::size_t i = 0; i < model.params.values[k].numel(); ++i) coords.emplace_back(k, i);
    }
  } else {
    RngStream sampler(0);
    coords.reserve(options.subsample_threshold);
    for (std::size_t s = 0; s < options.subsample_threshold; ++s) {
      std::size_t flat = static_cast<std::size_t>(sampler.next_below(total));
      std::size_t k = 0;
      while (flat >= model.params.values[k].numel()) {
        flat -= model.params.values[k].numel();
        k += 1;
      }
      coords.emplace_back(k, flat);
    }
  }

  GradCheckResult result;
  result.groups.reserve(model.params.size());
  for (const std::string& name : model.params.names) {
    result.groups.push_back({name, 0.0, 0});
  }
  const double h = options.step;
  for (const auto& [k, i] : coords) {
    Tensor<double>& p = model.params.values[k];
    const double original = p[i];
    p[i] = original + h;
    const double up = loss_now();
    p[i] = original - h;
    const double down = loss_now();
    p[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite loss when perturbing '" + model.params.names[k] +
                         "' index " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.values[k][i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / denom;
    result.groups[k].checked += 1;
    result.groups[k].max_rel_error = std::max(result.groups[k].max_rel_error, rel);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = model.params.names[k];
    }
  }
  return result;
}

#define FASTADD_INSTANTIATE_TRAIN(T)                                                       \
  template struct AdamState<T>;                                                            \
  template LossResult<T> cross_entropy(const Tensor<T>&, std::size_t);                     \
  template void adam_step(ParamSet<T>&, const ParamSet<T>&, AdamState<T>&,                 \
                          const AdamOptions&);                                             \
  template TrainResult train_loop(const FastformerConfig&, const TrainOptions&,            \
                                  ModelParams<T>*);

FASTADD_INSTANTIATE_TRAIN(float)
FASTADD_INSTANTIATE_TRAIN(double)

#undef FASTADD_INSTANTIATE_TRAIN

}  // namespace fastadd
