#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fastadd/model.hpp"

namespace fastadd {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> d_logits;  // softmax(logits) - onehot(label)
};

/// Stable negative log-likelihood of `label` under softmax(logits).
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::size_t label);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  ParamSet<T> first_moment;
  ParamSet<T> second_moment;
  std::uint64_t step = 0;

  static AdamState make(const FastformerConfig& config);
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Standard bias-corrected Adam update, in place. Deterministic; zero
/// gradients leave parameters untouched (the step counter still advances).
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state,
               const AdamOptions& options);

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

struct SyntheticDataset {
  std::vector<std::vector<int>> sequences;
  std::vector<std::size_t> labels;
  std::string generator;
  std::uint64_t seed = 0;
};

/// Uniform tokens with one class oversampled per example; the label is the
/// most frequent token id, ties broken toward the smallest id.
SyntheticDataset gen_majority(std::uint64_t seed, std::size_t count, std::size_t seq_len,
                              std::size_t vocab);

/// The first token is a key that reappears exactly once later in the
/// sequence; the label is the token that follows that occurrence.
SyntheticDataset gen_probe(std::uint64_t seed, std::size_t count, std::size_t seq_len,
                           std::size_t vocab);

SyntheticDataset generate_task(const std::string& name, std::uint64_t seed, std::size_t count,
                               std::size_t seq_len, std::size_t vocab);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string task = "majority";
  std::size_t steps = 2000;
  std::size_t batch = 64;
  std::size_t eval_every = 50;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t seq_len = 128;
  std::size_t task_vocab = 8;
  std::size_t pool_size = 2048;  // generated training examples, cycled over
  std::optional<double> stop_at_accuracy;  // stop once validation reaches this
  std::string metrics_csv_path;            // empty: do not write
  std::string checkpoint_path;             // empty: do not write
};

struct MetricsRow {
  std::size_t step;
  double loss;
  double val_accuracy;
};

struct TrainResult {
  std::vector<MetricsRow> history;
  bool diverged = false;
  std::size_t last_finite_step = 0;
  double final_accuracy = 0.0;
  /// First step at which validation accuracy reached stop_at_accuracy (or the
  /// step count + 1 when it never did).
  std::size_t steps_to_threshold = 0;
};

/// Deterministic given (config, options): dataset, dropout and batch order
/// all derive from options.seed. Batch gradients are the mean over items,
/// reduced in item order regardless of worker count.
template <typename T>
TrainResult train_loop(const FastformerConfig& config, const TrainOptions& options,
                       ModelParams<T>* final_model = nullptr);

// ---------------------------------------------------------------------------
// End-to-end gradient checking
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  /// Above this many scalars, check a seeded random subsample of this size
  /// instead of every coordinate (subsample stream seed fixed at 0).
  std::size_t subsample_threshold = 10000;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<GradCheckGroup> groups;
};

/// Compares the backpropagated gradient of cross_entropy(classify(ids))
/// against central finite differences for every parameter scalar (or a
/// deterministic subsample). Double precision, dropout disabled.
GradCheckResult grad_check(const FastformerConfig& config, const std::vector<int>& token_ids,
                           std::size_t label, std::uint64_t model_seed,
                           const GradCheckOptions& options = {});

/// Worker count for batch fan-out: the FASTADD_THREADS environment variable,
/// default 1. Results do not depend on it.
std::size_t worker_count();

}  // namespace fastadd
