#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fastadd/config.hpp"

namespace fastadd {

enum class BenchMode { forward, forward_backward };

const char* bench_mode_name(BenchMode mode);

struct BenchDims {
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t layers = 1;
};

/// One sequence-length sweep. The batch at each length is
/// max(1, base_tokens / N), which holds the token count per timed call
/// roughly constant across the sweep.
struct BenchSpec {
  Backbone implementation = Backbone::fastformer;
  std::vector<std::size_t> lengths;  // strictly increasing
  std::size_t base_tokens = 8192;
  BenchMode mode = BenchMode::forward;
  std::size_t warmup_iters = 3;
  std::size_t timed_iters = 9;
  BenchDims dims;
  std::uint64_t seed = 0;

  std::size_t batch_for(std::size_t seq_len) const;
  void validate() const;
};

/// Wall times are per sequence: the whole-call time divided by the batch, so
/// a linear implementation shows slope ~1 against N and a quadratic one ~2.
struct BenchRecord {
  std::string implementation;
  std::size_t seq_len = 0;
  std::size_t batch = 0;
  std::string mode;
  double wall_ms_median = 0.0;
  double wall_ms_p10 = 0.0;
  double wall_ms_p90 = 0.0;
  std::uint64_t analytic_flops = 0;  // attention-core multiply-adds per sequence
};

/// Runs the sweep: per length, `warmup_iters` untimed calls then
/// `timed_iters` timed calls over a frozen-embedding model on seeded random
/// tokens. A length that exhausts memory is skipped with a diagnostic on
/// stderr and the sweep continues.
std::vector<BenchRecord> run_bench(const BenchSpec& spec);

/// Closed-form multiply-add count of the attention core for one sequence,
/// mirroring the instrumented kernels exactly in forward mode;
/// forward_backward is 3x forward (a documented approximation).
std::uint64_t count_flops(const BenchDims& dims, std::size_t seq_len, Backbone implementation,
                          BenchMode mode,
                          InteractionMode interaction = InteractionMode::elementwise_product);

/// Least-squares slope of log(median wall ms) against log(N). Needs at least
/// three records.
double fit_loglog_slope(const std::vector<BenchRecord>& records);

/// Header: impl,seq_len,batch,mode,wall_ms_median,wall_ms_p10,wall_ms_p90,flops
/// with floats at six significant digits.
void emit_csv(const std::vector<BenchRecord>& records, const std::string& path);

/// (log N, log ms) pairs, whitespace separated, for external plotting.
void emit_plot_data(const std::vector<BenchRecord>& records, const std::string& path);

}  // namespace fastadd
