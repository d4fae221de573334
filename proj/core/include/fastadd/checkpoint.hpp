#pragma once

#include <string>

#include "fastadd/model.hpp"

namespace fastadd {

// Checkpoint file layout: magic "FFCKPT01", a 4-byte little-endian header
// length, a JSON header mapping parameter name -> {dtype, shape, offset,
// nbytes}, then the raw little-endian payload. Offsets are relative to the
// payload start. Round trips are bit-identical.

template <typename T>
void save_checkpoint(const ModelParams<T>& model, const std::string& path);

/// Loads and validates against `config`: every expected parameter must be
/// present with the right dtype and shape, offsets must be non-overlapping
/// and in-bounds, and the payload must be complete.
template <typename T>
ModelParams<T> load_checkpoint(const std::string& path, const FastformerConfig& config);

}  // namespace fastadd
