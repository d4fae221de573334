#pragma once

#include "fastadd/attention.hpp"

namespace fastadd {

/// Independent scalar-loop implementation of the multi-head additive
/// attention layer, written with explicit index loops and a naive exp/sum
/// softmax. Shares no kernel code with multihead_forward; exists purely as a
/// cross-check oracle.
template <typename T>
Tensor<T> reference_forward(const Tensor<T>& x, const LayerParams<T>& layer, InteractionMode mode);

}  // namespace fastadd
