#pragma once

#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

// Batched, cache-free forward pass shared with the trainer. Independent of
// the inference path, so tests can use it to cross-check logits and the
// recorded per-head activations.
struct ReferenceForward {
    Tensor logits;       // [T, vocab]
    Tensor head_outputs; // [T, L, H, d_head], attention result before the output projection
};

ReferenceForward reference_forward(const TransformerModel& model, const std::vector<int>& tokens);

} // namespace steerlab
