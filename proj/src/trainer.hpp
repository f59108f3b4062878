#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::train {

// One training document: chat-formatted tokens and a parallel mask marking
// the tokens the loss is computed on (assistant answers and their EOS).
struct TrainDocument {
    std::vector<int> tokens;
    std::vector<std::uint8_t> target_mask;
};

struct TrainerConfig {
    int steps = 1000;
    int batch_size = 8;
    double learning_rate = 0.3;
    bool momentum = true;
    double momentum_beta = 0.9;
    double grad_clip = 1.0;
    int warmup_steps = 30;
    std::uint64_t seed = 0;
    int log_every = 0;
};

struct TrainerResult {
    double initial_loss = 0.0; // mean loss over the first batch, pre-update
    double final_loss = 0.0;   // running mean over the last 50 steps
};

// Single-threaded deterministic next-token training; updates the model in
// place. Throws TrainingError when the loss stops being finite.
TrainerResult train_lm(TransformerModel& model,
                       const std::function<TrainDocument(Rng&)>& sample_doc,
                       const TrainerConfig& config);

} // namespace steerlab::train
