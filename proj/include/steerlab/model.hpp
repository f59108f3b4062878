#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/tensor.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    int eos_token_id = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// (layer, head) address of one attention head.
struct HeadLocator {
    int layer = 0;
    int head = 0;
};

struct GenerationConfig {
    int max_new_tokens = 30;
    bool stop_on_eos = true;
};

// Hook step convention: the prompt-processing pass is step 0; the pass whose
// last input token is the i-th generated token is step i. The recorder fires
// at every pass for every (layer, head) with the d_head slice of the
// attention result at the last position, taken before the output projection.
// The injector is consulted only at steps >= 1 (generate enforces this) and
// its vector is added to exactly that slice, once, before the recorder reads
// the (post-injection) value.
struct HookSet {
    std::function<void(int step, const HeadLocator&, std::span<const scalar>)> recorder;
    std::function<std::span<const scalar>(int step, const HeadLocator&)> injector;
};

// Decoder-only transformer: learned token embeddings plus fixed sinusoidal
// position encodings, pre-LN blocks with per-head causal attention and a
// ReLU MLP, final layernorm, untied unembedding.
struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo; // each [d_model, d_model]
    Tensor ln2_g, ln2_b;
    Tensor w1; // [d_model, d_mlp]
    Tensor w2; // [d_mlp, d_model]
};

struct TransformerModel {
    ModelConfig config;
    Tensor tok_emb; // [vocab_size, d_model]
    std::vector<LayerWeights> layers;
    Tensor lnf_g, lnf_b;
    Tensor unembed; // [d_model, vocab_size]
    std::uint64_t checkpoint_hash = 0; // 0 when built in memory

    void validate() const;
};

inline constexpr double kLnEps = 1e-5;

// Sinusoidal position encoding row for one position, length d_model.
void position_encoding(int pos, int d_model, scalar* out);

// Full (cache-free) forward over the whole token sequence; returns next-token
// logits at the last position. Hooks address the last position only.
Tensor forward_last(const TransformerModel& model, const std::vector<int>& tokens,
                    const HookSet& hooks, int step_index);

// Incremental generation session holding the KV cache. Feeding tokens one at
// a time is bit-equivalent to re-running the full forward at each length.
class GenerationSession {
public:
    GenerationSession(const TransformerModel& model, const HookSet& hooks);

    // Processes the prompt (hook step 0, no injection) and returns logits.
    Tensor prime(const std::vector<int>& prompt);
    // Appends one token (hook step = count of generated tokens fed so far).
    Tensor step(int token);

    int positions() const { return n_pos_; }

private:
    const TransformerModel& model_;
    const HookSet& hooks_;
    int n_pos_ = 0;
    int hook_step_ = 0;
    // per layer: keys / values, row per position, [max_seq_len, d_model]
    std::vector<std::vector<scalar>> k_cache_, v_cache_;

    Tensor feed(int token, const HookSet& hooks, bool allow_injection, int hook_step);
};

struct GenerationResult {
    std::vector<int> tokens; // includes EOS when it fired
    int steps = 0;           // number of forward passes == tokens generated
};

GenerationResult generate(const TransformerModel& model, const std::vector<int>& prompt_tokens,
                          const GenerationConfig& gen, const HookSet& hooks = {});

// Chat serialization with explicit role markers. Roles must alternate
// user/assistant starting with user; assistant turns are closed with EOS and
// a trailing assistant marker cues the reply when the last turn is a user's.
enum class Role { User, Assistant };

std::vector<int> chat_wrap(const Tokenizer& tok, const std::string& system,
                           const std::vector<std::pair<Role, std::string>>& turns);

// Deterministically initialized model for training and tests.
TransformerModel init_model(const ModelConfig& config, std::uint64_t seed, double init_std = 0.06);

} // namespace steerlab
