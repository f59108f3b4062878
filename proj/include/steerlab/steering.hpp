#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerlab/contrastive.hpp"
#include "steerlab/model.hpp"

namespace steerlab::steering {

// Identifies the inputs a vector was extracted from. A zero hash means
// "unfingerprinted" (in-memory model or corpus) and disables the check.
struct ExtractionFingerprint {
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t dataset_hash = 0;
    std::uint32_t m_extract = 0;
    std::uint32_t k = 0;
    std::uint64_t seed = 0;
};

// Last-token head activations recorded over one greedy generation. Entry s
// comes from the pass at hook step s (step 0 is the prompt pass); a
// generation of N tokens yields N entries, one per generated token.
struct ActivationTrace {
    std::vector<Tensor> steps; // each [L, H, d_head]
    std::vector<int> generated_tokens;
    std::string prompt_id;
    std::string version_tag;
};

// Per-step mean over a set of traces. Traces end at different lengths, so
// each retained step records how many traces were still alive there.
struct StepwiseMean {
    std::vector<Tensor> steps; // each [L, H, d_head]
    std::vector<int> contributors;
    std::string version_tag;
};

// Per-step, per-(layer, head) steering deltas: target mean minus base mean.
// deltas[s] aligns with hook step s; injection never touches step 0, which
// is kept only as the fallback when it is the sole entry.
struct SteeringVector {
    std::vector<Tensor> deltas; // each [L, H, d_head]
    std::string target_version;
    std::string base_version;
    std::uint32_t k = 0;
    ExtractionFingerprint fingerprint;

    int n_layers() const { return deltas.empty() ? 0 : deltas[0].dim(0); }
    int n_heads() const { return deltas.empty() ? 0 : deltas[0].dim(1); }
    int d_head() const { return deltas.empty() ? 0 : deltas[0].dim(2); }

    static SteeringVector zeros(int steps, int n_layers, int n_heads, int d_head);
};

// Steering intensity ramp: val_max at the first generated token, linearly
// down to 0 at token M. The M == 1 schedule degenerates to val_max.
struct AlphaSchedule {
    double val_max = 1.5;
    int m = 30;
};

double alpha_at(const AlphaSchedule& schedule, int i);

// Greedy generation with the recorder installed and no injector; one step
// entry per generated token, fewer than m_extract when EOS fires early.
ActivationTrace record_activations(const TransformerModel& model, const Tokenizer& tok,
                                   const contrastive::PromptBundle& prompt, int m_extract);

// Unweighted per-step mean over the traces alive at each step. Output length
// equals the longest trace.
StepwiseMean average_traces(const std::vector<ActivationTrace>& traces, int k);

// Elementwise target - base per step, truncated to the shorter length.
SteeringVector compute_delta(const StepwiseMean& target, const StepwiseMean& base);

// Injector implementing alpha_at(step) * delta[step], reusing the final
// delta past the recorded steps. Owns a scratch buffer; one instance per
// generation session.
class SteeringInjector {
public:
    SteeringInjector(const SteeringVector& vec, const AlphaSchedule& schedule);
    std::span<const scalar> operator()(int step, const HeadLocator& loc);

private:
    const SteeringVector& vec_;
    AlphaSchedule schedule_;
    std::vector<scalar> buf_;
};

struct SteeredGeneration {
    std::string text; // decoded without the trailing EOS
    std::vector<int> token_ids;
};

// Steered greedy decode. schedule.m must equal gen.max_new_tokens, and the
// vector's fingerprint must match the model unless force is set.
SteeredGeneration generate_steered(const TransformerModel& model, const Tokenizer& tok,
                                   const std::vector<int>& prompt_tokens,
                                   const SteeringVector& vec, const AlphaSchedule& schedule,
                                   const GenerationConfig& gen, bool force = false);

// Extraction over one contrast: records K traces for the target and base
// versions (shared query and shot sampling across versions) and returns the
// delta. Thread count > 1 parallelizes over prompts; the reduction order is
// fixed so results do not depend on it.
struct ExtractionConfig {
    int k = 30;
    int n_shot = 5;
    int m_extract = 30;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string instruction_target; // empty -> per-version default
    std::string instruction_base;
};

SteeringVector extract_steering_vector(const TransformerModel& model, const Tokenizer& tok,
                                       const std::vector<contrastive::ContrastivePair>& pairs,
                                       contrastive::DatasetVersion target_version,
                                       contrastive::DatasetVersion base_version,
                                       const ExtractionConfig& config);

// Steering-vector container, magic "STVC". Bit-exact round trip.
void save_vector(const SteeringVector& v, const std::string& path);
SteeringVector load_vector(const std::string& path);

// Exact on-disk size of a vector, from the format definition.
std::size_t vector_file_size(const SteeringVector& v);

} // namespace steerlab::steering
