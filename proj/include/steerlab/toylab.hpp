#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "steerlab/contrastive.hpp"
#include "steerlab/evalharness.hpp"
#include "steerlab/langid.hpp"
#include "steerlab/model.hpp"
#include "steerlab/steering.hpp"

namespace steerlab::toylab {

// A synthetic language: shared function words and QA templates, but its own
// content vocabulary. The source-analog language ends words in consonants,
// the target-analog in vowels, so both a token-provenance check and the
// character n-gram scorer can tell them apart.
struct ToyLanguageSpec {
    std::string tag;
    std::uint64_t seed = 0;
    std::vector<std::string> entities;
    std::vector<std::string> relations;
    std::vector<std::string> values; // flat, [relation * values_per_relation + j]
    std::vector<std::string> function_words;
    std::string system_instruction;
    std::string answer_lead;

    std::vector<std::string> content_words() const;
};

inline constexpr int kToyEntities = 40;
inline constexpr int kToyRelations = 3;
inline constexpr int kToyValuesPerRelation = 8;

// Deterministic matched pair of toy languages.
std::pair<ToyLanguageSpec, ToyLanguageSpec> make_toy_languages(std::uint64_t seed);

// Parallel QA corpus; `mix` blends the two QA template families.
std::vector<contrastive::ContrastivePair> generate_corpus(const ToyLanguageSpec& spec_a,
                                                          const ToyLanguageSpec& spec_b,
                                                          int n_pairs, double mix);

// Multiple-choice items in the target language over the same fact table.
std::vector<eval::BenchmarkItem> make_toy_benchmark(const ToyLanguageSpec& spec_a,
                                                    const ToyLanguageSpec& spec_b, int n_items,
                                                    std::uint64_t seed);

// Word-level tokenizer covering both languages plus chat/punctuation tokens.
Tokenizer make_toy_tokenizer(const ToyLanguageSpec& spec_a, const ToyLanguageSpec& spec_b);

enum class Optimizer { Sgd, Momentum };

struct TrainConfig {
    int steps = 1200;
    int batch_size = 8;
    double learning_rate = 0.3;
    Optimizer optimizer = Optimizer::Momentum;
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_head = 16;
    int d_mlp = 256;
    int max_seq_len = 160;
    std::uint64_t seed = 0;
    int log_every = 100; // 0 silences progress
};

struct TrainOutcome {
    TransformerModel model;
    Tokenizer tokenizer;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Next-token training on chat-formatted renderings of the corpus (plain QA,
// few-shot QA and multiple-choice documents in both languages, with the
// source language as the no-instruction default). Deterministic given seed.
TrainOutcome train_toy(const std::vector<contrastive::ContrastivePair>& corpus,
                       const ToyLanguageSpec& spec_a, const ToyLanguageSpec& spec_b,
                       const TrainConfig& config);

// Share of target-language tokens among the content tokens of `text`;
// nullopt when no content token appears.
std::optional<double> target_vocab_share(const std::string& text, const ToyLanguageSpec& spec_a,
                                         const ToyLanguageSpec& spec_b);

struct PipelineOptions {
    int k = 8;
    double val_max = 1.5;
    int m_extract = 30;
    int n_shot = 5;
    int max_new_tokens = 30;
    std::uint64_t seed = 7;
    std::uint64_t lang_seed = 11;
    int threads = 1;
    std::string out_dir;
};

struct ApproachMetrics {
    eval::EvalSummary summary;
    double mean_vocab_share = 0.0;
};

struct PipelineOutcome {
    ApproachMetrics original;
    ApproachMetrics steered_ita;
    ApproachMetrics steered_ita_full;
    std::string report_path;
    std::string manifest_path;
};

// End-to-end toy run: build dataset versions, extract both deltas, evaluate
// original vs steered on the benchmark, write the report and a manifest that
// pins every seed and input hash.
PipelineOutcome run_paper_pipeline(const std::string& checkpoint_path,
                                   const std::string& vocab_path, const std::string& corpus_path,
                                   const std::string& benchmark_path,
                                   const PipelineOptions& options);

} // namespace steerlab::toylab
