#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "steerlab/errors.hpp"
#include "steerlab/model.hpp"
#include "steerlab/steering.hpp"

namespace steerlab::eval {

struct Option {
    char label = 'A';
    std::string text;
};

struct BenchmarkItem {
    std::string id;
    std::string question;
    std::vector<Option> options; // labels strictly increasing from A, 2..4 entries
    char gold = 'A';
    std::string shot_block; // preformatted exemplars, empty for 0-shot
};

struct BenchmarkConfig {
    std::string name;
    int n_shot = 0;
    std::string system_instruction; // may be empty
    int max_new_tokens = 30;
};

// Ready-made configs for the standard benchmarks.
BenchmarkConfig mmlu_config();
BenchmarkConfig hellaswag_config();
BenchmarkConfig arc_config();

struct EvalRecord {
    std::string id;
    std::string raw_generation;
    std::optional<char> extracted;
    bool correct = false;
    double lang_prob = 0.0;
};

struct EvalSummary {
    std::string approach;
    double accuracy_pct = 0.0;
    double mean_lang_prob = 0.0;
    int n_items = 0;
    int n_unparsed = 0;
};

struct EvalResult {
    std::vector<EvalRecord> records;
    EvalSummary summary;
};

// Applies, in order, the two answer patterns after mapping the accented
// character to its apostrophe form; the first match's option letter wins.
std::optional<char> extract_answer(const std::string& text);

// Text produced for one item's user turn: shot block, question, options.
std::string render_item_prompt(const BenchmarkItem& item);

// The harness is decoupled from the model through this: give it the full
// chat-wrapped prompt, get the generation text back.
using Generator = std::function<std::string(const std::string& system, const std::string& user)>;

// Optional language scorer applied to each raw generation.
using LanguageScorer = std::function<double(const std::string& text)>;

EvalResult run_benchmark(const std::vector<BenchmarkItem>& items, const BenchmarkConfig& config,
                         const Generator& generate_fn, const LanguageScorer& lang_scorer,
                         const std::string& approach_name, int threads = 1);

// Convenience wrapper running the model directly, optionally steered.
EvalResult run_benchmark(const TransformerModel& model, const Tokenizer& tok,
                         const std::vector<BenchmarkItem>& items, const BenchmarkConfig& config,
                         const steering::SteeringVector* vec, double val_max,
                         const LanguageScorer& lang_scorer, const std::string& approach_name,
                         int threads = 1);

// Figure-style partition of the item universe by exactly which approaches
// answered each item correctly.
struct OverlapBin {
    std::vector<std::string> members; // approaches correct on this bin, fixed order
    std::size_t count = 0;
};

std::vector<OverlapBin> overlap_analysis(
    const std::map<std::string, std::set<std::string>>& correct_sets,
    const std::set<std::string>& universe);

// Benchmark file: newline-delimited JSON records
// {id, question, options:[{label,text}...], gold, shot_block?}
std::vector<BenchmarkItem> load_benchmark(const std::string& path);
void save_benchmark(const std::vector<BenchmarkItem>& items, const std::string& path);

// Report: machine-readable JSON plus an aligned text table next to it
// (path with ".txt" appended). Overlap bins are written largest first.
void write_report(const std::vector<EvalSummary>& summaries,
                  const std::vector<OverlapBin>& overlap, const std::string& path);

std::vector<EvalSummary> read_report_summaries(const std::string& path);

// Per-run records file for later overlap analysis across runs.
void write_records(const EvalResult& result, const BenchmarkConfig& config,
                   const std::string& path);
EvalResult read_records(const std::string& path);

} // namespace steerlab::eval
