#include "steerlab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "steerlab/checkpoint.hpp"
#include "steerlab/contrastive.hpp"
#include "steerlab/evalharness.hpp"
#include "steerlab/langid.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/toylab.hpp"

namespace steerlab::cli {

namespace {

namespace fs = std::filesystem;

std::string home_default(const std::string& filename) {
    const char* home = std::getenv("STEERLAB_HOME");
    if (home == nullptr || *home == '\0') return "";
    return (fs::path(home) / filename).string();
}

struct ModelArgs {
    std::string checkpoint;
    std::string vocab;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", checkpoint,
                        "model checkpoint (.stlb); defaults to $STEERLAB_HOME/checkpoint.stlb");
        cmd->add_option("--vocab", vocab,
                        "vocabulary file; defaults to $STEERLAB_HOME/vocab.txt");
    }

    std::pair<TransformerModel, Tokenizer> load(std::ostream& err) const {
        std::string cp = checkpoint.empty() ? home_default("checkpoint.stlb") : checkpoint;
        std::string vp = vocab.empty() ? home_default("vocab.txt") : vocab;
        if (cp.empty()) throw ArgumentError("no --model given and STEERLAB_HOME not set");
        if (vp.empty()) throw ArgumentError("no --vocab given and STEERLAB_HOME not set");
        err << "loading model " << cp << "\n";
        return {load_checkpoint(cp), Tokenizer::load(vp)};
    }
};

int run_extract(const ModelArgs& margs, const std::string& pairs_path,
                const std::string& version, const std::string& base, int k, int n_shot,
                int m_extract, std::uint64_t seed, int threads, const std::string& instr_target,
                const std::string& instr_base, const std::string& out_path, std::ostream& out,
                std::ostream& err) {
    const auto [model, tok] = margs.load(err);
    const auto pairs = contrastive::load_pairs(pairs_path);
    steering::ExtractionConfig ec;
    ec.k = k;
    ec.n_shot = n_shot;
    ec.m_extract = m_extract;
    ec.seed = seed;
    ec.threads = threads;
    ec.instruction_target = instr_target;
    ec.instruction_base = instr_base;
    err << "extracting " << version << " - " << base << " over K=" << k << " prompts\n";
    const auto vec = steering::extract_steering_vector(
        model, tok, pairs, contrastive::parse_version(version), contrastive::parse_version(base),
        ec);
    steering::save_vector(vec, out_path);
    out << out_path << "\n";
    return kExitOk;
}

int run_generate(const ModelArgs& margs, const std::string& prompt, const std::string& system,
                 const std::string& steering_path, double val_max, int max_new_tokens, bool force,
                 std::ostream& out, std::ostream& err) {
    const auto [model, tok] = margs.load(err);
    const auto prompt_tokens = chat_wrap(tok, system, {{Role::User, prompt}});
    GenerationConfig gen;
    gen.max_new_tokens = max_new_tokens;
    if (steering_path.empty()) {
        auto result = generate(model, prompt_tokens, gen);
        if (!result.tokens.empty() && result.tokens.back() == model.config.eos_token_id) {
            result.tokens.pop_back();
        }
        out << tok.decode(result.tokens) << "\n";
        return kExitOk;
    }
    const auto vec = steering::load_vector(steering_path);
    steering::AlphaSchedule schedule{val_max, max_new_tokens};
    const auto result = steering::generate_steered(model, tok, prompt_tokens, vec, schedule, gen,
                                                   force);
    out << result.text << "\n";
    return kExitOk;
}

int run_eval(const ModelArgs& margs, const std::string& benchmark_path, const std::string& preset,
             int n_shot_override, const std::string& instruction_override,
             const std::string& steering_path, double val_max, int max_new_tokens,
             const std::string& profiles_dir, const std::string& target_lang,
             const std::string& name, const std::string& out_path, int threads, bool force,
             std::ostream& out, std::ostream& err) {
    const auto [model, tok] = margs.load(err);
    const auto items = eval::load_benchmark(benchmark_path);

    eval::BenchmarkConfig bc;
    if (preset == "mmlu") {
        bc = eval::mmlu_config();
    } else if (preset == "hellaswag") {
        bc = eval::hellaswag_config();
    } else if (preset == "arc") {
        bc = eval::arc_config();
    } else {
        bc.name = fs::path(benchmark_path).stem().string();
    }
    if (n_shot_override >= 0) bc.n_shot = n_shot_override;
    if (!instruction_override.empty()) bc.system_instruction = instruction_override;
    bc.max_new_tokens = max_new_tokens;

    eval::LanguageScorer scorer;
    std::vector<langid::LanguageProfile> profiles;
    if (!profiles_dir.empty()) {
        if (target_lang.empty()) throw ArgumentError("--profiles requires --target-lang");
        for (const auto& entry : fs::directory_iterator(profiles_dir)) {
            if (entry.path().extension() == ".langprof") {
                profiles.push_back(langid::load_profile(entry.path().string()));
            }
        }
        std::sort(profiles.begin(), profiles.end(),
                  [](const auto& a, const auto& b) { return a.tag < b.tag; });
        if (profiles.empty()) throw ArgumentError("no .langprof files in " + profiles_dir);
        scorer = [&profiles, target_lang](const std::string& text) {
            return langid::language_score(text, profiles, target_lang);
        };
    }

    steering::SteeringVector vec;
    const steering::SteeringVector* vec_ptr = nullptr;
    if (!steering_path.empty()) {
        vec = steering::load_vector(steering_path);
        if (!force && vec.fingerprint.checkpoint_hash != 0 && model.checkpoint_hash != 0 &&
            vec.fingerprint.checkpoint_hash != model.checkpoint_hash) {
            throw CompatibilityError("steering vector does not match the checkpoint");
        }
        vec_ptr = &vec;
    }

    err << "evaluating " << items.size() << " items (" << bc.name << ")\n";
    const auto result =
        eval::run_benchmark(model, tok, items, bc, vec_ptr, val_max, scorer, name, threads);
    if (!out_path.empty()) eval::write_records(result, bc, out_path);
    out << "approach " << result.summary.approach << " accuracy "
        << result.summary.accuracy_pct << "% lang " << result.summary.mean_lang_prob
        << " unparsed " << result.summary.n_unparsed << "\n";
    return kExitOk;
}

int run_train_toy(const std::string& out_dir, int steps, int batch, double lr,
                  const std::string& optimizer, std::uint64_t seed, std::uint64_t lang_seed,
                  int pairs_count, double mix, int benchmark_items, int log_every,
                  std::ostream& out, std::ostream& err) {
    fs::create_directories(out_dir);
    const auto [spec_a, spec_b] = toylab::make_toy_languages(lang_seed);
    const auto corpus = toylab::generate_corpus(spec_a, spec_b, pairs_count, 0.35);
    (void)mix;
    const auto benchmark = toylab::make_toy_benchmark(spec_a, spec_b, benchmark_items,
                                                      lang_seed + 1);

    toylab::TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = batch;
    tc.learning_rate = lr;
    tc.optimizer = optimizer == "sgd" ? toylab::Optimizer::Sgd : toylab::Optimizer::Momentum;
    tc.seed = seed;
    tc.log_every = log_every;

    err << "training toy model (" << steps << " steps)\n";
    const auto outcome = toylab::train_toy(corpus, spec_a, spec_b, tc);

    const auto path = [&](const std::string& n) { return (fs::path(out_dir) / n).string(); };
    contrastive::save_pairs(corpus, path("pairs.jsonl"));
    outcome.tokenizer.save(path("vocab.txt"));
    save_checkpoint(outcome.model, path("checkpoint.stlb"));
    eval::save_benchmark(benchmark, path("benchmark.jsonl"));

    nlohmann::ordered_json manifest;
    manifest["kind"] = "steerlab-train-toy";
    manifest["seed"] = seed;
    manifest["lang_seed"] = lang_seed;
    manifest["steps"] = steps;
    manifest["batch_size"] = batch;
    manifest["learning_rate"] = lr;
    manifest["optimizer"] = optimizer;
    manifest["pairs"] = pairs_count;
    manifest["vocab_size"] = outcome.tokenizer.vocab_size();
    manifest["initial_loss"] = outcome.initial_loss;
    manifest["final_loss"] = outcome.final_loss;
    manifest["loss_ratio"] = outcome.final_loss / outcome.initial_loss;
    manifest["checkpoint_hash"] = hash_file(path("checkpoint.stlb"));
    std::ofstream mf(path("train_manifest.json"), std::ios::binary);
    mf << manifest.dump(2) << '\n';

    out << "final loss " << outcome.final_loss << " (initial " << outcome.initial_loss << ")\n";
    out << path("checkpoint.stlb") << "\n";
    return kExitOk;
}

int run_pipeline(const std::string& checkpoint, const std::string& vocab,
                 const std::string& pairs, const std::string& benchmark, int k, double val_max,
                 int m_extract, int n_shot, int max_new_tokens, std::uint64_t seed,
                 std::uint64_t lang_seed, int threads, const std::string& out_dir,
                 std::ostream& out, std::ostream& err) {
    toylab::PipelineOptions opt;
    opt.k = k;
    opt.val_max = val_max;
    opt.m_extract = m_extract;
    opt.n_shot = n_shot;
    opt.max_new_tokens = max_new_tokens;
    opt.seed = seed;
    opt.lang_seed = lang_seed;
    opt.threads = threads;
    opt.out_dir = out_dir;
    err << "running pipeline into " << out_dir << "\n";
    const auto outcome =
        toylab::run_paper_pipeline(checkpoint, vocab, pairs, benchmark, opt);
    for (const auto* m :
         {&outcome.original, &outcome.steered_ita, &outcome.steered_ita_full}) {
        out << m->summary.approach << ": accuracy " << m->summary.accuracy_pct << "% lang "
            << m->summary.mean_lang_prob << " vocab-share " << m->mean_vocab_share << "\n";
    }
    out << outcome.report_path << "\n";
    return kExitOk;
}

int run_report(const std::vector<std::string>& record_paths, const std::string& out_path,
               std::ostream& out, std::ostream& err) {
    if (record_paths.empty()) throw ArgumentError("report needs at least one records file");
    std::vector<eval::EvalSummary> summaries;
    std::map<std::string, std::set<std::string>> correct_sets;
    std::set<std::string> universe;
    bool first = true;
    for (const auto& path : record_paths) {
        const auto res = eval::read_records(path);
        summaries.push_back(res.summary);
        std::set<std::string> ids;
        for (const auto& rec : res.records) ids.insert(rec.id);
        if (first) {
            universe = ids;
            first = false;
        } else if (ids != universe) {
            throw ConsistencyError("records files cover different item sets: " + path);
        }
        auto& set = correct_sets[res.summary.approach];
        for (const auto& rec : res.records) {
            if (rec.correct) set.insert(rec.id);
        }
    }
    const auto overlap = eval::overlap_analysis(correct_sets, universe);
    eval::write_report(summaries, overlap, out_path);
    err << "wrote " << out_path << " and " << out_path << ".txt\n";
    out << out_path << "\n";
    return kExitOk;
}

int run_inspect(const std::string& path, std::ostream& out) {
    const auto v = steering::load_vector(path);
    out << "steps: " << v.deltas.size() << "\n";
    out << "layers: " << v.n_layers() << " heads: " << v.n_heads() << " d_head: " << v.d_head()
        << "\n";
    out << "target: " << v.target_version << " base: " << v.base_version << " K: " << v.k << "\n";
    out << "fingerprint: checkpoint " << v.fingerprint.checkpoint_hash << " dataset "
        << v.fingerprint.dataset_hash << " m_extract " << v.fingerprint.m_extract << " seed "
        << v.fingerprint.seed << "\n";
    for (std::size_t s = 0; s < v.deltas.size(); ++s) {
        double sq = 0.0;
        for (const scalar x : v.deltas[s].values()) sq += static_cast<double>(x) * x;
        out << "step " << s << " norm " << std::sqrt(sq) << "\n";
    }
    return kExitOk;
}

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"contrastive activation steering toolkit"};
    app.require_subcommand(1);

    // extract
    auto* extract = app.add_subcommand("extract", "extract a steering vector from paired prompts");
    ModelArgs extract_model;
    extract_model.attach(extract);
    std::string pairs_path, version = "ITA", base = "ENG", out_path = "vector.stvc";
    std::string instr_target, instr_base;
    int k = 30, n_shot = 5, m_extract = 30, threads = 1;
    std::uint64_t seed = 0;
    extract->add_option("--pairs", pairs_path, "contrastive pair file")->required();
    extract->add_option("--version", version, "target dataset version (ENG|ITA|ITA-full)");
    extract->add_option("--base", base, "base dataset version");
    extract->add_option("--k", k, "number of prompts per version");
    extract->add_option("--n-shot", n_shot, "shots per prompt");
    extract->add_option("--m-extract", m_extract, "generation steps to record");
    extract->add_option("--seed", seed, "sampling seed");
    extract->add_option("--threads", threads, "worker threads");
    extract->add_option("--instruction-target", instr_target, "override target instruction");
    extract->add_option("--instruction-base", instr_base, "override base instruction");
    extract->add_option("--out", out_path, "output .stvc path");

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "generate text, optionally steered");
    ModelArgs gen_model;
    gen_model.attach(gen_cmd);
    std::string prompt, system, steering_path;
    double val_max = 1.5;
    int max_new_tokens = 30;
    bool force = false;
    gen_cmd->add_option("--prompt", prompt, "user prompt text")->required();
    gen_cmd->add_option("--system", system, "system instruction");
    gen_cmd->add_option("--steering", steering_path, "steering vector (.stvc)");
    gen_cmd->add_option("--val-max", val_max, "steering intensity at the first token");
    gen_cmd->add_option("--max-new-tokens", max_new_tokens, "generation cap");
    gen_cmd->add_flag("--force", force, "skip the fingerprint check");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "run a multiple-choice benchmark");
    ModelArgs eval_model;
    eval_model.attach(eval_cmd);
    std::string benchmark_path, preset, instruction_override, profiles_dir, target_lang;
    std::string eval_steering, eval_out, approach_name = "run";
    double eval_val_max = 1.5;
    int eval_max_new = 30, eval_threads = 1, n_shot_override = -1;
    bool eval_force = false;
    eval_cmd->add_option("--benchmark", benchmark_path, "benchmark file")->required();
    eval_cmd->add_option("--preset", preset, "mmlu|hellaswag|arc");
    eval_cmd->add_option("--n-shot", n_shot_override, "override shots");
    eval_cmd->add_option("--instruction", instruction_override, "override system instruction");
    eval_cmd->add_option("--steering", eval_steering, "steering vector (.stvc)");
    eval_cmd->add_option("--val-max", eval_val_max, "steering intensity");
    eval_cmd->add_option("--max-new-tokens", eval_max_new, "generation cap");
    eval_cmd->add_option("--profiles", profiles_dir, "directory of .langprof files");
    eval_cmd->add_option("--target-lang", target_lang, "language tag to score");
    eval_cmd->add_option("--name", approach_name, "approach name in the records");
    eval_cmd->add_option("--out", eval_out, "records output path");
    eval_cmd->add_option("--threads", eval_threads, "worker threads");
    eval_cmd->add_flag("--force", eval_force, "skip the fingerprint check");

    // train-toy
    auto* train_cmd = app.add_subcommand("train-toy", "train the bundled toy bilingual model");
    std::string train_out_dir = "toy-out", optimizer = "momentum";
    int steps = 1200, batch = 8, pairs_count = 240, benchmark_items = 42, log_every = 100;
    double lr = 0.3, mix = 0.35;
    std::uint64_t train_seed = 5, lang_seed = 11;
    train_cmd->add_option("--out-dir", train_out_dir, "output directory");
    train_cmd->add_option("--steps", steps, "training steps");
    train_cmd->add_option("--batch", batch, "batch size");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--optimizer", optimizer, "sgd|momentum");
    train_cmd->add_option("--seed", train_seed, "training seed");
    train_cmd->add_option("--lang-seed", lang_seed, "toy language seed");
    train_cmd->add_option("--pairs-count", pairs_count, "corpus size");
    train_cmd->add_option("--mix", mix, "template family blend");
    train_cmd->add_option("--benchmark-items", benchmark_items, "benchmark size");
    train_cmd->add_option("--log-every", log_every, "progress cadence (0 silences)");

    // pipeline
    auto* pipe_cmd = app.add_subcommand("pipeline", "full toy experiment: extract, steer, eval");
    std::string pipe_checkpoint, pipe_vocab, pipe_pairs, pipe_benchmark, pipe_out_dir = "pipeline-out";
    int pipe_k = 8, pipe_m_extract = 30, pipe_n_shot = 5, pipe_max_new = 30, pipe_threads = 1;
    double pipe_val_max = 1.5;
    std::uint64_t pipe_seed = 7, pipe_lang_seed = 11;
    pipe_cmd->add_option("--checkpoint", pipe_checkpoint, "toy checkpoint")->required();
    pipe_cmd->add_option("--vocab", pipe_vocab, "vocabulary file")->required();
    pipe_cmd->add_option("--pairs", pipe_pairs, "contrastive pair file")->required();
    pipe_cmd->add_option("--benchmark", pipe_benchmark, "benchmark file")->required();
    pipe_cmd->add_option("--k", pipe_k, "prompts per version");
    pipe_cmd->add_option("--val-max", pipe_val_max, "steering intensity");
    pipe_cmd->add_option("--m-extract", pipe_m_extract, "extraction steps");
    pipe_cmd->add_option("--n-shot", pipe_n_shot, "shots per extraction prompt");
    pipe_cmd->add_option("--max-new-tokens", pipe_max_new, "eval generation cap");
    pipe_cmd->add_option("--seed", pipe_seed, "extraction seed");
    pipe_cmd->add_option("--lang-seed", pipe_lang_seed, "toy language seed");
    pipe_cmd->add_option("--threads", pipe_threads, "worker threads");
    pipe_cmd->add_option("--out-dir", pipe_out_dir, "output directory");

    // report
    auto* report_cmd = app.add_subcommand("report", "combine eval records into a report");
    std::vector<std::string> record_paths;
    std::string report_out = "report.json";
    report_cmd->add_option("--in", record_paths, "records files")->required()->expected(-1);
    report_cmd->add_option("--out", report_out, "report output path");

    // inspect-vector
    auto* inspect_cmd = app.add_subcommand("inspect-vector", "print steering vector metadata");
    std::string inspect_path;
    inspect_cmd->add_option("--in", inspect_path, "steering vector (.stvc)")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        err << app.help();
        return kExitArgument;
    }

    try {
        if (extract->parsed()) {
            return run_extract(extract_model, pairs_path, version, base, k, n_shot, m_extract,
                               seed, threads, instr_target, instr_base, out_path, out, err);
        }
        if (gen_cmd->parsed()) {
            return run_generate(gen_model, prompt, system, steering_path, val_max, max_new_tokens,
                                force, out, err);
        }
        if (eval_cmd->parsed()) {
            return run_eval(eval_model, benchmark_path, preset, n_shot_override,
                            instruction_override, eval_steering, eval_val_max, eval_max_new,
                            profiles_dir, target_lang, approach_name, eval_out, eval_threads,
                            eval_force, out, err);
        }
        if (train_cmd->parsed()) {
            return run_train_toy(train_out_dir, steps, batch, lr, optimizer, train_seed,
                                 lang_seed, pairs_count, mix, benchmark_items, log_every, out,
                                 err);
        }
        if (pipe_cmd->parsed()) {
            return run_pipeline(pipe_checkpoint, pipe_vocab, pipe_pairs, pipe_benchmark, pipe_k,
                                pipe_val_max, pipe_m_extract, pipe_n_shot, pipe_max_new,
                                pipe_seed, pipe_lang_seed, pipe_threads, pipe_out_dir, out, err);
        }
        if (report_cmd->parsed()) {
            return run_report(record_paths, report_out, out, err);
        }
        if (inspect_cmd->parsed()) {
            return run_inspect(inspect_path, out);
        }
    } catch (const ArgumentError& e) {
        err << "argument error: " << e.what() << "\n";
        return kExitArgument;
    } catch (const DimensionError& e) {
        err << "argument error: " << e.what() << "\n";
        return kExitArgument;
    } catch (const DomainError& e) {
        err << "argument error: " << e.what() << "\n";
        return kExitArgument;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const ParseError& e) {
        err << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const CompatibilityError& e) {
        err << "compatibility error: " << e.what() << "\n";
        return kExitCompatibility;
    } catch (const ConsistencyError& e) {
        err << "compatibility error: " << e.what() << "\n";
        return kExitCompatibility;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitRuntime;
}

} // namespace steerlab::cli
