#include "steerlab/toylab.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "steerlab/checkpoint.hpp"
#include "steerlab/rng.hpp"
#include "trainer.hpp"

namespace steerlab::toylab {

namespace {

// ---- synthetic word shapes ----
// Source-analog words end in a consonant, target-analog words in a vowel, so
// the content vocabularies cannot collide and the character statistics of
// the two languages separate cleanly.

const std::vector<std::string> kOnsets = {"b",  "d",  "f",  "g",  "h",  "j",  "k",  "l",  "m",
                                          "n",  "p",  "r",  "s",  "t",  "v",  "z",  "br", "dr",
                                          "gr", "kr", "pr", "tr", "sk", "st", "sv", "fl"};
const std::vector<std::string> kNuclei = {"a", "e", "i", "o", "u"};
const std::vector<std::string> kCodas = {"k",  "l",  "m",  "n",  "r",  "s",  "t", "lk",
                                         "lt", "nd", "nk", "rn", "rt", "sk", "st"};
const std::vector<std::string> kSuffixes = {"o", "a", "ello", "ina", "etto", "ura", "oni"};

std::string draw_source_word(Rng& rng) {
    return kOnsets[static_cast<size_t>(rng.range(0, static_cast<int>(kOnsets.size())))] +
           kNuclei[static_cast<size_t>(rng.range(0, static_cast<int>(kNuclei.size())))] +
           kCodas[static_cast<size_t>(rng.range(0, static_cast<int>(kCodas.size())))];
}

std::string draw_target_word(Rng& rng) {
    return draw_source_word(rng) +
           kSuffixes[static_cast<size_t>(rng.range(0, static_cast<int>(kSuffixes.size())))];
}

std::vector<std::string> draw_unique(Rng& rng, int count, bool target_style,
                                     std::unordered_set<std::string>& taken) {
    std::vector<std::string> out;
    while (static_cast<int>(out.size()) < count) {
        const std::string w = target_style ? draw_target_word(rng) : draw_source_word(rng);
        if (taken.insert(w).second) out.push_back(w);
    }
    return out;
}

// facts: each (entity, relation) maps to one value index, deterministic in
// the language seed
int fact_value(std::uint64_t seed, int entity, int relation) {
    std::uint64_t h = seed ^ 0x2545F4914F6CDD1Dull;
    h ^= static_cast<std::uint64_t>(entity) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(relation) * 0xC2B2AE3D27D4EB4Full;
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDull;
    h ^= h >> 33;
    return static_cast<int>(h % kToyValuesPerRelation);
}

const std::string& value_word(const ToyLanguageSpec& spec, int relation, int value_idx) {
    return spec.values[static_cast<size_t>(relation * kToyValuesPerRelation + value_idx)];
}

std::string render_question(const ToyLanguageSpec& spec, int family, int entity, int relation) {
    const auto& ent = spec.entities[static_cast<size_t>(entity)];
    const auto& rel = spec.relations[static_cast<size_t>(relation)];
    if (family == 0) return "qe " + rel + " na " + ent + " ?";
    return "se " + ent + " vi " + rel + " ?";
}

std::string render_answer(const ToyLanguageSpec& spec, int family, int entity, int relation) {
    const auto& ent = spec.entities[static_cast<size_t>(entity)];
    const auto& rel = spec.relations[static_cast<size_t>(relation)];
    const auto& val = value_word(spec, relation, fact_value(spec.seed, entity, relation));
    if (family == 0) return ent + " po " + val + " .";
    return ent + " vi " + rel + " po " + val + " .";
}

std::string render_mc_user(const ToyLanguageSpec& spec, int entity, int relation,
                           const std::vector<int>& option_values) {
    std::string out = render_question(spec, 0, entity, relation);
    for (std::size_t i = 0; i < option_values.size(); ++i) {
        out += " (";
        out += static_cast<char>('A' + i);
        out += ") ";
        out += value_word(spec, relation, option_values[i]);
    }
    return out;
}

std::string render_mc_answer(const ToyLanguageSpec& spec, int entity, int relation, char letter) {
    const auto& ent = spec.entities[static_cast<size_t>(entity)];
    const auto& val = value_word(spec, relation, fact_value(spec.seed, entity, relation));
    std::string out = spec.answer_lead;
    out += " : ";
    out += letter;
    out += " , " + ent + " po " + val + " .";
    return out;
}

// 4 option value indices containing the fact value, order seeded
std::vector<int> draw_options(Rng& rng, std::uint64_t lang_seed, int entity, int relation,
                              char& gold_letter) {
    const int correct = fact_value(lang_seed, entity, relation);
    std::vector<int> candidates;
    for (int j = 0; j < kToyValuesPerRelation; ++j) {
        if (j != correct) candidates.push_back(j);
    }
    rng.shuffle(candidates);
    std::vector<int> options = {correct, candidates[0], candidates[1], candidates[2]};
    rng.shuffle(options);
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i] == correct) gold_letter = static_cast<char>('A' + i);
    }
    return options;
}

// entity split: multiple-choice exercises in training never use the
// benchmark's entities, while plain QA covers every fact
constexpr int kBenchmarkEntityStart = 26;

} // namespace

std::vector<std::string> ToyLanguageSpec::content_words() const {
    std::vector<std::string> out = entities;
    out.insert(out.end(), relations.begin(), relations.end());
    out.insert(out.end(), values.begin(), values.end());
    out.push_back(answer_lead);
    std::istringstream ss(system_instruction);
    std::string w;
    while (ss >> w) {
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    }
    return out;
}

std::pair<ToyLanguageSpec, ToyLanguageSpec> make_toy_languages(std::uint64_t seed) {
    Rng rng(seed);
    std::unordered_set<std::string> taken;
    // reserve the shared function words so content can never shadow them
    const std::vector<std::string> function_words = {"qe", "na", "po", "se", "vi"};
    for (const auto& w : function_words) taken.insert(w);

    ToyLanguageSpec a, b;
    a.tag = "keld";
    b.tag = "rova";
    a.seed = b.seed = seed;
    a.function_words = b.function_words = function_words;

    a.entities = draw_unique(rng, kToyEntities, false, taken);
    a.relations = draw_unique(rng, kToyRelations, false, taken);
    a.values = draw_unique(rng, kToyRelations * kToyValuesPerRelation, false, taken);
    b.entities = draw_unique(rng, kToyEntities, true, taken);
    b.relations = draw_unique(rng, kToyRelations, true, taken);
    b.values = draw_unique(rng, kToyRelations * kToyValuesPerRelation, true, taken);

    a.system_instruction = "svark na fragen";
    b.system_instruction = "svarko na frageno";
    a.answer_lead = "rek";
    b.answer_lead = "reko";
    return {a, b};
}

std::vector<contrastive::ContrastivePair> generate_corpus(const ToyLanguageSpec& spec_a,
                                                          const ToyLanguageSpec& spec_b,
                                                          int n_pairs, double mix) {
    if (n_pairs < 1) throw ArgumentError("n_pairs must be >= 1");
    if (mix < 0.0 || mix > 1.0) throw ArgumentError("mix must be in [0, 1]");
    {
        std::unordered_set<std::string> a_words;
        for (const auto& w : spec_a.content_words()) a_words.insert(w);
        for (const auto& w : spec_b.content_words()) {
            if (a_words.count(w)) {
                throw ConsistencyError("content vocabularies are not disjoint: " + w);
            }
        }
    }

    Rng rng(spec_a.seed ^ 0x6C62272E07BB0142ull);
    std::vector<std::pair<int, int>> combos;
    for (int e = 0; e < kToyEntities; ++e) {
        for (int r = 0; r < kToyRelations; ++r) combos.emplace_back(e, r);
    }
    rng.shuffle(combos);

    std::vector<contrastive::ContrastivePair> pairs;
    pairs.reserve(static_cast<size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        const auto [e, r] = combos[static_cast<size_t>(i) % combos.size()];
        const int family = rng.uniform() < mix ? 1 : 0;
        contrastive::ContrastivePair p;
        p.id = "toy-" + std::to_string(i);
        p.question_src = render_question(spec_a, family, e, r);
        p.answer_src = render_answer(spec_a, family, e, r);
        p.question_tgt = render_question(spec_b, family, e, r);
        p.answer_tgt = render_answer(spec_b, family, e, r);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<eval::BenchmarkItem> make_toy_benchmark(const ToyLanguageSpec& spec_a,
                                                    const ToyLanguageSpec& spec_b, int n_items,
                                                    std::uint64_t seed) {
    if (n_items < 1) throw ArgumentError("n_items must be >= 1");
    (void)spec_a;
    Rng rng(seed);
    std::vector<std::pair<int, int>> combos;
    for (int e = kBenchmarkEntityStart; e < kToyEntities; ++e) {
        for (int r = 0; r < kToyRelations; ++r) combos.emplace_back(e, r);
    }
    rng.shuffle(combos);

    std::vector<eval::BenchmarkItem> items;
    for (int i = 0; i < n_items; ++i) {
        const auto [e, r] = combos[static_cast<size_t>(i) % combos.size()];
        eval::BenchmarkItem item;
        item.id = "mc-" + std::to_string(i);
        char gold = 'A';
        const auto option_values = draw_options(rng, spec_b.seed, e, r, gold);
        item.question = render_question(spec_b, 0, e, r);
        for (std::size_t j = 0; j < option_values.size(); ++j) {
            item.options.push_back({static_cast<char>('A' + j),
                                    value_word(spec_b, r, option_values[j])});
        }
        item.gold = gold;
        items.push_back(std::move(item));
    }
    return items;
}

Tokenizer make_toy_tokenizer(const ToyLanguageSpec& spec_a, const ToyLanguageSpec& spec_b) {
    std::vector<std::string> words;
    auto add = [&](const std::vector<std::string>& ws) {
        words.insert(words.end(), ws.begin(), ws.end());
    };
    add(spec_a.function_words);
    add({"?", ".", ",", ":", "(A)", "(B)", "(C)", "(D)", "A", "B", "C", "D"});
    add(spec_a.content_words());
    add(spec_b.content_words());
    return Tokenizer::build(words);
}

namespace {

// chat document with a loss mask over the assistant answers (and their EOS)
train::TrainDocument build_doc(const Tokenizer& tok, const std::string& system,
                               const std::vector<std::pair<Role, std::string>>& turns) {
    train::TrainDocument doc;
    doc.tokens = chat_wrap(tok, system, turns);
    doc.target_mask.assign(doc.tokens.size(), 0);
    // walk the same structure to find the assistant spans
    std::size_t pos = 0;
    if (!system.empty()) pos += 1 + tok.encode(system).size();
    for (const auto& [role, text] : turns) {
        const std::size_t body = tok.encode(text).size();
        if (role == Role::User) {
            pos += 1 + body;
        } else {
            pos += 1; // marker
            for (std::size_t j = 0; j < body + 1; ++j) { // answer tokens and EOS
                doc.target_mask[pos + j] = 1;
            }
            pos += body + 1;
        }
    }
    return doc;
}

struct DocSampler {
    const std::vector<contrastive::ContrastivePair>& corpus;
    const ToyLanguageSpec& spec_a;
    const ToyLanguageSpec& spec_b;
    const Tokenizer& tok;

    std::pair<std::string, std::string> qa(const contrastive::ContrastivePair& p,
                                           contrastive::DatasetVersion v) const {
        switch (v) {
            case contrastive::DatasetVersion::Eng: return {p.question_src, p.answer_src};
            case contrastive::DatasetVersion::ItaFull: return {p.question_tgt, p.answer_tgt};
            case contrastive::DatasetVersion::Ita: return {p.question_src, p.answer_tgt};
        }
        return {};
    }

    train::TrainDocument single_qa(Rng& rng, const std::string& system,
                                   contrastive::DatasetVersion v) const {
        const auto& p = corpus[static_cast<size_t>(rng.range(0, static_cast<int>(corpus.size())))];
        const auto [q, a] = qa(p, v);
        return build_doc(tok, system, {{Role::User, q}, {Role::Assistant, a}});
    }

    train::TrainDocument few_shot(Rng& rng, const std::string& system,
                                  contrastive::DatasetVersion v) const {
        std::vector<std::pair<Role, std::string>> turns;
        const auto idx = rng.sample_indices(static_cast<int>(corpus.size()), 6);
        for (int i : idx) {
            const auto [q, a] = qa(corpus[static_cast<size_t>(i)], v);
            turns.emplace_back(Role::User, q);
            turns.emplace_back(Role::Assistant, a);
        }
        return build_doc(tok, system, turns);
    }

    train::TrainDocument multiple_choice(Rng& rng, const std::string& system,
                                         const ToyLanguageSpec& q_lang,
                                         const ToyLanguageSpec& a_lang) const {
        const int e = rng.range(0, kBenchmarkEntityStart);
        const int r = rng.range(0, kToyRelations);
        char gold = 'A';
        const auto option_values = draw_options(rng, q_lang.seed, e, r, gold);
        const std::string user = render_mc_user(q_lang, e, r, option_values);
        const std::string answer = render_mc_answer(a_lang, e, r, gold);
        return build_doc(tok, system, {{Role::User, user}, {Role::Assistant, answer}});
    }

    train::TrainDocument operator()(Rng& rng) const {
        using V = contrastive::DatasetVersion;
        const double roll = rng.uniform();
        const auto& sys_a = spec_a.system_instruction;
        const auto& sys_b = spec_b.system_instruction;
        if (roll < 0.14) return single_qa(rng, sys_a, V::Eng);
        if (roll < 0.22) return single_qa(rng, sys_b, V::ItaFull);
        if (roll < 0.30) return single_qa(rng, sys_b, V::Ita);
        if (roll < 0.36) return single_qa(rng, "", V::Eng);
        if (roll < 0.44) return few_shot(rng, sys_a, V::Eng);
        if (roll < 0.51) return few_shot(rng, sys_b, V::ItaFull);
        if (roll < 0.60) return few_shot(rng, sys_b, V::Ita);
        if (roll < 0.82) return multiple_choice(rng, "", spec_b, spec_a); // default answers: source
        if (roll < 0.94) return multiple_choice(rng, sys_b, spec_b, spec_b);
        return multiple_choice(rng, sys_a, spec_a, spec_a);
    }
};

} // namespace

TrainOutcome train_toy(const std::vector<contrastive::ContrastivePair>& corpus,
                       const ToyLanguageSpec& spec_a, const ToyLanguageSpec& spec_b,
                       const TrainConfig& config) {
    if (corpus.size() < 200) {
        throw ArgumentError("toy training needs at least 200 pairs, got " +
                            std::to_string(corpus.size()));
    }
    TrainOutcome out;
    out.tokenizer = make_toy_tokenizer(spec_a, spec_b);

    ModelConfig mc;
    mc.n_layers = config.n_layers;
    mc.n_heads = config.n_heads;
    mc.d_model = config.d_model;
    mc.d_head = config.d_head;
    mc.d_mlp = config.d_mlp;
    mc.vocab_size = out.tokenizer.vocab_size();
    mc.max_seq_len = config.max_seq_len;
    mc.eos_token_id = out.tokenizer.eos_id();
    out.model = init_model(mc, config.seed);

    DocSampler sampler{corpus, spec_a, spec_b, out.tokenizer};
    train::TrainerConfig tc;
    tc.steps = config.steps;
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;
    tc.momentum = config.optimizer == Optimizer::Momentum;
    tc.seed = config.seed + 1;
    tc.log_every = config.log_every;
    const auto result = train::train_lm(
        out.model, [&](Rng& rng) { return sampler(rng); }, tc);
    out.initial_loss = result.initial_loss;
    out.final_loss = result.final_loss;
    return out;
}

std::optional<double> target_vocab_share(const std::string& text, const ToyLanguageSpec& spec_a,
                                         const ToyLanguageSpec& spec_b) {
    std::unordered_set<std::string> a_set, b_set;
    for (const auto& w : spec_a.content_words()) a_set.insert(w);
    for (const auto& w : spec_b.content_words()) b_set.insert(w);
    std::istringstream ss(text);
    std::string w;
    int a = 0, b = 0;
    while (ss >> w) {
        if (a_set.count(w)) ++a;
        if (b_set.count(w)) ++b;
    }
    if (a + b == 0) return std::nullopt;
    return static_cast<double>(b) / (a + b);
}

PipelineOutcome run_paper_pipeline(const std::string& checkpoint_path,
                                   const std::string& vocab_path, const std::string& corpus_path,
                                   const std::string& benchmark_path,
                                   const PipelineOptions& options) {
    namespace fs = std::filesystem;
    if (options.out_dir.empty()) throw ArgumentError("pipeline needs an output directory");
    fs::create_directories(options.out_dir);
    const auto out_path = [&](const std::string& name) {
        return (fs::path(options.out_dir) / name).string();
    };

    const TransformerModel model = load_checkpoint(checkpoint_path);
    const Tokenizer tok = Tokenizer::load(vocab_path);
    const auto pairs = contrastive::load_pairs(corpus_path);
    const auto items = eval::load_benchmark(benchmark_path);
    const auto [spec_a, spec_b] = make_toy_languages(options.lang_seed);

    // language profiles from the corpus text itself
    std::vector<std::string> corpus_a, corpus_b;
    for (const auto& p : pairs) {
        corpus_a.push_back(p.question_src + " " + p.answer_src);
        corpus_b.push_back(p.question_tgt + " " + p.answer_tgt);
    }
    std::vector<langid::LanguageProfile> profiles = {
        langid::train_profile(corpus_a, spec_a.tag),
        langid::train_profile(corpus_b, spec_b.tag),
    };
    langid::save_profile(profiles[0], out_path(spec_a.tag + ".langprof"));
    langid::save_profile(profiles[1], out_path(spec_b.tag + ".langprof"));

    steering::ExtractionConfig ec;
    ec.k = options.k;
    ec.n_shot = options.n_shot;
    ec.m_extract = options.m_extract;
    ec.seed = options.seed;
    ec.threads = options.threads;
    ec.instruction_target = spec_b.system_instruction;
    ec.instruction_base = spec_a.system_instruction;

    using contrastive::DatasetVersion;
    const auto v_ita =
        steering::extract_steering_vector(model, tok, pairs, DatasetVersion::Ita,
                                          DatasetVersion::Eng, ec);
    const auto v_ita_full =
        steering::extract_steering_vector(model, tok, pairs, DatasetVersion::ItaFull,
                                          DatasetVersion::Eng, ec);
    steering::save_vector(v_ita, out_path("delta_ita.stvc"));
    steering::save_vector(v_ita_full, out_path("delta_ita_full.stvc"));

    eval::BenchmarkConfig bc;
    bc.name = "toy-mc";
    bc.n_shot = 0;
    bc.system_instruction = "";
    bc.max_new_tokens = options.max_new_tokens;

    eval::LanguageScorer scorer = [&](const std::string& text) {
        return langid::language_score(text, profiles, spec_b.tag);
    };

    auto evaluate = [&](const steering::SteeringVector* vec, const std::string& name) {
        return eval::run_benchmark(model, tok, items, bc, vec, options.val_max, scorer, name,
                                   options.threads);
    };
    const auto res_orig = evaluate(nullptr, "original");
    const auto res_ita = evaluate(&v_ita, "steered-ita");
    const auto res_full = evaluate(&v_ita_full, "steered-ita-full");

    auto mean_share = [&](const eval::EvalResult& res) {
        double sum = 0.0;
        int n = 0;
        for (const auto& rec : res.records) {
            const auto share = target_vocab_share(rec.raw_generation, spec_a, spec_b);
            if (share) {
                sum += *share;
                ++n;
            }
        }
        return n == 0 ? 0.0 : sum / n;
    };

    PipelineOutcome outcome;
    outcome.original = {res_orig.summary, mean_share(res_orig)};
    outcome.steered_ita = {res_ita.summary, mean_share(res_ita)};
    outcome.steered_ita_full = {res_full.summary, mean_share(res_full)};

    eval::write_records(res_orig, bc, out_path("records_original.json"));
    eval::write_records(res_ita, bc, out_path("records_steered-ita.json"));
    eval::write_records(res_full, bc, out_path("records_steered-ita-full.json"));

    std::set<std::string> universe;
    for (const auto& item : items) universe.insert(item.id);
    std::map<std::string, std::set<std::string>> correct_sets;
    for (const auto* res : {&res_orig, &res_ita, &res_full}) {
        auto& set = correct_sets[res->summary.approach];
        for (const auto& rec : res->records) {
            if (rec.correct) set.insert(rec.id);
        }
    }
    const auto overlap = eval::overlap_analysis(correct_sets, universe);

    outcome.report_path = out_path("report.json");
    eval::write_report({res_orig.summary, res_ita.summary, res_full.summary}, overlap,
                       outcome.report_path);

    nlohmann::ordered_json manifest;
    manifest["kind"] = "steerlab-pipeline";
    manifest["options"] = {{"k", options.k},
                           {"val_max", options.val_max},
                           {"m_extract", options.m_extract},
                           {"n_shot", options.n_shot},
                           {"max_new_tokens", options.max_new_tokens},
                           {"seed", options.seed},
                           {"lang_seed", options.lang_seed}};
    manifest["inputs"] = {{"checkpoint", checkpoint_path},
                          {"checkpoint_hash", model.checkpoint_hash},
                          {"vocab", vocab_path},
                          {"vocab_hash", hash_file(vocab_path)},
                          {"corpus", corpus_path},
                          {"corpus_hash", hash_file(corpus_path)},
                          {"benchmark", benchmark_path},
                          {"benchmark_hash", hash_file(benchmark_path)}};
    manifest["steering"] = {
        {"delta_ita", out_path("delta_ita.stvc")},
        {"delta_ita_hash", hash_file(out_path("delta_ita.stvc"))},
        {"delta_ita_full", out_path("delta_ita_full.stvc")},
        {"delta_ita_full_hash", hash_file(out_path("delta_ita_full.stvc"))},
    };
    auto approach_json = [](const ApproachMetrics& m) {
        return nlohmann::ordered_json{{"approach", m.summary.approach},
                                      {"accuracy_pct", m.summary.accuracy_pct},
                                      {"mean_lang_prob", m.summary.mean_lang_prob},
                                      {"mean_target_vocab_share", m.mean_vocab_share},
                                      {"n_items", m.summary.n_items},
                                      {"n_unparsed", m.summary.n_unparsed}};
    };
    manifest["results"] = {approach_json(outcome.original), approach_json(outcome.steered_ita),
                           approach_json(outcome.steered_ita_full)};
    manifest["report"] = outcome.report_path;

    outcome.manifest_path = out_path("manifest.json");
    std::ofstream mf(outcome.manifest_path, std::ios::binary);
    if (!mf) throw IoError("cannot write manifest: " + outcome.manifest_path);
    mf << manifest.dump(2) << '\n';
    if (!mf) throw IoError("failed writing manifest: " + outcome.manifest_path);

    return outcome;
}

} // namespace steerlab::toylab
