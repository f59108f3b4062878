#include "steerlab/evalharness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace steerlab::eval {

BenchmarkConfig mmlu_config() {
    // no instruction; the 5 in-context examples carry the format
    return {"mmlu", 5, "", 30};
}

BenchmarkConfig hellaswag_config() {
    return {"hellaswag", 0, "Scegli la continuazione più adatta tra A, B, C e D", 30};
}

BenchmarkConfig arc_config() {
    return {"arc", 0, "Scegli la risposta corretta tra A, B, C e D", 30};
}

std::optional<char> extract_answer(const std::string& text) {
    // map the accented e (and its capital) to the apostrophe form the
    // patterns expect; option letters are left untouched
    std::string t;
    t.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (c == 0xC3 && i + 1 < text.size()) {
            const unsigned char d = static_cast<unsigned char>(text[i + 1]);
            if (d == 0xA8 || d == 0x88) { // è / È
                t += "e'";
                ++i;
                continue;
            }
        }
        t.push_back(static_cast<char>(c));
    }

    static const std::regex pattern1(R"((Risposta:|risposta e')\s*\(?([ABCD])\)?)");
    static const std::regex pattern2(R"( (:|e')\s*\(?([ABCD])\)?\b)");
    std::smatch m;
    if (std::regex_search(t, m, pattern1)) return m[2].str()[0];
    if (std::regex_search(t, m, pattern2)) return m[2].str()[0];
    return std::nullopt;
}

std::string render_item_prompt(const BenchmarkItem& item) {
    std::string out;
    if (!item.shot_block.empty()) {
        out += item.shot_block;
        out += ' ';
    }
    out += item.question;
    for (const auto& opt : item.options) {
        out += " (";
        out += opt.label;
        out += ") ";
        out += opt.text;
    }
    return out;
}

EvalResult run_benchmark(const std::vector<BenchmarkItem>& items, const BenchmarkConfig& config,
                         const Generator& generate_fn, const LanguageScorer& lang_scorer,
                         const std::string& approach_name, int threads) {
    if (items.empty()) throw ArgumentError("benchmark has no items");

    EvalResult result;
    result.records.resize(items.size());

    auto work = [&](std::size_t i) {
        const auto& item = items[i];
        EvalRecord rec;
        rec.id = item.id;
        try {
            BenchmarkItem shown = item;
            if (config.n_shot == 0) shown.shot_block.clear();
            rec.raw_generation = generate_fn(config.system_instruction, render_item_prompt(shown));
            rec.extracted = extract_answer(rec.raw_generation);
            rec.correct = rec.extracted.has_value() && *rec.extracted == item.gold;
            if (lang_scorer && !rec.raw_generation.empty()) {
                try {
                    rec.lang_prob = lang_scorer(rec.raw_generation);
                } catch (const LowConfidenceError&) {
                    rec.lang_prob = 0.0;
                }
            }
        } catch (const Error&) {
            // assembly/generation failure: unparsed, keep going
            rec.extracted = std::nullopt;
            rec.correct = false;
        }
        result.records[i] = std::move(rec);
    };

    threads = std::max(1, threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < items.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = static_cast<std::size_t>(t); i < items.size();
                     i += static_cast<std::size_t>(threads)) {
                    work(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    auto& s = result.summary;
    s.approach = approach_name;
    s.n_items = static_cast<int>(items.size());
    int n_correct = 0;
    double lang_sum = 0.0;
    for (const auto& rec : result.records) {
        if (rec.correct) ++n_correct;
        if (!rec.extracted.has_value()) ++s.n_unparsed;
        lang_sum += rec.lang_prob;
    }
    s.accuracy_pct = 100.0 * n_correct / s.n_items;
    s.mean_lang_prob = lang_sum / s.n_items;
    return result;
}

EvalResult run_benchmark(const TransformerModel& model, const Tokenizer& tok,
                         const std::vector<BenchmarkItem>& items, const BenchmarkConfig& config,
                         const steering::SteeringVector* vec, double val_max,
                         const LanguageScorer& lang_scorer, const std::string& approach_name,
                         int threads) {
    GenerationConfig gen;
    gen.max_new_tokens = config.max_new_tokens;
    Generator generate_fn = [&, vec, val_max, gen](const std::string& system,
                                                   const std::string& user) {
        const auto prompt = chat_wrap(tok, system, {{Role::User, user}});
        if (vec != nullptr) {
            steering::AlphaSchedule schedule{val_max, gen.max_new_tokens};
            return steering::generate_steered(model, tok, prompt, *vec, schedule, gen).text;
        }
        auto out = generate(model, prompt, gen);
        if (!out.tokens.empty() && out.tokens.back() == model.config.eos_token_id) {
            out.tokens.pop_back();
        }
        return tok.decode(out.tokens);
    };
    return run_benchmark(items, config, generate_fn, lang_scorer, approach_name, threads);
}

std::vector<OverlapBin> overlap_analysis(
    const std::map<std::string, std::set<std::string>>& correct_sets,
    const std::set<std::string>& universe) {
    for (const auto& [approach, ids] : correct_sets) {
        for (const auto& id : ids) {
            if (!universe.count(id)) {
                throw ConsistencyError("approach " + approach + " reports item outside universe: " +
                                       id);
            }
        }
    }
    std::map<std::vector<std::string>, std::size_t> bins;
    for (const auto& id : universe) {
        std::vector<std::string> members;
        for (const auto& [approach, ids] : correct_sets) {
            if (ids.count(id)) members.push_back(approach);
        }
        ++bins[members];
    }
    std::vector<OverlapBin> out;
    out.reserve(bins.size());
    for (auto& [members, count] : bins) out.push_back({members, count});
    std::sort(out.begin(), out.end(), [](const OverlapBin& a, const OverlapBin& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.members < b.members;
    });
    return out;
}

std::vector<BenchmarkItem> load_benchmark(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open benchmark file: " + path);
    std::vector<BenchmarkItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("benchmark line " + std::to_string(lineno) + ": " + e.what());
        }
        BenchmarkItem item;
        try {
            item.id = rec.at("id").get<std::string>();
            item.question = rec.at("question").get<std::string>();
            for (const auto& o : rec.at("options")) {
                Option opt;
                const auto label = o.at("label").get<std::string>();
                if (label.size() != 1) throw ParseError("option label must be one letter");
                opt.label = label[0];
                opt.text = o.at("text").get<std::string>();
                item.options.push_back(std::move(opt));
            }
            const auto gold = rec.at("gold").get<std::string>();
            if (gold.size() != 1) throw ParseError("gold label must be one letter");
            item.gold = gold[0];
            if (rec.contains("shot_block")) item.shot_block = rec["shot_block"].get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("benchmark line " + std::to_string(lineno) + ": " + e.what());
        }
        if (item.options.size() < 2 || item.options.size() > 4) {
            throw ParseError("benchmark line " + std::to_string(lineno) +
                             ": items must have 2 to 4 options");
        }
        for (std::size_t i = 0; i < item.options.size(); ++i) {
            if (item.options[i].label != static_cast<char>('A' + i)) {
                throw ParseError("benchmark line " + std::to_string(lineno) +
                                 ": option labels must increase from A");
            }
        }
        bool gold_ok = false;
        for (const auto& o : item.options) gold_ok |= o.label == item.gold;
        if (!gold_ok) {
            throw ParseError("benchmark line " + std::to_string(lineno) +
                             ": gold label not among options");
        }
        items.push_back(std::move(item));
    }
    return items;
}

void save_benchmark(const std::vector<BenchmarkItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write benchmark file: " + path);
    for (const auto& item : items) {
        nlohmann::ordered_json rec;
        rec["id"] = item.id;
        rec["question"] = item.question;
        auto opts = nlohmann::ordered_json::array();
        for (const auto& o : item.options) {
            opts.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
        }
        rec["options"] = opts;
        rec["gold"] = std::string(1, item.gold);
        if (!item.shot_block.empty()) rec["shot_block"] = item.shot_block;
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("failed writing benchmark file: " + path);
}

namespace {

nlohmann::ordered_json summary_to_json(const EvalSummary& s) {
    nlohmann::ordered_json j;
    j["approach"] = s.approach;
    j["accuracy_pct"] = s.accuracy_pct;
    j["mean_lang_prob"] = s.mean_lang_prob;
    j["n_items"] = s.n_items;
    j["n_unparsed"] = s.n_unparsed;
    return j;
}

EvalSummary summary_from_json(const nlohmann::json& j) {
    EvalSummary s;
    s.approach = j.at("approach").get<std::string>();
    s.accuracy_pct = j.at("accuracy_pct").get<double>();
    s.mean_lang_prob = j.at("mean_lang_prob").get<double>();
    s.n_items = j.at("n_items").get<int>();
    s.n_unparsed = j.at("n_unparsed").get<int>();
    return s;
}

std::string bin_name(const std::vector<std::string>& members) {
    if (members.empty()) return "(none)";
    std::string name;
    for (const auto& m : members) {
        if (!name.empty()) name += "+";
        name += m;
    }
    return name;
}

} // namespace

void write_report(const std::vector<EvalSummary>& summaries,
                  const std::vector<OverlapBin>& overlap, const std::string& path) {
    nlohmann::ordered_json j;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& s : summaries) rows.push_back(summary_to_json(s));
    j["summaries"] = rows;
    auto bins = nlohmann::ordered_json::array();
    for (const auto& b : overlap) {
        bins.push_back({{"members", b.members}, {"count", b.count}});
    }
    j["overlap"] = bins;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing report: " + path);

    std::ofstream txt(path + ".txt", std::ios::binary);
    if (!txt) throw IoError("cannot write report table: " + path + ".txt");
    std::size_t name_w = 8;
    for (const auto& s : summaries) name_w = std::max(name_w, s.approach.size());
    txt << std::left << std::setw(static_cast<int>(name_w) + 2) << "Approach"
        << std::right << std::setw(12) << "Accuracy %" << std::setw(12) << "lang" << std::setw(9)
        << "items" << std::setw(11) << "unparsed" << '\n';
    for (const auto& s : summaries) {
        txt << std::left << std::setw(static_cast<int>(name_w) + 2) << s.approach << std::right
            << std::setw(12) << std::fixed << std::setprecision(2) << s.accuracy_pct
            << std::setw(12) << std::setprecision(3) << s.mean_lang_prob << std::setw(9)
            << s.n_items << std::setw(11) << s.n_unparsed << '\n';
    }
    if (!overlap.empty()) {
        txt << "\nCorrect-answer combinations (largest first):\n";
        for (const auto& b : overlap) {
            txt << "  " << std::left << std::setw(40) << bin_name(b.members) << ' ' << b.count
                << '\n';
        }
    }
    if (!txt) throw IoError("failed writing report table: " + path + ".txt");
}

std::vector<EvalSummary> read_report_summaries(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open report: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("report parse failure: ") + e.what());
    }
    std::vector<EvalSummary> out;
    for (const auto& row : j.at("summaries")) out.push_back(summary_from_json(row));
    return out;
}

void write_records(const EvalResult& result, const BenchmarkConfig& config,
                   const std::string& path) {
    nlohmann::ordered_json j;
    j["approach"] = result.summary.approach;
    j["benchmark"] = config.name;
    j["summary"] = summary_to_json(result.summary);
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : result.records) {
        nlohmann::ordered_json rec;
        rec["id"] = r.id;
        rec["raw_generation"] = r.raw_generation;
        rec["extracted"] = r.extracted ? std::string(1, *r.extracted) : std::string();
        rec["correct"] = r.correct;
        rec["lang_prob"] = r.lang_prob;
        rows.push_back(std::move(rec));
    }
    j["records"] = rows;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write records: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing records: " + path);
}

EvalResult read_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open records: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("records parse failure: ") + e.what());
    }
    EvalResult result;
    result.summary = summary_from_json(j.at("summary"));
    for (const auto& rec : j.at("records")) {
        EvalRecord r;
        r.id = rec.at("id").get<std::string>();
        r.raw_generation = rec.at("raw_generation").get<std::string>();
        const auto ex = rec.at("extracted").get<std::string>();
        if (!ex.empty()) r.extracted = ex[0];
        r.correct = rec.at("correct").get<bool>();
        r.lang_prob = rec.at("lang_prob").get<double>();
        result.records.push_back(std::move(r));
    }
    return result;
}

} // namespace steerlab::eval
