#include "steerlab/contrastive.hpp"

#include <fstream>

#include <json.hpp>

#include "steerlab/rng.hpp"

namespace steerlab::contrastive {

const char* version_name(DatasetVersion v) {
    switch (v) {
        case DatasetVersion::Eng: return "ENG";
        case DatasetVersion::ItaFull: return "ITA-full";
        case DatasetVersion::Ita: return "ITA";
    }
    return "?";
}

DatasetVersion parse_version(const std::string& name) {
    if (name == "ENG" || name == "eng") return DatasetVersion::Eng;
    if (name == "ITA-full" || name == "ITA_FULL" || name == "ita-full") return DatasetVersion::ItaFull;
    if (name == "ITA" || name == "ita") return DatasetVersion::Ita;
    throw ArgumentError("unknown dataset version: " + name);
}

std::string default_instruction(DatasetVersion v) {
    return v == DatasetVersion::Eng ? "Answer the following questions"
                                    : "Rispondi alle seguenti domande";
}

std::vector<std::pair<std::string, std::string>> build_version(
    const std::vector<ContrastivePair>& pairs, DatasetVersion version) {
    if (pairs.empty()) throw ArgumentError("build_version requires a non-empty pair list");
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        switch (version) {
            case DatasetVersion::Eng: out.emplace_back(p.question_src, p.answer_src); break;
            case DatasetVersion::ItaFull: out.emplace_back(p.question_tgt, p.answer_tgt); break;
            case DatasetVersion::Ita: out.emplace_back(p.question_src, p.answer_tgt); break;
        }
    }
    return out;
}

PromptBundle assemble_prompt(const std::vector<std::pair<std::string, std::string>>& dataset,
                             int query_index, int n_shot, DatasetVersion version,
                             std::uint64_t seed, const std::string& instruction_override) {
    const int n = static_cast<int>(dataset.size());
    if (n_shot < 0) throw ArgumentError("n_shot must be >= 0");
    if (query_index < 0 || query_index >= n) throw ArgumentError("query_index out of range");
    if (n <= n_shot) {
        throw ArgumentError("dataset too small: need more than " + std::to_string(n_shot) +
                            " entries");
    }

    PromptBundle bundle;
    bundle.version = version;
    bundle.system_instruction =
        instruction_override.empty() ? default_instruction(version) : instruction_override;
    bundle.query_question = dataset[static_cast<size_t>(query_index)].first;
    bundle.prompt_id = std::string(version_name(version)) + ":" + std::to_string(query_index);

    // sample from the dataset with the query excluded
    std::vector<int> candidates;
    candidates.reserve(static_cast<size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        if (i != query_index) candidates.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(candidates);
    for (int s = 0; s < n_shot; ++s) {
        bundle.shots.push_back(dataset[static_cast<size_t>(candidates[static_cast<size_t>(s)])]);
    }
    return bundle;
}

std::vector<ContrastivePair> load_pairs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open pair file: " + path);
    std::vector<ContrastivePair> pairs;
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
            throw ParseError("pair file line " + std::to_string(lineno) + ": " + e.what());
        }
        ContrastivePair p;
        for (const char* field :
             {"question_src", "answer_src", "question_tgt", "answer_tgt"}) {
            if (!rec.contains(field) || !rec[field].is_string()) {
                throw ParseError("pair file line " + std::to_string(lineno) +
                                 ": missing field " + field);
            }
        }
        p.question_src = rec["question_src"].get<std::string>();
        p.answer_src = rec["answer_src"].get<std::string>();
        p.question_tgt = rec["question_tgt"].get<std::string>();
        p.answer_tgt = rec["answer_tgt"].get<std::string>();
        if (p.question_src.empty() || p.answer_src.empty() || p.question_tgt.empty() ||
            p.answer_tgt.empty()) {
            throw ParseError("pair file line " + std::to_string(lineno) + ": empty field");
        }
        p.id = rec.contains("id") && rec["id"].is_string()
                   ? rec["id"].get<std::string>()
                   : "pair-" + std::to_string(pairs.size());
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_pairs(const std::vector<ContrastivePair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write pair file: " + path);
    for (const auto& p : pairs) {
        nlohmann::ordered_json rec;
        rec["id"] = p.id;
        rec["question_src"] = p.question_src;
        rec["answer_src"] = p.answer_src;
        rec["question_tgt"] = p.question_tgt;
        rec["answer_tgt"] = p.answer_tgt;
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("failed writing pair file: " + path);
}

std::string canonical_serialization(const std::vector<ContrastivePair>& pairs) {
    std::string buf;
    for (const auto& p : pairs) {
        buf += p.id;
        buf += '\x1f';
        buf += p.question_src;
        buf += '\x1f';
        buf += p.answer_src;
        buf += '\x1f';
        buf += p.question_tgt;
        buf += '\x1f';
        buf += p.answer_tgt;
        buf += '\x1e';
    }
    return buf;
}

} // namespace steerlab::contrastive
