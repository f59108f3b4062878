#pragma once

#include <string>
#include <utility>
#include <vector>

#include "steerlab/errors.hpp"

namespace steerlab::contrastive {

// One parallel QA record: the same question/answer in the source language
// and in the target language.
struct ContrastivePair {
    std::string question_src;
    std::string answer_src;
    std::string question_tgt;
    std::string answer_tgt;
    std::string id;
};

// The three contrast conditions. ITA keeps the source-language question and
// the target-language answer, which emphasizes the language switch.
enum class DatasetVersion { Eng, ItaFull, Ita };

const char* version_name(DatasetVersion v);
DatasetVersion parse_version(const std::string& name);

// Default system instructions per condition; override for non-default
// language setups (the toy languages bring their own).
std::string default_instruction(DatasetVersion v);

struct PromptBundle {
    std::string system_instruction;
    std::vector<std::pair<std::string, std::string>> shots;
    std::string query_question;
    DatasetVersion version = DatasetVersion::Eng;
    std::string prompt_id;
};

// Projects pairs onto one version: Eng -> (q_src, a_src),
// ItaFull -> (q_tgt, a_tgt), Ita -> (q_src, a_tgt). Order preserved.
std::vector<std::pair<std::string, std::string>> build_version(
    const std::vector<ContrastivePair>& pairs, DatasetVersion version);

// Shots are a seeded uniform sample without replacement, never including the
// query itself. The instruction defaults to the per-version string.
PromptBundle assemble_prompt(const std::vector<std::pair<std::string, std::string>>& dataset,
                             int query_index, int n_shot, DatasetVersion version,
                             std::uint64_t seed, const std::string& instruction_override = "");

// Pair file: newline-delimited JSON records with fields question_src,
// answer_src, question_tgt, answer_tgt.
std::vector<ContrastivePair> load_pairs(const std::string& path);
void save_pairs(const std::vector<ContrastivePair>& pairs, const std::string& path);

// Canonical byte serialization, used for dataset fingerprints.
std::string canonical_serialization(const std::vector<ContrastivePair>& pairs);

} // namespace steerlab::contrastive
