#include "steerlab/tokenizer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace steerlab {

static std::string byte_token_name(unsigned b) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
    return buf;
}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    build_index();
}

void Tokenizer::build_index() {
    index_.clear();
    index_.reserve(vocab_.size());
    for (int i = 0; i < static_cast<int>(vocab_.size()); ++i) {
        const auto& tok = vocab_[static_cast<size_t>(i)];
        if (tok.empty()) {
            throw FormatError("vocabulary contains an empty token at id " + std::to_string(i));
        }
        if (!index_.emplace(tok, i).second) {
            throw FormatError("duplicate vocabulary token: " + tok);
        }
    }
    byte_base_ = id_of(byte_token_name(0));
    if (byte_base_ >= 0) {
        for (unsigned b = 1; b < 256; ++b) {
            if (id_of(byte_token_name(b)) != byte_base_ + static_cast<int>(b)) {
                throw FormatError("byte tokens must be contiguous in the vocabulary");
            }
        }
    }
    pad_id_ = id_of(kPad);
    eos_id_ = id_of(kEos);
    sys_id_ = id_of(kSys);
    usr_id_ = id_of(kUsr);
    asst_id_ = id_of(kAsst);
}

Tokenizer Tokenizer::build(const std::vector<std::string>& words) {
    std::vector<std::string> vocab = {kPad, kEos, kSys, kUsr, kAsst};
    for (unsigned b = 0; b < 256; ++b) vocab.push_back(byte_token_name(b));
    std::unordered_map<std::string, bool> seen;
    for (const auto& v : vocab) seen[v] = true;
    for (const auto& w : words) {
        if (w.empty() || seen.count(w)) continue;
        seen[w] = true;
        vocab.push_back(w);
    }
    return Tokenizer(std::move(vocab));
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        vocab.push_back(line);
    }
    return Tokenizer(std::move(vocab));
}

void Tokenizer::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (const auto& tok : vocab_) out << tok << '\n';
    if (!out) throw IoError("failed writing vocabulary file: " + path);
}

const std::string& Tokenizer::token_text(int id) const {
    if (id < 0 || id >= vocab_size()) {
        throw VocabError("token id out of range: " + std::to_string(id));
    }
    return vocab_[static_cast<size_t>(id)];
}

int Tokenizer::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string word;
    bool prev_was_fallback = false;
    while (ss >> word) {
        const int id = id_of(word);
        if (id >= 0) {
            out.push_back(id);
            prev_was_fallback = false;
            continue;
        }
        if (byte_base_ < 0) {
            throw VocabError("word not in vocabulary and no byte fallback: " + word);
        }
        if (prev_was_fallback) {
            out.push_back(byte_base_ + 0x20); // keep the separating space
        }
        for (unsigned char c : word) out.push_back(byte_base_ + c);
        prev_was_fallback = true;
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    std::string pending_bytes;
    auto flush = [&] {
        if (pending_bytes.empty()) return;
        if (!out.empty()) out += ' ';
        out += pending_bytes;
        pending_bytes.clear();
    };
    for (int id : ids) {
        if (is_byte_token(id)) {
            pending_bytes += static_cast<char>(id - byte_base_);
            continue;
        }
        flush();
        if (!out.empty()) out += ' ';
        out += token_text(id);
    }
    flush();
    return out;
}

} // namespace steerlab
