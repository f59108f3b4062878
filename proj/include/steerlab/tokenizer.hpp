#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "steerlab/errors.hpp"

namespace steerlab {

// Word-level tokenizer over a closed vocabulary, with 256 byte tokens as a
// fallback so encode() is total. Text is treated as whitespace-separated
// words; decode joins with single spaces. A word not in the vocabulary is
// emitted as a run of byte tokens; adjacent fallback words keep their
// separating space as a 0x20 byte inside the run.
class Tokenizer {
public:
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kSys = "<|sys|>";
    static constexpr const char* kUsr = "<|usr|>";
    static constexpr const char* kAsst = "<|asst|>";

    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> vocab);

    static Tokenizer load(const std::string& path);
    void save(const std::string& path) const;

    // Builds the standard layout: specials, 256 byte tokens, then the given
    // word list (deduplicated, order preserved).
    static Tokenizer build(const std::vector<std::string>& words);

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const std::string& token_text(int id) const;
    int id_of(const std::string& token) const; // -1 if absent

    int pad_id() const { return pad_id_; }
    int eos_id() const { return eos_id_; }
    int sys_id() const { return sys_id_; }
    int usr_id() const { return usr_id_; }
    int asst_id() const { return asst_id_; }

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
    int byte_base_ = -1; // id of <0x00>, byte tokens are contiguous
    int pad_id_ = -1, eos_id_ = -1, sys_id_ = -1, usr_id_ = -1, asst_id_ = -1;

    void build_index();
    bool is_byte_token(int id) const {
        return byte_base_ >= 0 && id >= byte_base_ && id < byte_base_ + 256;
    }
};

} // namespace steerlab
