#include "steerlab/langid.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace steerlab::langid {

std::string normalize(const std::string& text) {
    std::string out;
    out.reserve(text.size() + 2);
    out.push_back(' ');
    bool prev_space = true;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!prev_space) {
                out.push_back(' ');
                prev_space = true;
            }
            continue;
        }
        out.push_back(static_cast<char>(std::isupper(c) ? std::tolower(c) : c));
        prev_space = false;
    }
    if (!prev_space) out.push_back(' ');
    return out;
}

double LanguageProfile::log_prob(int n, const std::string& gram) const {
    const auto& table = counts[static_cast<size_t>(n - 1)];
    const double total = static_cast<double>(totals[static_cast<size_t>(n - 1)]);
    const double vocab = static_cast<double>(table.size()) + 1.0; // one unseen bucket
    const auto it = table.find(gram);
    const double c = it == table.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((c + alpha) / (total + alpha * vocab));
}

LanguageProfile train_profile(const std::vector<std::string>& corpus, const std::string& tag,
                              double alpha) {
    if (corpus.empty()) throw ArgumentError("langid corpus is empty");
    std::size_t total_chars = 0;
    for (const auto& s : corpus) total_chars += s.size();
    if (total_chars < 1000) {
        throw ArgumentError("langid corpus too small: " + std::to_string(total_chars) +
                            " characters, need >= 1000");
    }
    LanguageProfile p;
    p.tag = tag;
    p.alpha = alpha;
    for (const auto& line : corpus) {
        const std::string t = normalize(line);
        for (int n = 1; n <= 3; ++n) {
            if (t.size() < static_cast<size_t>(n)) continue;
            for (std::size_t i = 0; i + n <= t.size(); ++i) {
                ++p.counts[static_cast<size_t>(n - 1)][t.substr(i, static_cast<size_t>(n))];
                ++p.totals[static_cast<size_t>(n - 1)];
            }
        }
    }
    return p;
}

namespace {

// Mean per-gram log-likelihood times a capped effective gram count: the Bayes
// posterior for short texts, kept off the 0/1 rails for long ones.
constexpr double kEffectiveGramCap = 240.0;

double scaled_loglik(const std::string& normalized, const LanguageProfile& p) {
    double sum = 0.0;
    std::size_t grams = 0;
    for (int n = 1; n <= 3; ++n) {
        if (normalized.size() < static_cast<size_t>(n)) continue;
        for (std::size_t i = 0; i + n <= normalized.size(); ++i) {
            sum += p.log_prob(n, normalized.substr(i, static_cast<size_t>(n)));
            ++grams;
        }
    }
    if (grams == 0) return 0.0;
    const double mean = sum / static_cast<double>(grams);
    return mean * std::min(static_cast<double>(grams), kEffectiveGramCap);
}

} // namespace

std::vector<double> score_all(const std::string& text,
                              const std::vector<LanguageProfile>& profiles) {
    if (profiles.empty()) throw ArgumentError("no language profiles given");
    const std::string t = normalize(text);
    // normalize() pads with one space on each side
    if (t.size() < 22) {
        throw LowConfidenceError("text too short to language-score (need >= 20 characters)");
    }
    std::vector<double> logliks;
    logliks.reserve(profiles.size());
    for (const auto& p : profiles) logliks.push_back(scaled_loglik(t, p));

    const double mx = *std::max_element(logliks.begin(), logliks.end());
    double sum = 0.0;
    std::vector<double> out(logliks.size());
    for (std::size_t i = 0; i < logliks.size(); ++i) {
        out[i] = std::exp(logliks[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

double language_score(const std::string& text, const std::vector<LanguageProfile>& profiles,
                      const std::string& target_tag) {
    int target = -1;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (profiles[i].tag == target_tag) target = static_cast<int>(i);
    }
    if (target < 0) throw ArgumentError("no profile with tag: " + target_tag);
    return score_all(text, profiles)[static_cast<size_t>(target)];
}

void save_profile(const LanguageProfile& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write profile: " + path);
    out << "LANGPROF 1\n" << p.tag << '\n' << p.alpha << '\n';
    for (int n = 1; n <= 3; ++n) {
        const auto& table = p.counts[static_cast<size_t>(n - 1)];
        out << n << ' ' << table.size() << '\n';
        for (const auto& [gram, count] : table) {
            for (unsigned char c : gram) {
                char hex[3];
                std::snprintf(hex, sizeof(hex), "%02x", c);
                out << hex;
            }
            out << ' ' << count << '\n';
        }
    }
    if (!out) throw IoError("failed writing profile: " + path);
}

LanguageProfile load_profile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open profile: " + path);
    std::string header;
    std::getline(in, header);
    if (header != "LANGPROF 1") throw FormatError("not a language profile: " + path);
    LanguageProfile p;
    std::getline(in, p.tag);
    in >> p.alpha;
    for (int n = 1; n <= 3; ++n) {
        int order = 0;
        std::size_t entries = 0;
        if (!(in >> order >> entries) || order != n) {
            throw FormatError("profile table header malformed: " + path);
        }
        for (std::size_t e = 0; e < entries; ++e) {
            std::string hex;
            std::uint64_t count = 0;
            if (!(in >> hex >> count) || hex.size() % 2 != 0) {
                throw FormatError("profile entry malformed: " + path);
            }
            std::string gram;
            for (std::size_t i = 0; i < hex.size(); i += 2) {
                gram.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
            }
            p.counts[static_cast<size_t>(n - 1)][gram] = count;
            p.totals[static_cast<size_t>(n - 1)] += count;
        }
    }
    return p;
}

std::vector<std::string> load_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

} // namespace steerlab::langid
