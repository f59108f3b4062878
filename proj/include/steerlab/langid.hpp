#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "steerlab/errors.hpp"

namespace steerlab::langid {

// Character n-gram (n = 1..3) naive Bayes profile with additive smoothing.
// Serves as the target-language probability scorer; scores across profiles
// form a posterior and sum to 1.
struct LanguageProfile {
    std::string tag;
    double alpha = 0.5;
    // counts[n-1]: n-gram byte string -> count
    std::array<std::map<std::string, std::uint64_t>, 3> counts;
    std::array<std::uint64_t, 3> totals = {0, 0, 0};

    // smoothed log-probability of one n-gram (unseen grams share one bucket)
    double log_prob(int n, const std::string& gram) const;
};

LanguageProfile train_profile(const std::vector<std::string>& corpus, const std::string& tag,
                              double alpha = 0.5);

// Posterior probability of `target_tag` given the text, over the supplied
// profiles. Texts shorter than 20 characters (after trimming) are refused.
double language_score(const std::string& text, const std::vector<LanguageProfile>& profiles,
                      const std::string& target_tag);

// All posteriors at once, in profile order.
std::vector<double> score_all(const std::string& text,
                              const std::vector<LanguageProfile>& profiles);

// Lowercased (ASCII), whitespace-collapsed, space-padded match text.
std::string normalize(const std::string& text);

void save_profile(const LanguageProfile& p, const std::string& path);
LanguageProfile load_profile(const std::string& path);

std::vector<std::string> load_lines(const std::string& path);

} // namespace steerlab::langid
