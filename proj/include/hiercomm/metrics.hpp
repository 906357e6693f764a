#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hiercomm/errors.hpp"

namespace hiercomm::metrics {

// Tokenization is explicit in every report because overlap metrics change
// with it. Words: ASCII-lowercased runs split at whitespace and ASCII
// punctuation. CharUnigrams: one token per Unicode scalar, whitespace
// skipped (for text without word boundaries, e.g. Japanese).
enum class TokenizerSpec { Words, CharUnigrams };

std::string to_string(TokenizerSpec spec);
TokenizerSpec tokenizer_from_string(const std::string& text);

std::vector<std::string> tokenize(TokenizerSpec spec, const std::string& text);

double accuracy(std::span<const int> predictions, std::span<const int> gold);

// Modal answer; ties go to the answer whose first occurrence is earliest.
template <typename T>
T majority_vote(const std::vector<T>& answers) {
    if (answers.empty()) throw EmptyInputError("majority_vote over empty answers");
    std::map<T, std::size_t> counts;
    for (const T& a : answers) ++counts[a];
    std::size_t best = 0;
    for (const auto& [_, c] : counts) best = std::max(best, c);
    for (const T& a : answers) {
        if (counts[a] == best) return a;
    }
    return answers.front();  // unreachable
}

double rouge1_f1(const std::string& candidate, const std::string& reference,
                 TokenizerSpec tokenizer);

struct BleuOptions {
    // Replace zero n-gram precisions with epsilon/total instead of zeroing
    // the whole score. Off by default; changes reported numbers, so it is
    // surfaced in configs rather than silently applied.
    bool smooth_epsilon = false;
    double epsilon = 0.1;
};

// Corpus-level BLEU-4: clipped n-gram precisions for n=1..4 pooled over all
// aligned pairs, geometric mean, multiplied by the brevity penalty.
double bleu4(std::span<const std::string> candidates, std::span<const std::string> references,
             TokenizerSpec tokenizer, const BleuOptions& options = {});

// Fraction of (text, limit) items whose scalar count exceeds the limit.
double ccv_rate(std::span<const std::pair<std::string, std::int64_t>> items);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

// n subjects x k raters, rectangular, no missing cells, n >= 2 and k >= 2.
class RatingsMatrix {
public:
    RatingsMatrix(std::vector<std::vector<double>> values, std::vector<std::string> subject_ids,
                  std::vector<std::string> rater_ids);

    // Header row names the raters; an optional leading "subject" column
    // carries subject ids, otherwise rows are numbered.
    static RatingsMatrix from_csv(const std::string& text);

    std::size_t subjects() const { return values_.size(); }
    std::size_t raters() const { return values_.front().size(); }
    double at(std::size_t subject, std::size_t rater) const { return values_[subject][rater]; }
    const std::vector<std::vector<double>>& values() const { return values_; }
    const std::vector<std::string>& subject_ids() const { return subject_ids_; }
    const std::vector<std::string>& rater_ids() const { return rater_ids_; }

private:
    std::vector<std::vector<double>> values_;
    std::vector<std::string> subject_ids_;
    std::vector<std::string> rater_ids_;
};

enum class IccForm { TwoOneAbsolute, TwoKAbsolute };

// Two-way random-effects, absolute-agreement intraclass correlation:
// single-rater (2,1) or k-rater-average (2,k) form, from the matrix's ANOVA
// mean squares. A matrix with no variation at all is DegenerateMatrixError.
double icc(const RatingsMatrix& matrix, IccForm form);

struct ScoreReport {
    std::map<std::string, double> values;
    std::int64_t n_correct = 0;
    std::int64_t n_total = 0;

    nlohmann::json to_json() const;
};

}  // namespace hiercomm::metrics
