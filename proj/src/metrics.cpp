#include "hiercomm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hiercomm/text.hpp"

namespace hiercomm::metrics {

using nlohmann::json;

std::string to_string(TokenizerSpec spec) {
    return spec == TokenizerSpec::Words ? "words" : "char_unigrams";
}

TokenizerSpec tokenizer_from_string(const std::string& text) {
    if (text == "words") return TokenizerSpec::Words;
    if (text == "char_unigrams") return TokenizerSpec::CharUnigrams;
    throw ConfigError("unknown tokenizer: '" + text + "'");
}

namespace {

bool is_unicode_space(std::uint32_t s) {
    return s == ' ' || s == '\t' || s == '\n' || s == '\r' || s == '\f' || s == '\v' ||
           s == 0xA0 || (s >= 0x2000 && s <= 0x200A) || s == 0x2028 || s == 0x2029 ||
           s == 0x202F || s == 0x205F || s == 0x3000;
}

bool is_word_scalar(std::uint32_t s) {
    if (s < 0x80) {
        return (s >= '0' && s <= '9') || (s >= 'a' && s <= 'z') || (s >= 'A' && s <= 'Z');
    }
    return !is_unicode_space(s);  // non-ASCII letters count, ASCII punctuation splits
}

std::uint32_t lower_scalar(std::uint32_t s) {
    return (s >= 'A' && s <= 'Z') ? s - 'A' + 'a' : s;
}

}  // namespace

std::vector<std::string> tokenize(TokenizerSpec spec, const std::string& text) {
    const std::vector<std::uint32_t> scalars = decode_utf8(text);
    std::vector<std::string> tokens;
    if (spec == TokenizerSpec::CharUnigrams) {
        for (std::uint32_t s : scalars) {
            if (!is_unicode_space(s)) tokens.push_back(encode_utf8(lower_scalar(s)));
        }
        return tokens;
    }
    std::string current;
    for (std::uint32_t s : scalars) {
        if (is_word_scalar(s)) {
            current += encode_utf8(lower_scalar(s));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

double accuracy(std::span<const int> predictions, std::span<const int> gold) {
    if (predictions.size() != gold.size()) {
        throw LengthMismatchError("accuracy over lists of size " +
                                  std::to_string(predictions.size()) + " and " +
                                  std::to_string(gold.size()));
    }
    if (predictions.empty()) throw EmptyInputError("accuracy over empty lists");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == gold[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

namespace {

std::map<std::string, std::int64_t> count_tokens(const std::vector<std::string>& tokens) {
    std::map<std::string, std::int64_t> counts;
    for (const std::string& t : tokens) ++counts[t];
    return counts;
}

}  // namespace

double rouge1_f1(const std::string& candidate, const std::string& reference,
                 TokenizerSpec tokenizer) {
    const auto cand = tokenize(tokenizer, candidate);
    const auto ref = tokenize(tokenizer, reference);
    if (cand.empty() || ref.empty()) return 0.0;
    const auto ref_counts = count_tokens(ref);
    std::int64_t overlap = 0;
    for (const auto& [token, count] : count_tokens(cand)) {
        auto it = ref_counts.find(token);
        if (it != ref_counts.end()) overlap += std::min(count, it->second);
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(cand.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

namespace {

// N-grams packed as token strings joined with an unlikely separator; cheaper
// than vector keys and good enough for corpus sizes here.
std::map<std::string, std::int64_t> count_ngrams(const std::vector<std::string>& tokens,
                                                 std::size_t n) {
    std::map<std::string, std::int64_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            if (j) key.push_back('\x1f');
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

double bleu4(std::span<const std::string> candidates, std::span<const std::string> references,
             TokenizerSpec tokenizer, const BleuOptions& options) {
    if (candidates.size() != references.size()) {
        throw LengthMismatchError("bleu4 over corpora of size " +
                                  std::to_string(candidates.size()) + " and " +
                                  std::to_string(references.size()));
    }
    if (candidates.empty()) throw EmptyInputError("bleu4 over an empty corpus");

    std::vector<std::vector<std::string>> cand_tokens, ref_tokens;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_tokens.push_back(tokenize(tokenizer, candidates[i]));
        ref_tokens.push_back(tokenize(tokenizer, references[i]));
    }

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        std::int64_t matched = 0;
        std::int64_t total = 0;
        for (std::size_t s = 0; s < cand_tokens.size(); ++s) {
            const auto rc = count_ngrams(ref_tokens[s], n);
            for (const auto& [gram, count] : count_ngrams(cand_tokens[s], n)) {
                total += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matched += std::min(count, it->second);
            }
        }
        double precision;
        if (matched > 0) {
            precision = static_cast<double>(matched) / static_cast<double>(total);
        } else if (options.smooth_epsilon && total > 0) {
            precision = options.epsilon / static_cast<double>(total);
        } else {
            return 0.0;
        }
        log_sum += std::log(precision);
    }

    std::int64_t cand_len = 0;
    std::int64_t ref_len = 0;
    for (std::size_t s = 0; s < cand_tokens.size(); ++s) {
        cand_len += static_cast<std::int64_t>(cand_tokens[s].size());
        ref_len += static_cast<std::int64_t>(ref_tokens[s].size());
    }
    if (cand_len == 0) return 0.0;
    double bp = 1.0;
    if (cand_len <= ref_len) {
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    }
    return bp * std::exp(log_sum / 4.0);
}

double ccv_rate(std::span<const std::pair<std::string, std::int64_t>> items) {
    if (items.empty()) throw EmptyInputError("ccv_rate over empty items");
    std::size_t violations = 0;
    for (const auto& [text, limit] : items) {
        if (static_cast<std::int64_t>(scalar_count(text)) > limit) ++violations;
    }
    return static_cast<double>(violations) / static_cast<double>(items.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw LengthMismatchError("pearson over lists of size " + std::to_string(x.size()) +
                                  " and " + std::to_string(y.size()));
    }
    if (x.size() < 2) throw EmptyInputError("pearson needs at least 2 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw DegenerateVarianceError("pearson over a constant sequence");
    }
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> rank_with_ties(std::span<const double> values) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
        // Positions i..j (0-based) share the average 1-based rank.
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t p = i; p <= j; ++p) ranks[idx[p]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw LengthMismatchError("spearman over lists of size " + std::to_string(x.size()) +
                                  " and " + std::to_string(y.size()));
    }
    if (x.size() < 2) throw EmptyInputError("spearman needs at least 2 points");
    const auto rx = rank_with_ties(x);
    const auto ry = rank_with_ties(y);
    return pearson(rx, ry);
}

RatingsMatrix::RatingsMatrix(std::vector<std::vector<double>> values,
                             std::vector<std::string> subject_ids,
                             std::vector<std::string> rater_ids)
    : values_(std::move(values)),
      subject_ids_(std::move(subject_ids)),
      rater_ids_(std::move(rater_ids)) {
    if (values_.size() < 2) throw FormatError("ratings need at least 2 subjects");
    const std::size_t k = values_.front().size();
    if (k < 2) throw FormatError("ratings need at least 2 raters");
    for (const auto& row : values_) {
        if (row.size() != k) throw FormatError("ragged ratings matrix");
    }
    if (subject_ids_.size() != values_.size() || rater_ids_.size() != k) {
        throw FormatError("ratings id lists do not match the matrix shape");
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

}  // namespace

RatingsMatrix RatingsMatrix::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.size() < 3) throw FormatError("ratings CSV needs a header and at least 2 rows");

    std::vector<std::string> header = rows.front();
    const std::string first = fold_case(header.empty() ? "" : header.front());
    const bool has_subject_column =
        first.empty() || first == "subject" || first == "subject_id" || first == "id";

    std::vector<std::string> rater_ids(header.begin() + (has_subject_column ? 1 : 0),
                                       header.end());
    std::vector<std::vector<double>> values;
    std::vector<std::string> subject_ids;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (cells.size() != header.size()) {
            throw FormatError("ratings CSV row " + std::to_string(r) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(header.size()));
        }
        std::vector<double> row;
        for (std::size_t c = has_subject_column ? 1 : 0; c < cells.size(); ++c) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cells[c], &used));
                if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
            } catch (const std::exception&) {
                throw FormatError("bad rating value '" + cells[c] + "' in CSV row " +
                                  std::to_string(r));
            }
        }
        subject_ids.push_back(has_subject_column ? cells.front() : std::to_string(r - 1));
        values.push_back(std::move(row));
    }
    return RatingsMatrix(std::move(values), std::move(subject_ids), std::move(rater_ids));
}

double icc(const RatingsMatrix& matrix, IccForm form) {
    const std::size_t n = matrix.subjects();
    const std::size_t k = matrix.raters();
    double grand = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) grand += matrix.at(i, j);
    }
    grand /= static_cast<double>(n * k);

    std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            row_mean[i] += matrix.at(i, j);
            col_mean[j] += matrix.at(i, j);
        }
    }
    for (double& v : row_mean) v /= static_cast<double>(k);
    for (double& v : col_mean) v /= static_cast<double>(n);

    double ss_total = 0, ss_rows = 0, ss_cols = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            ss_total += (matrix.at(i, j) - grand) * (matrix.at(i, j) - grand);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        ss_rows += (row_mean[i] - grand) * (row_mean[i] - grand);
    }
    ss_rows *= static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) {
        ss_cols += (col_mean[j] - grand) * (col_mean[j] - grand);
    }
    ss_cols *= static_cast<double>(n);
    if (ss_total <= 0.0) throw DegenerateMatrixError("ratings matrix has no variation");

    const double ss_err = ss_total - ss_rows - ss_cols;
    const double msr = ss_rows / static_cast<double>(n - 1);
    const double msc = ss_cols / static_cast<double>(k - 1);
    const double mse = ss_err / static_cast<double>((n - 1) * (k - 1));

    const double nd = static_cast<double>(n);
    const double kd = static_cast<double>(k);
    double denom;
    double numer = msr - mse;
    if (form == IccForm::TwoOneAbsolute) {
        denom = msr + (kd - 1.0) * mse + (kd / nd) * (msc - mse);
    } else {
        denom = msr + (msc - mse) / nd;
    }
    if (denom == 0.0) throw DegenerateMatrixError("ratings matrix mean squares cancel");
    return numer / denom;
}

json ScoreReport::to_json() const {
    json vals = json::object();
    for (const auto& [name, value] : values) vals[name] = value;
    return json{{"values", vals}, {"n_correct", n_correct}, {"n_total", n_total}};
}

}  // namespace hiercomm::metrics
