#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "hiercomm/errors.hpp"

namespace hiercomm {

// Currency amount in integer nanodollars. Price-per-token sums come out
// exact this way; doubles would already drift on 0.17 * 895.
struct Money {
    std::int64_t nanos = 0;

    static Money from_nanos(std::int64_t n) { return Money{n}; }
    // Exact parse of a decimal literal with at most 9 fractional digits.
    static Money from_string(const std::string& text);
    static Money from_double(double dollars);

    double dollars() const { return static_cast<double>(nanos) / 1e9; }
    // Decimal string without float round-trip, e.g. "152.15".
    std::string to_string() const;

    Money operator+(Money other) const { return Money{nanos + other.nanos}; }
    Money& operator+=(Money other) {
        nanos += other.nanos;
        return *this;
    }
    auto operator<=>(const Money&) const = default;
};

struct ModelPrice {
    Money per_call;            // flat price per request
    Money prompt_per_1k;       // per 1000 prompt tokens
    Money completion_per_1k;   // per 1000 completion tokens
};

using PriceTable = std::map<std::string, ModelPrice>;

// Accepts {"model": {"per_call": "0.17", "prompt_per_1k": 0.0025, ...}, ...};
// string values parse exactly, numbers go through from_double.
PriceTable price_table_from_json(const nlohmann::json& doc);

struct ModelUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t calls = 0;

    bool operator==(const ModelUsage&) const = default;
};

// Per-model token and call totals for one run. Internally synchronized;
// backends record into it on every completion.
class CostLedger {
public:
    CostLedger() = default;
    CostLedger(const CostLedger& other) : by_model_(other.snapshot()) {}
    CostLedger& operator=(const CostLedger& other);

    void record(const std::string& model, std::int64_t prompt_tokens,
                std::int64_t completion_tokens);
    void merge(const CostLedger& other);

    std::map<std::string, ModelUsage> snapshot() const;
    ModelUsage usage(const std::string& model) const;
    std::int64_t total_prompt_tokens() const;
    std::int64_t total_completion_tokens() const;
    std::int64_t total_calls() const;

    nlohmann::json to_json() const;
    static CostLedger from_json(const nlohmann::json& doc);

private:
    mutable std::mutex mutex_;
    std::map<std::string, ModelUsage> by_model_;
};

// Exact product-sum over the ledger. Every model present in the ledger must
// be priced, otherwise UnpricedModelError.
Money estimate_cost(const CostLedger& ledger, const PriceTable& prices);

}  // namespace hiercomm
