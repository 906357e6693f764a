#include "hiercomm/cost.hpp"

#include <cctype>
#include <cmath>

#include <nlohmann/json.hpp>

namespace hiercomm {

using nlohmann::json;

namespace {
constexpr std::int64_t kNanosPerDollar = 1'000'000'000;
}

Money Money::from_string(const std::string& text) {
    std::size_t i = 0;
    bool negative = false;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
        negative = text[i] == '-';
        ++i;
    }
    std::int64_t whole = 0;
    bool any_digit = false;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        whole = whole * 10 + (text[i] - '0');
        any_digit = true;
        ++i;
    }
    std::int64_t frac = 0;
    int frac_digits = 0;
    if (i < text.size() && text[i] == '.') {
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            if (frac_digits >= 9) {
                throw ParseError("money literal has more than 9 fractional digits", text);
            }
            frac = frac * 10 + (text[i] - '0');
            ++frac_digits;
            any_digit = true;
            ++i;
        }
    }
    if (!any_digit || i != text.size()) {
        throw ParseError("bad money literal", text);
    }
    for (int d = frac_digits; d < 9; ++d) frac *= 10;
    std::int64_t nanos = whole * kNanosPerDollar + frac;
    return Money{negative ? -nanos : nanos};
}

Money Money::from_double(double dollars) {
    return Money{static_cast<std::int64_t>(std::llround(dollars * 1e9))};
}

std::string Money::to_string() const {
    std::int64_t n = nanos;
    std::string sign;
    if (n < 0) {
        sign = "-";
        n = -n;
    }
    std::int64_t whole = n / kNanosPerDollar;
    std::int64_t frac = n % kNanosPerDollar;
    std::string out = sign + std::to_string(whole);
    if (frac != 0) {
        std::string digits = std::to_string(frac);
        digits.insert(0, 9 - digits.size(), '0');
        while (!digits.empty() && digits.back() == '0') digits.pop_back();
        out += "." + digits;
    }
    return out;
}

PriceTable price_table_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("price table must be a JSON object");
    auto parse_price = [](const json& v, const std::string& model) {
        if (v.is_string()) return Money::from_string(v.get<std::string>());
        if (v.is_number()) return Money::from_double(v.get<double>());
        throw ConfigError("bad price value for model '" + model + "'");
    };
    PriceTable table;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const json& entry = it.value();
        if (!entry.is_object()) throw ConfigError("price entry for '" + it.key() + "' must be an object");
        ModelPrice price;
        for (auto field = entry.begin(); field != entry.end(); ++field) {
            if (field.key() == "per_call") {
                price.per_call = parse_price(field.value(), it.key());
            } else if (field.key() == "prompt_per_1k") {
                price.prompt_per_1k = parse_price(field.value(), it.key());
            } else if (field.key() == "completion_per_1k") {
                price.completion_per_1k = parse_price(field.value(), it.key());
            } else {
                throw ConfigError("unknown price field '" + field.key() + "' for model '" +
                                  it.key() + "'");
            }
        }
        table.emplace(it.key(), price);
    }
    return table;
}

CostLedger& CostLedger::operator=(const CostLedger& other) {
    if (this != &other) {
        auto copy = other.snapshot();
        std::lock_guard lock(mutex_);
        by_model_ = std::move(copy);
    }
    return *this;
}

void CostLedger::record(const std::string& model, std::int64_t prompt_tokens,
                        std::int64_t completion_tokens) {
    std::lock_guard lock(mutex_);
    ModelUsage& u = by_model_[model];
    u.prompt_tokens += prompt_tokens;
    u.completion_tokens += completion_tokens;
    u.calls += 1;
}

void CostLedger::merge(const CostLedger& other) {
    auto theirs = other.snapshot();
    std::lock_guard lock(mutex_);
    for (const auto& [model, usage] : theirs) {
        ModelUsage& u = by_model_[model];
        u.prompt_tokens += usage.prompt_tokens;
        u.completion_tokens += usage.completion_tokens;
        u.calls += usage.calls;
    }
}

std::map<std::string, ModelUsage> CostLedger::snapshot() const {
    std::lock_guard lock(mutex_);
    return by_model_;
}

ModelUsage CostLedger::usage(const std::string& model) const {
    std::lock_guard lock(mutex_);
    auto it = by_model_.find(model);
    return it == by_model_.end() ? ModelUsage{} : it->second;
}

std::int64_t CostLedger::total_prompt_tokens() const {
    std::lock_guard lock(mutex_);
    std::int64_t n = 0;
    for (const auto& [_, u] : by_model_) n += u.prompt_tokens;
    return n;
}

std::int64_t CostLedger::total_completion_tokens() const {
    std::lock_guard lock(mutex_);
    std::int64_t n = 0;
    for (const auto& [_, u] : by_model_) n += u.completion_tokens;
    return n;
}

std::int64_t CostLedger::total_calls() const {
    std::lock_guard lock(mutex_);
    std::int64_t n = 0;
    for (const auto& [_, u] : by_model_) n += u.calls;
    return n;
}

json CostLedger::to_json() const {
    json models = json::object();
    for (const auto& [model, u] : snapshot()) {
        models[model] = {{"prompt_tokens", u.prompt_tokens},
                         {"completion_tokens", u.completion_tokens},
                         {"calls", u.calls}};
    }
    return json{{"models", models},
                {"total_prompt_tokens", total_prompt_tokens()},
                {"total_completion_tokens", total_completion_tokens()},
                {"total_calls", total_calls()}};
}

CostLedger CostLedger::from_json(const json& doc) {
    CostLedger ledger;
    for (auto it = doc.at("models").begin(); it != doc.at("models").end(); ++it) {
        ModelUsage u;
        u.prompt_tokens = it.value().at("prompt_tokens").get<std::int64_t>();
        u.completion_tokens = it.value().at("completion_tokens").get<std::int64_t>();
        u.calls = it.value().at("calls").get<std::int64_t>();
        ledger.by_model_[it.key()] = u;
    }
    return ledger;
}

Money estimate_cost(const CostLedger& ledger, const PriceTable& prices) {
    __int128 nanos = 0;
    auto per_1k = [](std::int64_t tokens, Money price) {
        // round half up on the division by 1000; prices are nonnegative
        __int128 num = static_cast<__int128>(tokens) * price.nanos;
        return (num + 500) / 1000;
    };
    for (const auto& [model, usage] : ledger.snapshot()) {
        auto it = prices.find(model);
        if (it == prices.end()) {
            throw UnpricedModelError("no price for model '" + model + "'");
        }
        const ModelPrice& p = it->second;
        nanos += static_cast<__int128>(usage.calls) * p.per_call.nanos;
        nanos += per_1k(usage.prompt_tokens, p.prompt_per_1k);
        nanos += per_1k(usage.completion_tokens, p.completion_per_1k);
    }
    return Money{static_cast<std::int64_t>(nanos)};
}

}  // namespace hiercomm
