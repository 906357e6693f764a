#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hiercomm/cost.hpp"
#include "hiercomm/errors.hpp"

namespace hiercomm {

struct CompletionRequest {
    std::string model;
    std::string system_text;
    std::string user_text;
    double temperature = 0.0;  // deterministic by default
    std::optional<int> max_output_tokens;
    // Acting agent's id; scripted backends key their scripts on it and the
    // ledger tags nothing with it (it never reaches the wire).
    std::string agent_label;
};

struct CompletionResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

// Completion provider. complete() validates the request, delegates to the
// concrete transport and records usage into the ledger in the same call, so
// ledger totals always match the responses handed out.
class Backend {
public:
    virtual ~Backend() = default;

    CompletionResponse complete(const CompletionRequest& request);

    const CostLedger& ledger() const { return ledger_; }
    CostLedger& ledger() { return ledger_; }

protected:
    virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;

private:
    CostLedger ledger_;
};

// Deterministic canned responses keyed by (agent label, turn index). Each
// label has its own turn counter. Lookup order: the label's scripted entry
// for the current turn, then the label's default, then the global default.
// In strict mode a miss on all three throws ScriptMiss.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(bool strict = true) : strict_(strict) {}

    // Appends the next sequential response for a label.
    void add_response(const std::string& label, std::string text);
    // Pins the response for one specific turn (gaps fall through to defaults).
    void set_response(const std::string& label, std::size_t turn, std::string text);
    // Response for every turn of `label` with no scripted entry.
    void set_label_default(const std::string& label, std::string text);
    void set_default_response(std::string text);

    // Loads {"label": ["turn 0 text", "turn 1 text", ...], ...}, appending
    // each entry in order. May be called repeatedly to layer scripts.
    void load_script(const nlohmann::json& doc);

    std::size_t turns_taken(const std::string& label) const;

protected:
    CompletionResponse do_complete(const CompletionRequest& request) override;

private:
    bool strict_;
    mutable std::mutex mutex_;
    std::map<std::string, std::map<std::size_t, std::string>> script_;
    std::map<std::string, std::string> label_defaults_;
    std::optional<std::string> default_response_;
    std::map<std::string, std::size_t> turn_;
};

struct HttpBackendConfig {
    std::string base_url;  // e.g. "https://api.openai.com" or "http://127.0.0.1:8080"
    std::string path = "/v1/chat/completions";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string api_key;  // wins over the env var when nonempty
    int max_attempts = 3;
    int retry_base_delay_ms = 250;
    bool jitter = true;
    int timeout_seconds = 120;
};

// OpenAI-compatible chat-completions client. Retries connection failures,
// 429 and 5xx with exponential backoff; other 4xx fail immediately.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);
    ~HttpBackend() override;

protected:
    CompletionResponse do_complete(const CompletionRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace hiercomm
