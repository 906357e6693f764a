#include "hiercomm/backend.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "hiercomm/detail/httplib_tls.hpp"
#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

CompletionResponse Backend::complete(const CompletionRequest& request) {
    if (request.model.empty()) throw BackendError("completion request without a model");
    if (request.temperature < 0.0 || request.temperature > 2.0) {
        throw BackendError("temperature " + std::to_string(request.temperature) +
                           " outside [0, 2]");
    }
    if (request.max_output_tokens && *request.max_output_tokens <= 0) {
        throw BackendError("max_output_tokens must be positive");
    }
    CompletionResponse response = do_complete(request);
    if (response.prompt_tokens < 0 || response.completion_tokens < 0) {
        throw BackendError("backend reported negative token counts");
    }
    ledger_.record(request.model, response.prompt_tokens, response.completion_tokens);
    return response;
}

void ScriptedBackend::add_response(const std::string& label, std::string text) {
    std::lock_guard lock(mutex_);
    auto& turns = script_[label];
    const std::size_t next = turns.empty() ? 0 : turns.rbegin()->first + 1;
    turns.emplace(next, std::move(text));
}

void ScriptedBackend::set_response(const std::string& label, std::size_t turn, std::string text) {
    std::lock_guard lock(mutex_);
    script_[label][turn] = std::move(text);
}

void ScriptedBackend::set_label_default(const std::string& label, std::string text) {
    std::lock_guard lock(mutex_);
    label_defaults_[label] = std::move(text);
}

void ScriptedBackend::set_default_response(std::string text) {
    std::lock_guard lock(mutex_);
    default_response_ = std::move(text);
}

void ScriptedBackend::load_script(const json& doc) {
    if (!doc.is_object()) throw ConfigError("script must be a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_array()) {
            throw ConfigError("script entry for '" + it.key() + "' must be an array");
        }
        for (const json& response : it.value()) {
            if (!response.is_string()) {
                throw ConfigError("script responses for '" + it.key() + "' must be strings");
            }
            add_response(it.key(), response.get<std::string>());
        }
    }
}

std::size_t ScriptedBackend::turns_taken(const std::string& label) const {
    std::lock_guard lock(mutex_);
    auto it = turn_.find(label);
    return it == turn_.end() ? 0 : it->second;
}

CompletionResponse ScriptedBackend::do_complete(const CompletionRequest& request) {
    std::optional<std::string> text;
    {
        std::lock_guard lock(mutex_);
        const std::string& label = request.agent_label;
        const std::size_t turn = turn_[label]++;
        auto script_it = script_.find(label);
        if (script_it != script_.end()) {
            auto turn_it = script_it->second.find(turn);
            if (turn_it != script_it->second.end()) text = turn_it->second;
        }
        if (!text) {
            auto def_it = label_defaults_.find(label);
            if (def_it != label_defaults_.end()) {
                text = def_it->second;
            } else if (default_response_) {
                text = default_response_;
            } else if (strict_) {
                throw ScriptMiss("no scripted response for label '" + label + "' turn " +
                                 std::to_string(turn));
            } else {
                text = "(unscripted response)";
            }
        }
    }
    CompletionResponse response;
    response.text = std::move(*text);
    response.prompt_tokens =
        static_cast<std::int64_t>(whitespace_tokens(request.system_text).size() +
                                  whitespace_tokens(request.user_text).size());
    response.completion_tokens =
        static_cast<std::int64_t>(whitespace_tokens(response.text).size());
    return response;
}

struct HttpBackend::Impl {
    HttpBackendConfig config;
    std::string api_key;
    std::mt19937 rng{std::random_device{}()};
    std::mutex rng_mutex;

    int jitter_ms(int bound) {
        if (!config.jitter || bound <= 0) return 0;
        std::lock_guard lock(rng_mutex);
        return std::uniform_int_distribution<int>(0, bound)(rng);
    }
};

HttpBackend::HttpBackend(HttpBackendConfig config) : impl_(std::make_unique<Impl>()) {
    if (config.base_url.empty()) throw ConfigError("http backend needs a base_url");
    if (config.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    impl_->api_key = config.api_key;
    if (impl_->api_key.empty() && !config.api_key_env.empty()) {
        if (const char* key = std::getenv(config.api_key_env.c_str())) impl_->api_key = key;
    }
    impl_->config = std::move(config);
}

HttpBackend::~HttpBackend() = default;

CompletionResponse HttpBackend::do_complete(const CompletionRequest& request) {
    const HttpBackendConfig& cfg = impl_->config;

    json body{{"model", request.model},
              {"temperature", request.temperature},
              {"messages", json::array()}};
    if (!request.system_text.empty()) {
        body["messages"].push_back({{"role", "system"}, {"content", request.system_text}});
    }
    body["messages"].push_back({{"role", "user"}, {"content", request.user_text}});
    if (request.max_output_tokens) body["max_tokens"] = *request.max_output_tokens;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!impl_->api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + impl_->api_key);
    }

    std::string last_error;
    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        if (attempt > 1) {
            const int base = cfg.retry_base_delay_ms << (attempt - 2);
            std::this_thread::sleep_for(
                std::chrono::milliseconds(base + impl_->jitter_ms(base / 2)));
        }
        httplib::Client client(cfg.base_url);
        client.set_connection_timeout(cfg.timeout_seconds, 0);
        client.set_read_timeout(cfg.timeout_seconds, 0);
        client.set_write_timeout(cfg.timeout_seconds, 0);

        auto result = client.Post(cfg.path, headers, payload, "application/json");
        if (!result) {
            last_error = "transport error: " + httplib::to_string(result.error());
            continue;
        }
        const int status = result->status;
        if (status == 429 || status >= 500) {
            last_error = "status " + std::to_string(status);
            continue;
        }
        if (status != 200) {
            throw BackendError("completion request failed with status " + std::to_string(status) +
                               ": " + result->body.substr(0, 300));
        }
        json doc = json::parse(result->body, nullptr, false);
        if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
            throw BackendError("malformed completion response: " + result->body.substr(0, 300));
        }
        CompletionResponse response;
        response.text = doc["choices"][0].at("message").at("content").get<std::string>();
        if (doc.contains("usage")) {
            response.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
            response.completion_tokens = doc["usage"].value("completion_tokens", 0);
        }
        return response;
    }
    throw BackendError("completion request failed after " + std::to_string(cfg.max_attempts) +
                       " attempts; last error: " + last_error);
}

}  // namespace hiercomm
