#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/errors.hpp"
#include "hiercomm/memory.hpp"

namespace hiercomm {

struct PluginContext {
    AgentId agent;
    std::int64_t timestep = 0;
    MemoryStore* memory = nullptr;
};

struct CharCountEntry {
    std::string sentence;
    std::int64_t limit = 0;
};

struct CharCountResult {
    std::int64_t count = 0;
    bool within_limit = false;

    bool operator==(const CharCountResult&) const = default;
};

// Character = Unicode scalar value (neither bytes nor grapheme clusters);
// that is how ad-platform length limits are conventionally counted.
std::vector<CharCountResult> character_counter(std::span<const CharCountEntry> entries);

struct RejectFlag {
    std::size_t sentence_index = 0;
    std::string sentence;
    std::string matched_word;

    bool operator==(const RejectFlag&) const = default;
};

// Flags every sentence containing a banned word as a case-folded substring.
// When several banned words match one sentence, the first in banned-list
// order is reported.
std::vector<RejectFlag> reject_words(std::span<const std::string> sentences,
                                     std::span<const std::string> banned);

// Logs `text` as a Thought record in the calling agent's own memory.
void output_tool(const PluginContext& ctx, const std::string& text);

// One word per line; blank lines and surrounding whitespace dropped.
std::vector<std::string> load_banned_words(const std::filesystem::path& path);

using PluginFn =
    std::function<nlohmann::json(const nlohmann::json& input, const PluginContext& ctx)>;

// Name -> callable, JSON in / JSON out. Members invoke plugins by replying
// with {"tool": <id>, "input": <payload>}; the engine routes the call and
// feeds the result back as a ToolResult record.
class PluginRegistry {
public:
    void register_plugin(const std::string& id, PluginFn fn);
    bool has(const std::string& id) const;
    // Registration order.
    const std::vector<std::string>& ids() const { return order_; }
    std::set<std::string> id_set() const;

    nlohmann::json call(const std::string& id, const nlohmann::json& input,
                        const PluginContext& ctx) const;

    // character_counter, reject_words (bound to `banned_words`), output_tool,
    // plus unconfigured stubs for the externally backed tools (google_search,
    // bad_performance_retriever, truth_table_generator,
    // counterexample_verifier) which throw NotConfiguredError when called.
    static PluginRegistry with_builtins(std::vector<std::string> banned_words = {});

private:
    std::map<std::string, PluginFn> plugins_;
    std::vector<std::string> order_;
};

}  // namespace hiercomm
