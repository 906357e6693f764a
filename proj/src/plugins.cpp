#include "hiercomm/plugins.hpp"

#include <fstream>

#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

std::vector<CharCountResult> character_counter(std::span<const CharCountEntry> entries) {
    if (entries.empty()) throw EmptyInputError("character_counter needs at least one entry");
    std::vector<CharCountResult> out;
    out.reserve(entries.size());
    for (const CharCountEntry& e : entries) {
        if (e.limit <= 0) throw EmptyInputError("character limit must be positive");
        const auto count = static_cast<std::int64_t>(scalar_count(e.sentence));
        out.push_back({count, count <= e.limit});
    }
    return out;
}

std::vector<RejectFlag> reject_words(std::span<const std::string> sentences,
                                     std::span<const std::string> banned) {
    std::vector<RejectFlag> flags;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const std::string folded = fold_case(sentences[i]);
        for (const std::string& word : banned) {
            if (word.empty()) continue;
            if (folded.find(fold_case(word)) != std::string::npos) {
                flags.push_back({i, sentences[i], word});
                break;
            }
        }
    }
    return flags;
}

void output_tool(const PluginContext& ctx, const std::string& text) {
    if (ctx.memory == nullptr) throw StorageError("output_tool called without a memory store");
    MemoryRecord rec;
    rec.agent = ctx.agent;
    rec.kind = RecordKind::Thought;
    rec.content = text;
    rec.timestep = ctx.timestep;
    ctx.memory->append(std::move(rec));
}

std::vector<std::string> load_banned_words(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open banned-word list '" + path.string() + "'");
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        std::string word = trim(line);
        if (!word.empty()) words.push_back(std::move(word));
    }
    return words;
}

void PluginRegistry::register_plugin(const std::string& id, PluginFn fn) {
    if (plugins_.count(id)) throw ConfigError("plugin '" + id + "' registered twice");
    plugins_.emplace(id, std::move(fn));
    order_.push_back(id);
}

bool PluginRegistry::has(const std::string& id) const { return plugins_.count(id) != 0; }

std::set<std::string> PluginRegistry::id_set() const {
    return {order_.begin(), order_.end()};
}

json PluginRegistry::call(const std::string& id, const json& input,
                          const PluginContext& ctx) const {
    auto it = plugins_.find(id);
    if (it == plugins_.end()) throw ConfigError("unknown plugin: '" + id + "'");
    return it->second(input, ctx);
}

PluginRegistry PluginRegistry::with_builtins(std::vector<std::string> banned_words) {
    PluginRegistry reg;

    // input: [[sentence, limit], ...] -> [{"count", "within_limit"}, ...]
    reg.register_plugin("character_counter", [](const json& input, const PluginContext&) {
        if (!input.is_array()) throw EmptyInputError("character_counter input must be an array");
        std::vector<CharCountEntry> entries;
        for (const json& pair : input) {
            if (!pair.is_array() || pair.size() != 2) {
                throw EmptyInputError("character_counter entries must be [sentence, limit] pairs");
            }
            entries.push_back({pair[0].get<std::string>(), pair[1].get<std::int64_t>()});
        }
        json out = json::array();
        for (const CharCountResult& r : character_counter(entries)) {
            out.push_back({{"count", r.count}, {"within_limit", r.within_limit}});
        }
        return out;
    });

    // input: {"sentences": [...]} or a bare array -> [{"sentence_index",
    // "sentence", "matched_word"}, ...]
    reg.register_plugin(
        "reject_words",
        [banned = std::move(banned_words)](const json& input, const PluginContext&) {
            const json& list = input.is_object() ? input.at("sentences") : input;
            if (!list.is_array()) throw EmptyInputError("reject_words input must be an array");
            std::vector<std::string> sentences;
            for (const json& s : list) sentences.push_back(s.get<std::string>());
            json out = json::array();
            for (const RejectFlag& f : reject_words(sentences, banned)) {
                out.push_back({{"sentence_index", f.sentence_index},
                               {"sentence", f.sentence},
                               {"matched_word", f.matched_word}});
            }
            return out;
        });

    // input: string or {"text": ...} -> "" (thought goes to own memory only)
    reg.register_plugin("output_tool", [](const json& input, const PluginContext& ctx) {
        const std::string text = input.is_string() ? input.get<std::string>()
                                                   : input.value("text", input.dump());
        output_tool(ctx, text);
        return json("");
    });

    for (const char* stub : {"google_search", "bad_performance_retriever",
                             "truth_table_generator", "counterexample_verifier"}) {
        reg.register_plugin(stub, [id = std::string(stub)](const json&, const PluginContext&) -> json {
            throw NotConfiguredError("plugin '" + id + "' has no backing service configured");
        });
    }
    return reg;
}

}  // namespace hiercomm
