#include "hiercomm/protocol.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

bool SupervisorDecision::is_finish() const {
    return iequals(trim(next), kFinishSentinel);
}

namespace {

void append_history(std::ostringstream& out, std::span<const MemoryRecord> history) {
    out << "Conversation history:\n";
    if (history.empty()) {
        out << "(none yet)\n";
        return;
    }
    for (const MemoryRecord& rec : history) {
        out << "- [" << to_string(rec.kind) << ", t=" << rec.timestep << "] " << rec.content
            << "\n";
    }
}

std::string join_ids(const std::vector<AgentId>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ", ";
        out += ids[i];
    }
    return out;
}

}  // namespace

std::string render_supervisor_prompt(const AgentSpec& spec, const Team& team,
                                     const AgentGraph& graph,
                                     std::span<const MemoryRecord> history) {
    if (spec.type != AgentType::Supervisor) {
        throw ProtocolViolation("supervisor prompt requested for member '" + spec.id + "'");
    }
    if (team.supervisor != spec.id) {
        throw ProtocolViolation("agent '" + spec.id + "' does not supervise team '" + team.id +
                                "'");
    }
    std::ostringstream out;
    out << "You are " << (spec.role.empty() ? "the supervisor of your team" : spec.role) << "\n\n";
    out << "Team members:\n";
    for (const AgentId& m : team.members) {
        out << "- " << m << ": " << graph.agent(m).role << "\n";
    }
    out << "\n";
    append_history(out, history);
    const std::string names = join_ids(team.members);
    out << "\nGiven the conversation above, output the following, in this exact order:\n"
        << "1. 'thoughts': a detailed analysis of the most recent message, what should be done "
           "next and who you should contact next.\n"
        << "2. 'next': who should act next. Select one of: " << names
        << ". When you have determined that the final output is gained, report back with "
        << kFinishSentinel << " instead.\n"
        << "3. 'messages': if 'next' is one of " << names
        << ", detailed instructions for them. If " << kFinishSentinel
        << ", a summary of all results.\n"
        << "4. 'background': the detailed background of the problem you are solving, as given in "
           "the first message.\n"
        << "5. 'intermediate_output': the intermediate outputs to pass along.\n"
        << "\nRespond with a single JSON object with exactly these keys: \"thoughts\", \"next\", "
           "\"messages\", \"background\", \"intermediate_output\".\n";
    return out.str();
}

std::string render_member_prompt(const AgentSpec& spec,
                                 const std::optional<std::string>& background,
                                 const std::string& message,
                                 std::span<const MemoryRecord> history) {
    if (spec.type != AgentType::Member) {
        throw ProtocolViolation("member prompt requested for supervisor '" + spec.id + "'");
    }
    std::ostringstream out;
    out << (spec.role.empty() ? "You are a team member." : spec.role) << "\n\n";
    if (background) {
        out << "Background: " << *background << "\n\n";
    }
    out << "Instruction: " << message << "\n\n";
    append_history(out, history);
    out << "\nRespond with a single JSON object with the key \"intermediate_output\" (your "
           "result) and, optionally, \"messages\" (remarks for your supervisor).\n";
    return out.str();
}

std::optional<json> extract_first_json_object(const std::string& text) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        if (text[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    json doc = json::parse(text.substr(start, i - start + 1), nullptr, false);
                    if (doc.is_object()) return doc;
                    break;  // malformed block: retry from the next '{'
                }
            }
        }
    }
    return std::nullopt;
}

namespace {

// Fields other than `next` tolerate non-string values by compacting them.
std::string coerce_text(const json& value) {
    return value.is_string() ? value.get<std::string>() : value.dump();
}

const std::array<const char*, 5> kDecisionKeys = {"thoughts", "next", "messages", "background",
                                                  "intermediate_output"};

}  // namespace

SupervisorDecision parse_supervisor_output(const std::string& raw) {
    for (std::size_t start = 0; start < raw.size(); ++start) {
        if (raw[start] != '{') continue;
        auto candidate = extract_first_json_object(raw.substr(start));
        if (!candidate) break;  // no parseable object anywhere after this point
        const json& doc = *candidate;
        const bool complete = std::all_of(kDecisionKeys.begin(), kDecisionKeys.end(),
                                          [&](const char* k) { return doc.contains(k); });
        if (!complete) continue;
        if (!doc.at("next").is_string()) {
            throw ParseError("'next' must be a string", raw);
        }
        SupervisorDecision d;
        d.thoughts = coerce_text(doc.at("thoughts"));
        d.next = doc.at("next").get<std::string>();
        d.messages = coerce_text(doc.at("messages"));
        d.background = coerce_text(doc.at("background"));
        d.intermediate_output = coerce_text(doc.at("intermediate_output"));
        return d;
    }
    throw ParseError("no JSON object with keys thoughts/next/messages/background/"
                     "intermediate_output found in supervisor output",
                     raw);
}

SupervisorDecision parse_supervisor_output(const std::string& raw,
                                           const std::set<AgentId>& allowed_next) {
    SupervisorDecision d = parse_supervisor_output(raw);
    if (d.is_finish()) return d;
    const std::string wanted = trim(d.next);
    if (allowed_next.count(wanted)) {
        d.next = wanted;
        return d;
    }
    std::optional<AgentId> ci_match;
    for (const AgentId& id : allowed_next) {
        if (iequals(id, wanted)) {
            if (ci_match) {
                ci_match.reset();
                break;  // ambiguous, treat as unknown
            }
            ci_match = id;
        }
    }
    if (ci_match) {
        d.next = *ci_match;
        return d;
    }
    throw UnknownNextAgentError("supervisor named '" + wanted +
                                "' as next, which is not one of its team members");
}

MemberReply parse_member_output(const std::string& raw,
                                const std::optional<FormatSpec>& expected_format) {
    if (trim(raw).empty()) throw ParseError("empty member output", raw);
    MemberReply reply;
    auto doc = extract_first_json_object(raw);
    if (doc && doc->contains("intermediate_output")) {
        reply.intermediate_output = coerce_text(doc->at("intermediate_output"));
        if (doc->contains("messages")) reply.messages = coerce_text(doc->at("messages"));
    } else {
        reply.intermediate_output = raw;
    }
    if (auto payload = extract_first_json_object(reply.intermediate_output)) {
        reply.payload = std::move(*payload);
    }
    if (expected_format) {
        const FormatSpec& fmt = *expected_format;
        switch (fmt.shape) {
            case AnswerShape::AnswerIndex: {
                if (!reply.payload.is_object() || !reply.payload.contains("answer") ||
                    !reply.payload.at("answer").is_number_integer()) {
                    throw FormatError("expected {\"answer\": <index>} in member output");
                }
                const auto idx = reply.payload.at("answer").get<std::int64_t>();
                if (idx < 0 || (fmt.num_choices && idx >= *fmt.num_choices)) {
                    throw FormatError("answer index " + std::to_string(idx) + " out of range");
                }
                break;
            }
            case AnswerShape::AnswerText:
                if (!reply.payload.is_object() || !reply.payload.contains("answer") ||
                    !reply.payload.at("answer").is_string()) {
                    throw FormatError("expected {\"answer\": <text>} in member output");
                }
                break;
            case AnswerShape::HeadlineList: {
                if (!reply.payload.is_object() || !reply.payload.contains("Headline") ||
                    !reply.payload.at("Headline").is_array()) {
                    throw FormatError("expected {\"Headline\": [..]} in member output");
                }
                for (const json& h : reply.payload.at("Headline")) {
                    if (!h.is_string()) throw FormatError("headline entries must be strings");
                }
                break;
            }
        }
    }
    return reply;
}

CommEvent make_event(const AgentGraph& graph, const AgentSpec& from, const AgentSpec& to,
                     std::int64_t t, std::string message, std::optional<std::string> background,
                     std::string intermediate_output) {
    if (!graph.has_edge(from.id, to.id)) {
        throw NotAnEdgeError("no edge from '" + from.id + "' to '" + to.id + "'");
    }
    if (message.empty()) {
        throw ProtocolViolation("event from '" + from.id + "' to '" + to.id +
                                "' has an empty message");
    }
    if (from.type == AgentType::Member && to.type == AgentType::Supervisor &&
        background.has_value()) {
        throw ProtocolViolation("member '" + from.id +
                                "' attempted to send background to its supervisor");
    }
    CommEvent e;
    e.from = from.id;
    e.to = to.id;
    e.t = t;
    e.message = std::move(message);
    e.background = std::move(background);
    e.intermediate_output = std::move(intermediate_output);
    return e;
}

std::string serialize_supervisor_decision(const SupervisorDecision& decision) {
    json doc{{"thoughts", decision.thoughts},
             {"next", decision.next},
             {"messages", decision.messages},
             {"background", decision.background},
             {"intermediate_output", decision.intermediate_output}};
    return doc.dump();
}

json event_to_json(const CommEvent& event) {
    json doc{{"t", event.t},
             {"from", event.from},
             {"to", event.to},
             {"message", event.message},
             {"intermediate_output", event.intermediate_output}};
    if (event.background) doc["background"] = *event.background;
    return doc;
}

CommEvent event_from_json(const json& doc) {
    if (!doc.is_object()) throw ParseError("transcript event must be an object", doc.dump());
    CommEvent e;
    e.t = doc.at("t").get<std::int64_t>();
    e.from = doc.at("from").get<std::string>();
    e.to = doc.at("to").get<std::string>();
    e.message = doc.at("message").get<std::string>();
    e.intermediate_output = doc.at("intermediate_output").get<std::string>();
    if (doc.contains("background")) e.background = doc.at("background").get<std::string>();
    return e;
}

std::string transcript_to_jsonl(std::span<const CommEvent> transcript) {
    std::string out;
    for (const CommEvent& e : transcript) {
        out += event_to_json(e).dump();
        out += '\n';
    }
    return out;
}

std::vector<CommEvent> transcript_from_jsonl(const std::string& text) {
    std::vector<CommEvent> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) throw ParseError("bad transcript line", line);
        out.push_back(event_from_json(doc));
    }
    return out;
}

}  // namespace hiercomm
