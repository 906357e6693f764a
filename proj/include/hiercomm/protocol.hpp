#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/agent_graph.hpp"
#include "hiercomm/errors.hpp"
#include "hiercomm/memory.hpp"

namespace hiercomm {

inline constexpr const char* kFinishSentinel = "FINISH";

// One structured message between two connected agents. `background` carries
// problem context and is never present on member-to-supervisor events;
// `intermediate_output` carries prior outputs for traceability and may be
// empty.
struct CommEvent {
    AgentId from;
    AgentId to;
    std::int64_t t = 0;
    std::string message;
    std::optional<std::string> background;
    std::string intermediate_output;

    bool operator==(const CommEvent&) const = default;
};

// The five outputs a supervisor must produce each turn. `next` is either a
// member of the supervisor's own team or the FINISH sentinel.
struct SupervisorDecision {
    std::string thoughts;
    std::string next;
    std::string messages;
    std::string background;
    std::string intermediate_output;

    bool is_finish() const;

    bool operator==(const SupervisorDecision&) const = default;
};

struct MemberReply {
    std::string intermediate_output;
    std::optional<std::string> messages;
    // First JSON object embedded in intermediate_output, if any. Checked
    // against a FormatSpec when one is supplied.
    nlohmann::json payload;
};

enum class AnswerShape { AnswerIndex, AnswerText, HeadlineList };

// Shape the task expects inside a member's intermediate_output, e.g.
// {"answer": 2} for a multiple-choice task.
struct FormatSpec {
    AnswerShape shape = AnswerShape::AnswerText;
    std::optional<int> num_choices;  // bound for AnswerIndex
};

// Prompt renderers. Each agent sees only its own history; the caller is
// responsible for passing the right slice.
std::string render_supervisor_prompt(const AgentSpec& spec, const Team& team,
                                     const AgentGraph& graph,
                                     std::span<const MemoryRecord> history);
std::string render_member_prompt(const AgentSpec& spec,
                                 const std::optional<std::string>& background,
                                 const std::string& message,
                                 std::span<const MemoryRecord> history);

// Scans `raw` for the first balanced JSON object carrying all five decision
// keys (surrounding prose is ignored, extra keys tolerated). Throws
// ParseError with the raw text attached when no such object exists.
SupervisorDecision parse_supervisor_output(const std::string& raw);

// Same, then checks `next` against `allowed_next` (the deciding supervisor's
// team members); FINISH always passes. A case-insensitive unique match is
// canonicalized; otherwise UnknownNextAgentError.
SupervisorDecision parse_supervisor_output(const std::string& raw,
                                           const std::set<AgentId>& allowed_next);

// Member replies are a JSON object with `intermediate_output` and optional
// `messages`; raw text with no such object passes through as the output
// itself. A FormatSpec, when given, is validated against the reply's
// embedded payload (FormatError on violation).
MemberReply parse_member_output(const std::string& raw,
                                const std::optional<FormatSpec>& expected_format = std::nullopt);

// Validates the edge and the member-to-supervisor no-background rule, then
// builds the event. Throws NotAnEdgeError / ProtocolViolation.
CommEvent make_event(const AgentGraph& graph, const AgentSpec& from, const AgentSpec& to,
                     std::int64_t t, std::string message, std::optional<std::string> background,
                     std::string intermediate_output);

std::string serialize_supervisor_decision(const SupervisorDecision& decision);

nlohmann::json event_to_json(const CommEvent& event);
CommEvent event_from_json(const nlohmann::json& doc);

// One event per line. Round-trips byte-exactly: from_jsonl(to_jsonl(x))
// reproduces x and to_jsonl(from_jsonl(s)) reproduces s.
std::string transcript_to_jsonl(std::span<const CommEvent> transcript);
std::vector<CommEvent> transcript_from_jsonl(const std::string& text);

// First balanced {...} block in `text` that parses as a JSON object, trying
// nested blocks when an enclosing one fails. nullopt when there is none.
std::optional<nlohmann::json> extract_first_json_object(const std::string& text);

}  // namespace hiercomm
