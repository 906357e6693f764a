#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/agent_graph.hpp"
#include "hiercomm/backend.hpp"
#include "hiercomm/errors.hpp"
#include "hiercomm/memory.hpp"
#include "hiercomm/plugins.hpp"
#include "hiercomm/protocol.hpp"

namespace hiercomm {

enum class ThresholdMode { LlmJudged, Numeric };

enum class AblationFlag { NoEvalSupervisor, NoEvalTeam, NormComm, DropBackground, DropIntermediate };

std::string to_string(AblationFlag flag);
AblationFlag ablation_from_string(const std::string& text);

struct Criterion {
    std::string name;
    std::string description;
};

struct RefinementConfig {
    int t_max = 3;
    ThresholdMode threshold_mode = ThresholdMode::Numeric;
    double m_threshold = 0.8;
    std::set<AblationFlag> ablation;
    // Backend calls allowed per run; a hard stop for supervisors that never
    // finish.
    int step_budget = 50;
    // Extra attempts after an unparseable agent reply.
    int parse_retries = 2;
    // Newest records rendered into prompts; 0 = unlimited.
    int max_history_records = 0;
    // Worker threads for the independent evaluator calls of one iteration.
    int evaluator_threads = 1;
    std::string model = "gpt-4o";
    double temperature = 0.0;
    // Tool invocations honored within a single member turn.
    int max_tool_rounds = 4;
    std::vector<Criterion> criteria;
    std::string run_id = "run";

    void validate() const;  // throws ConfigError
};

// Reads the fields above from a JSON object (all optional, unknown fields
// rejected); enum fields take their to_string spellings.
RefinementConfig refinement_config_from_json(const nlohmann::json& doc);

std::string to_string(ThresholdMode mode);
ThresholdMode threshold_mode_from_string(const std::string& text);

struct EvaluationFeedback {
    AgentId evaluator;
    std::string criterion;
    std::string feedback;
    std::optional<double> score;
};

enum class Decision { Accept, Revise, Pending };
enum class FinishReason { ThresholdMet, MaxIterations, SupervisorFinish };

std::string to_string(FinishReason reason);

struct RunResult {
    std::string final_answer;
    std::vector<CommEvent> transcript;
    int iterations_used = 0;
    nlohmann::json ledger;
    FinishReason finish_reason = FinishReason::SupervisorFinish;

    // Summary form written to result.json; the transcript goes to its own
    // JSONL file.
    nlohmann::json to_json() const;
};

// Concrete role assignments after ablation flags rewire the default graph.
struct PipelinePlan {
    AgentGraph graph;
    std::set<AblationFlag> ablation;
    AgentId main_supervisor;
    AgentId generator;
    AgentId revisor;
    AgentId eval_supervisor;  // empty when the role is ablated away
    std::vector<AgentId> evaluators;
    bool has_eval_team = true;       // false under NoEvalTeam
    bool summarize_via_llm = true;   // false under NoEvalSupervisor
};

// Resolves roles from the graph shape (the evaluation team is the one whose
// supervisor sits inside the root team; generator and revisor are the first
// and last root-team members that lead no team) and rebuilds the graph for
// ablations that remove agents.
PipelinePlan apply_ablation(const RefinementConfig& config, const AgentGraph& graph);

struct AggregatedFeedback {
    std::string summary;
    std::optional<double> mean_score;
};

// One report covering every evaluator's feedback. With a backend, `via`
// produces the summary in a single completion call; with backend == nullptr
// the feedback is concatenated verbatim (the NoEvalSupervisor path). The
// mean is computed over a sorted copy of the scores so it is exactly
// invariant under permutation of the feedback list.
AggregatedFeedback aggregate_feedback(std::span<const EvaluationFeedback> feedbacks,
                                      const AgentSpec& via, Backend* backend,
                                      const RefinementConfig& config);

Decision decide_numeric(double mean_score, double m_threshold);

// Extracts {"verdict": ...} from a judge reply; "accept" (case-insensitive)
// accepts, anything else revises. ParseError when no verdict is present.
Decision decide_from_verdict(const std::string& raw);

// Supervisor-routed loop: the root supervisor reads its history, names the
// next member (possibly a nested team's supervisor, which recurses) or
// FINISHes. Produces the transcript, memories and ledger of one run.
RunResult run_pipeline(const std::string& problem, const AgentGraph& graph,
                       const RefinementConfig& config, Backend& backend, MemoryStore& store,
                       const PluginRegistry& plugins);

// The fixed evaluate -> summarize -> threshold -> revise iteration over an
// existing answer `a0`, up to t_max rounds or until the threshold is met.
RunResult run_refinement(const std::string& a0, const std::string& problem,
                         const AgentGraph& graph, const RefinementConfig& config,
                         Backend& backend, MemoryStore& store, const PluginRegistry& plugins);

// Generator produces the initial answer, then refinement runs on it.
RunResult run_generate_refine(const std::string& problem, const AgentGraph& graph,
                              const RefinementConfig& config, Backend& backend,
                              MemoryStore& store, const PluginRegistry& plugins);

}  // namespace hiercomm
