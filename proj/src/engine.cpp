#include "hiercomm/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <future>

#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

std::string to_string(AblationFlag flag) {
    switch (flag) {
        case AblationFlag::NoEvalSupervisor: return "no_eval_supervisor";
        case AblationFlag::NoEvalTeam: return "no_eval_team";
        case AblationFlag::NormComm: return "norm_comm";
        case AblationFlag::DropBackground: return "drop_background";
        case AblationFlag::DropIntermediate: return "drop_intermediate";
    }
    throw Error("unreachable ablation flag");
}

AblationFlag ablation_from_string(const std::string& text) {
    if (text == "no_eval_supervisor") return AblationFlag::NoEvalSupervisor;
    if (text == "no_eval_team") return AblationFlag::NoEvalTeam;
    if (text == "norm_comm") return AblationFlag::NormComm;
    if (text == "drop_background") return AblationFlag::DropBackground;
    if (text == "drop_intermediate") return AblationFlag::DropIntermediate;
    throw ConfigError("unknown ablation flag: '" + text + "'");
}

std::string to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::ThresholdMet: return "threshold_met";
        case FinishReason::MaxIterations: return "max_iterations";
        case FinishReason::SupervisorFinish: return "supervisor_finish";
    }
    throw Error("unreachable finish reason");
}

std::string to_string(ThresholdMode mode) {
    return mode == ThresholdMode::Numeric ? "numeric" : "llm_judged";
}

ThresholdMode threshold_mode_from_string(const std::string& text) {
    if (text == "numeric") return ThresholdMode::Numeric;
    if (text == "llm_judged") return ThresholdMode::LlmJudged;
    throw ConfigError("unknown threshold mode: '" + text + "'");
}

RefinementConfig refinement_config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("engine config must be a JSON object");
    static const std::set<std::string> known = {
        "t_max",        "threshold_mode",     "m_threshold",       "ablation",
        "step_budget",  "parse_retries",      "max_history_records", "evaluator_threads",
        "model",        "temperature",        "max_tool_rounds",   "criteria",
        "run_id"};
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("unknown field '" + it.key() + "' in engine config");
        }
    }
    RefinementConfig config;
    config.t_max = doc.value("t_max", config.t_max);
    if (doc.contains("threshold_mode")) {
        config.threshold_mode =
            threshold_mode_from_string(doc.at("threshold_mode").get<std::string>());
    }
    config.m_threshold = doc.value("m_threshold", config.m_threshold);
    if (doc.contains("ablation")) {
        for (const json& f : doc.at("ablation")) {
            config.ablation.insert(ablation_from_string(f.get<std::string>()));
        }
    }
    config.step_budget = doc.value("step_budget", config.step_budget);
    config.parse_retries = doc.value("parse_retries", config.parse_retries);
    config.max_history_records = doc.value("max_history_records", config.max_history_records);
    config.evaluator_threads = doc.value("evaluator_threads", config.evaluator_threads);
    config.model = doc.value("model", config.model);
    config.temperature = doc.value("temperature", config.temperature);
    config.max_tool_rounds = doc.value("max_tool_rounds", config.max_tool_rounds);
    if (doc.contains("criteria")) {
        for (const json& c : doc.at("criteria")) {
            Criterion crit;
            crit.name = c.at("name").get<std::string>();
            crit.description = c.value("description", std::string{});
            config.criteria.push_back(std::move(crit));
        }
    }
    config.run_id = doc.value("run_id", config.run_id);
    config.validate();
    return config;
}

void RefinementConfig::validate() const {
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (m_threshold < 0.0 || m_threshold > 1.0) throw ConfigError("m_threshold must be in [0, 1]");
    if (step_budget < 1) throw ConfigError("step_budget must be >= 1");
    if (parse_retries < 0) throw ConfigError("parse_retries must be >= 0");
    if (max_history_records < 0) throw ConfigError("max_history_records must be >= 0");
    if (evaluator_threads < 1) throw ConfigError("evaluator_threads must be >= 1");
    if (max_tool_rounds < 0) throw ConfigError("max_tool_rounds must be >= 0");
    if (model.empty()) throw ConfigError("model must be set");
    if (ablation.count(AblationFlag::NoEvalSupervisor) &&
        ablation.count(AblationFlag::NoEvalTeam)) {
        throw ConfigError("no_eval_supervisor and no_eval_team are mutually exclusive");
    }
}

json RunResult::to_json() const {
    return json{{"final_answer", final_answer},
                {"finish_reason", to_string(finish_reason)},
                {"iterations_used", iterations_used},
                {"events", transcript.size()},
                {"ledger", ledger}};
}

Decision decide_numeric(double mean_score, double m_threshold) {
    return mean_score >= m_threshold ? Decision::Accept : Decision::Revise;
}

Decision decide_from_verdict(const std::string& raw) {
    auto doc = extract_first_json_object(raw);
    if (!doc || !doc->contains("verdict")) {
        throw ParseError("no verdict field in judge output", raw);
    }
    const json& v = doc->at("verdict");
    const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
    return iequals(trim(text), "accept") ? Decision::Accept : Decision::Revise;
}

namespace {

std::string format_score(double score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", score);
    return buf;
}

constexpr const char* kDefaultMemberMessage = "Completed assigned task.";
constexpr const char* kDefaultCriterionName = "overall_quality";
constexpr const char* kDefaultCriterionText =
    "Overall correctness and quality of the answer.";

}  // namespace

AggregatedFeedback aggregate_feedback(std::span<const EvaluationFeedback> feedbacks,
                                      const AgentSpec& via, Backend* backend,
                                      const RefinementConfig& config) {
    if (feedbacks.empty()) throw EmptyFeedbackError("no evaluation feedback to aggregate");

    AggregatedFeedback agg;
    std::vector<double> scores;
    for (const EvaluationFeedback& fb : feedbacks) {
        if (fb.score) scores.push_back(*fb.score);
    }
    if (scores.size() == feedbacks.size()) {
        // Sorted before summing so the mean is bit-identical under any
        // permutation of the feedback list.
        std::sort(scores.begin(), scores.end());
        double sum = 0;
        for (double s : scores) sum += s;
        agg.mean_score = sum / static_cast<double>(scores.size());
    }

    std::string lines;
    for (const EvaluationFeedback& fb : feedbacks) {
        lines += "- " + fb.evaluator + " (" + fb.criterion + "): " + fb.feedback;
        if (fb.score) lines += " [score: " + format_score(*fb.score) + "]";
        lines += "\n";
    }

    if (backend == nullptr) {
        agg.summary = lines;
        return agg;
    }
    CompletionRequest request;
    request.model = config.model;
    request.temperature = config.temperature;
    request.agent_label = via.id;
    request.user_text = via.role +
                        "\n\nSummarize the following evaluation feedback into one report that "
                        "covers every evaluator's points, so a revisor can act on it:\n" +
                        lines + "\nReply with the summary text only.";
    CompletionResponse response = backend->complete(request);
    agg.summary = trim(response.text).empty() ? lines : response.text;
    return agg;
}

PipelinePlan apply_ablation(const RefinementConfig& config, const AgentGraph& graph) {
    config.validate();
    const bool no_eval_team = config.ablation.count(AblationFlag::NoEvalTeam) != 0;
    const bool no_eval_sup = config.ablation.count(AblationFlag::NoEvalSupervisor) != 0;

    PipelinePlan plan;
    plan.ablation = config.ablation;
    const Team& root = graph.root_team();
    plan.main_supervisor = root.supervisor;

    // The evaluation team is the unique sub-team led by a root-team member.
    const Team* eval_team = nullptr;
    for (const AgentId& member : root.members) {
        if (const Team* led = graph.supervised_team(member)) {
            if (eval_team != nullptr) {
                throw ConfigError("more than one sub-team of the root team; cannot infer the "
                                  "evaluation team");
            }
            eval_team = led;
            plan.eval_supervisor = member;
        }
    }

    std::vector<AgentId> plain_members;
    for (const AgentId& member : root.members) {
        if (graph.supervised_team(member) == nullptr) plain_members.push_back(member);
    }
    if (plain_members.empty()) {
        throw ConfigError("root team has no non-supervising members to act as generator/revisor");
    }
    plan.generator = plain_members.front();
    plan.revisor = plain_members.back();

    if (no_eval_team) {
        plan.has_eval_team = false;
        plan.summarize_via_llm = false;
        plan.eval_supervisor.clear();
    } else {
        if (eval_team == nullptr) {
            throw ConfigError("graph has no evaluation team and no_eval_team is not set");
        }
        plan.evaluators = eval_team->members;
        if (no_eval_sup) {
            plan.summarize_via_llm = false;
            plan.eval_supervisor.clear();
        }
    }

    if (!no_eval_team && !no_eval_sup) {
        plan.graph = graph;
        return plan;
    }

    // Rebuild the graph without the ablated agents. Evaluators take the
    // evaluation supervisor's slot in the root member order so neighbor
    // ordering stays stable.
    json agents = json::array();
    json members = json::array();
    std::set<std::string> plugin_ids;
    auto push_agent = [&](const AgentId& id) {
        const AgentSpec& spec = graph.agent(id);
        agents.push_back({{"id", spec.id},
                          {"type", to_string(spec.type)},
                          {"role", spec.role},
                          {"plugins", spec.plugins}});
        for (const std::string& p : spec.plugins) plugin_ids.insert(p);
    };
    push_agent(plan.main_supervisor);
    for (const AgentId& member : root.members) {
        if (graph.supervised_team(member) != nullptr) {
            if (no_eval_sup) {
                for (const AgentId& ev : plan.evaluators) {
                    push_agent(ev);
                    members.push_back(ev);
                }
            }
            continue;  // the eval supervisor itself is dropped either way
        }
        push_agent(member);
        members.push_back(member);
    }
    json teams = json::array();
    teams.push_back({{"id", root.id}, {"supervisor", plan.main_supervisor}, {"members", members}});
    plan.graph = build_graph(json{{"agents", agents}, {"teams", teams}}, plugin_ids);
    return plan;
}

namespace {

// Shared mutable state for one run. Owns the transcript and the call
// counter; everything an agent turn needs funnels through here.
struct RunContext {
    const AgentGraph& graph;
    const RefinementConfig& config;
    Backend& backend;
    MemoryStore& store;
    const PluginRegistry& plugins;

    std::vector<CommEvent> transcript;
    std::int64_t next_t = 0;
    std::atomic<int> calls{0};

    RunContext(const AgentGraph& g, const RefinementConfig& c, Backend& b, MemoryStore& s,
               const PluginRegistry& p)
        : graph(g), config(c), backend(b), store(s), plugins(p) {
        for (const AgentId& id : graph.agent_order()) store.register_agent(id);
    }

    CompletionResponse call(const AgentId& agent, const std::string& user_text) {
        if (calls.fetch_add(1) + 1 > config.step_budget) {
            throw StepBudgetExceeded("step budget of " + std::to_string(config.step_budget) +
                                     " backend calls exhausted");
        }
        CompletionRequest request;
        request.model = config.model;
        request.temperature = config.temperature;
        request.user_text = user_text;
        request.agent_label = agent;
        return backend.complete(request);
    }

    void record(const AgentId& agent, RecordKind kind, std::string content) {
        MemoryRecord rec;
        rec.agent = agent;
        rec.kind = kind;
        rec.content = std::move(content);
        rec.run_id = config.run_id;
        rec.timestep = next_t;
        store.append(std::move(rec));
    }

    std::vector<MemoryRecord> prompt_history(const AgentId& agent) const {
        std::vector<MemoryRecord> records = store.history(agent);
        const auto cap = static_cast<std::size_t>(config.max_history_records);
        if (cap > 0 && records.size() > cap) {
            records.erase(records.begin(), records.end() - static_cast<std::ptrdiff_t>(cap));
        }
        return records;
    }

    static std::string describe_event(const CommEvent& e) {
        std::string s = e.from + " -> " + e.to + ": " + e.message;
        if (e.background) s += "\nBackground: " + *e.background;
        if (!e.intermediate_output.empty()) {
            s += "\nIntermediate output: " + e.intermediate_output;
        }
        return s;
    }

    // Ablation field folding, applied to every event including boundary
    // ones so transcript scans see a uniform wire format.
    void fold(std::string& message, std::optional<std::string>& background,
              std::string& intermediate_output) const {
        const auto& flags = config.ablation;
        if (flags.count(AblationFlag::NormComm)) {
            if (background && !background->empty()) {
                message += "\nBackground: " + *background;
            }
            if (!intermediate_output.empty()) {
                message += "\nIntermediate output: " + intermediate_output;
            }
            background.reset();
            intermediate_output.clear();
            return;
        }
        if (flags.count(AblationFlag::DropBackground)) background.reset();
        if (flags.count(AblationFlag::DropIntermediate)) intermediate_output.clear();
    }

    const CommEvent& push_event(CommEvent event) {
        transcript.push_back(std::move(event));
        ++next_t;
        return transcript.back();
    }

    // Validated agent-to-agent event plus both parties' memory records.
    const CommEvent& emit(const AgentSpec& from, const AgentSpec& to, std::string message,
                          std::optional<std::string> background, std::string intermediate_output) {
        if (background && background->empty()) background.reset();
        fold(message, background, intermediate_output);
        if (message.empty()) message = kDefaultMemberMessage;
        CommEvent event = make_event(graph, from, to, next_t, std::move(message),
                                     std::move(background), std::move(intermediate_output));
        const CommEvent& stored = push_event(std::move(event));
        const std::string description = describe_event(stored);
        record_at(from.id, RecordKind::Sent, description, stored.t);
        record_at(to.id, RecordKind::Received, description, stored.t);
        return stored;
    }

    const CommEvent& emit_boundary_in(const AgentSpec& to, std::string message,
                                      std::string intermediate_output) {
        std::optional<std::string> background;
        fold(message, background, intermediate_output);
        CommEvent event;
        event.from = kUserNode;
        event.to = to.id;
        event.t = next_t;
        event.message = std::move(message);
        event.background = std::move(background);
        event.intermediate_output = std::move(intermediate_output);
        const CommEvent& stored = push_event(std::move(event));
        record_at(to.id, RecordKind::Received, describe_event(stored), stored.t);
        return stored;
    }

    const CommEvent& emit_boundary_out(const AgentSpec& from, std::string message,
                                       std::string intermediate_output) {
        std::optional<std::string> background;
        fold(message, background, intermediate_output);
        if (message.empty()) message = "Final answer.";
        CommEvent event;
        event.from = from.id;
        event.to = kUserNode;
        event.t = next_t;
        event.message = std::move(message);
        event.background = std::move(background);
        event.intermediate_output = std::move(intermediate_output);
        const CommEvent& stored = push_event(std::move(event));
        record_at(from.id, RecordKind::Sent, describe_event(stored), stored.t);
        return stored;
    }

    void record_at(const AgentId& agent, RecordKind kind, std::string content, std::int64_t t) {
        MemoryRecord rec;
        rec.agent = agent;
        rec.kind = kind;
        rec.content = std::move(content);
        rec.run_id = config.run_id;
        rec.timestep = t;
        store.append(std::move(rec));
    }

    // What the recipient of an event is shown as its instruction: the
    // message plus any intermediate output riding along.
    static std::string member_view(const CommEvent& event) {
        std::string view = event.message;
        if (!event.intermediate_output.empty()) {
            view += "\n\nIntermediate output:\n" + event.intermediate_output;
        }
        return view;
    }

    SupervisorDecision supervisor_decide(const AgentSpec& sup, const Team& team) {
        std::set<AgentId> allowed(team.members.begin(), team.members.end());
        const std::string prompt = render_supervisor_prompt(sup, team, graph, prompt_history(sup.id));
        std::string member_names;
        for (const AgentId& m : team.members) {
            if (!member_names.empty()) member_names += ", ";
            member_names += m;
        }
        std::string corrective;
        int retries_left = config.parse_retries;
        while (true) {
            CompletionResponse response = call(sup.id, prompt + corrective);
            try {
                SupervisorDecision decision = parse_supervisor_output(response.text, allowed);
                if (!decision.thoughts.empty()) {
                    record(sup.id, RecordKind::Thought, decision.thoughts);
                }
                return decision;
            } catch (const ParseError& e) {
                if (retries_left-- <= 0) throw;
                record(sup.id, RecordKind::Thought, "unusable reply: " + response.text);
                corrective = retry_instruction(e.what(), member_names);
            } catch (const UnknownNextAgentError& e) {
                if (retries_left-- <= 0) throw;
                record(sup.id, RecordKind::Thought, "unusable reply: " + response.text);
                corrective = retry_instruction(e.what(), member_names);
            }
        }
    }

    static std::string retry_instruction(const std::string& reason,
                                         const std::string& member_names) {
        return "\n\nYour previous reply was not usable (" + reason +
               "). Respond with ONLY one JSON object with exactly the keys \"thoughts\", "
               "\"next\", \"messages\", \"background\", \"intermediate_output\". \"next\" must "
               "be one of: " +
               member_names + ", or FINISH.";
    }

    MemberReply member_reply(const AgentSpec& member, const std::optional<std::string>& background,
                             const std::string& message,
                             std::vector<MemoryRecord> history_snapshot) {
        int tool_rounds = 0;
        int retries_left = config.parse_retries;
        std::string corrective;
        while (true) {
            std::string prompt =
                render_member_prompt(member, background, message, history_snapshot) + corrective;
            CompletionResponse response = call(member.id, prompt);

            auto doc = extract_first_json_object(response.text);
            if (doc && doc->contains("tool") && doc->contains("input") &&
                tool_rounds < config.max_tool_rounds) {
                ++tool_rounds;
                handle_tool_call(member, *doc, history_snapshot);
                continue;
            }
            try {
                return parse_member_output(response.text);
            } catch (const ParseError&) {
                if (retries_left-- <= 0) throw;
                record(member.id, RecordKind::Thought, "unusable reply: " + response.text);
                corrective =
                    "\n\nYour previous reply was empty or unusable. Respond with a single JSON "
                    "object with the key \"intermediate_output\".";
            }
        }
    }

    void handle_tool_call(const AgentSpec& member, const json& doc,
                          std::vector<MemoryRecord>& history_snapshot) {
        const json& tool_field = doc.at("tool");
        const std::string tool_id =
            tool_field.is_string() ? tool_field.get<std::string>() : tool_field.dump();
        const json& input = doc.at("input");

        record(member.id, RecordKind::ToolCall, tool_id + " " + input.dump());
        std::string result_text;
        const bool permitted = std::find(member.plugins.begin(), member.plugins.end(), tool_id) !=
                               member.plugins.end();
        if (!permitted) {
            result_text = "error: tool '" + tool_id + "' is not attached to this agent";
        } else if (!plugins.has(tool_id)) {
            result_text = "error: tool '" + tool_id + "' is not registered";
        } else {
            try {
                PluginContext ctx{member.id, next_t, &store};
                json result = plugins.call(tool_id, input, ctx);
                result_text = result.is_string() ? result.get<std::string>() : result.dump();
            } catch (const Error& e) {
                result_text = std::string("error: ") + e.what();
            }
        }
        record(member.id, RecordKind::ToolResult, result_text);

        // Mirror the two records into the local prompt view so the next
        // render shows the tool exchange without re-reading the store.
        MemoryRecord call_rec;
        call_rec.agent = member.id;
        call_rec.kind = RecordKind::ToolCall;
        call_rec.content = tool_id + " " + input.dump();
        call_rec.timestep = next_t;
        history_snapshot.push_back(std::move(call_rec));
        MemoryRecord result_rec;
        result_rec.agent = member.id;
        result_rec.kind = RecordKind::ToolResult;
        result_rec.content = result_text;
        result_rec.timestep = next_t;
        history_snapshot.push_back(std::move(result_rec));
    }

    // LLM-judged accept/revise with the usual retry envelope.
    std::pair<Decision, std::string> judge(const AgentSpec& judge_agent,
                                           const std::string& problem,
                                           const std::string& answer,
                                           const std::string& evidence) {
        std::string prompt = judge_agent.role + "\n\nProblem:\n" + problem +
                             "\n\nCurrent answer:\n" + answer;
        if (!evidence.empty()) prompt += "\n\nEvaluation report:\n" + evidence;
        prompt +=
            "\n\nDecide whether the answer is good enough to return as final. Respond with a "
            "single JSON object: {\"verdict\": \"accept\" or \"revise\", \"feedback\": "
            "\"reasons and required fixes\"}.";
        int retries_left = config.parse_retries;
        std::string corrective;
        while (true) {
            CompletionResponse response = call(judge_agent.id, prompt + corrective);
            record(judge_agent.id, RecordKind::Thought, response.text);
            try {
                Decision decision = decide_from_verdict(response.text);
                std::string feedback;
                if (auto doc = extract_first_json_object(response.text)) {
                    if (doc->contains("feedback")) {
                        const json& f = doc->at("feedback");
                        feedback = f.is_string() ? f.get<std::string>() : f.dump();
                    }
                }
                if (feedback.empty()) feedback = response.text;
                return {decision, feedback};
            } catch (const ParseError&) {
                if (retries_left-- <= 0) throw;
                corrective =
                    "\n\nYour previous reply was not usable. Respond with ONLY one JSON object "
                    "with the keys \"verdict\" (\"accept\" or \"revise\") and \"feedback\".";
            }
        }
    }
};

// One full supervisor-routed conversation over `team`, ending at FINISH.
SupervisorDecision supervisor_loop(RunContext& ctx, const Team& team) {
    const AgentSpec& sup = ctx.graph.agent(team.supervisor);
    while (true) {
        SupervisorDecision decision = ctx.supervisor_decide(sup, team);
        if (decision.is_finish()) return decision;

        const AgentSpec& member = ctx.graph.agent(decision.next);
        std::optional<std::string> background;
        if (!decision.background.empty()) background = decision.background;
        auto snapshot = ctx.prompt_history(member.id);
        const CommEvent& delivery =
            ctx.emit(sup, member, decision.messages, std::move(background),
                     decision.intermediate_output);

        if (const Team* sub_team = ctx.graph.supervised_team(member.id)) {
            SupervisorDecision sub_final = supervisor_loop(ctx, *sub_team);
            ctx.emit(member, sup, sub_final.messages, std::nullopt,
                     sub_final.intermediate_output);
        } else {
            MemberReply reply = ctx.member_reply(member, delivery.background,
                                                 RunContext::member_view(delivery),
                                                 std::move(snapshot));
            ctx.emit(member, sup, reply.messages.value_or(kDefaultMemberMessage), std::nullopt,
                     reply.intermediate_output);
        }
    }
}

Criterion criterion_for(const RefinementConfig& config, std::size_t index) {
    if (config.criteria.empty()) {
        return Criterion{kDefaultCriterionName, kDefaultCriterionText};
    }
    return config.criteria[index % config.criteria.size()];
}

struct IterationOutcome {
    Decision decision = Decision::Pending;
    std::string feedback_summary;
};

// Steps 1 through 6 of one refinement iteration: evaluation fan-out,
// aggregation and the threshold decision. Leaves revision to the caller.
IterationOutcome evaluate_and_decide(RunContext& ctx, const PipelinePlan& plan,
                                     const std::string& problem, const std::string& answer) {
    const RefinementConfig& config = ctx.config;
    const AgentSpec& main_sup = ctx.graph.agent(plan.main_supervisor);
    IterationOutcome outcome;

    if (!plan.has_eval_team) {
        // Evaluation is ablated away: the main supervisor judges directly.
        auto [decision, feedback] = ctx.judge(main_sup, problem, answer, "");
        outcome.decision = decision;
        outcome.feedback_summary = feedback;
        return outcome;
    }

    const AgentSpec& distributor =
        plan.summarize_via_llm ? ctx.graph.agent(plan.eval_supervisor) : main_sup;

    if (plan.summarize_via_llm) {
        // Step 1: the main supervisor hands the answer to the evaluation
        // team's supervisor.
        ctx.emit(main_sup, distributor,
                 "Evaluate the current answer against your team's criteria and report back "
                 "with a consolidated summary.",
                 problem, answer);
    }

    // Step 2: one criterion per evaluator, in declaration order.
    struct PendingEval {
        const AgentSpec* spec;
        Criterion criterion;
        std::optional<std::string> background;
        std::string view;
        std::vector<MemoryRecord> snapshot;
    };
    std::vector<PendingEval> pending;
    for (std::size_t i = 0; i < plan.evaluators.size(); ++i) {
        const AgentSpec& evaluator = ctx.graph.agent(plan.evaluators[i]);
        const Criterion criterion = criterion_for(config, i);
        std::string message = "Evaluate the answer against the criterion '" + criterion.name +
                              "': " + criterion.description +
                              " Reply with a JSON object of the form {\"score\": <0..1>, "
                              "\"feedback\": \"...\"} inside your intermediate_output.";
        auto snapshot = ctx.prompt_history(evaluator.id);
        const CommEvent& delivery =
            ctx.emit(distributor, evaluator, std::move(message), problem, answer);
        pending.push_back({&evaluator, criterion, delivery.background,
                           RunContext::member_view(delivery), std::move(snapshot)});
    }

    // Step 3: independent evaluator turns, optionally concurrent. Replies
    // are joined and recorded in declaration order either way, so thread
    // count never shows in the transcript.
    std::vector<MemberReply> replies(pending.size());
    if (config.evaluator_threads > 1 && pending.size() > 1) {
        std::vector<std::future<MemberReply>> futures;
        futures.reserve(pending.size());
        for (PendingEval& p : pending) {
            futures.push_back(std::async(std::launch::async, [&ctx, &p] {
                return ctx.member_reply(*p.spec, p.background, p.view, p.snapshot);
            }));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) replies[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < pending.size(); ++i) {
            replies[i] = ctx.member_reply(*pending[i].spec, pending[i].background,
                                          pending[i].view, pending[i].snapshot);
        }
    }

    std::vector<EvaluationFeedback> feedbacks;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const MemberReply& reply = replies[i];
        ctx.emit(*pending[i].spec, distributor,
                 reply.messages.value_or(kDefaultMemberMessage), std::nullopt,
                 reply.intermediate_output);

        EvaluationFeedback fb;
        fb.evaluator = pending[i].spec->id;
        fb.criterion = pending[i].criterion.name;
        fb.feedback = reply.intermediate_output;
        if (reply.payload.is_object() && reply.payload.contains("score") &&
            reply.payload.at("score").is_number()) {
            const double score = reply.payload.at("score").get<double>();
            if (score < 0.0 || score > 1.0) {
                throw FormatError("evaluator '" + fb.evaluator + "' reported score " +
                                  format_score(score) + " outside [0, 1]");
            }
            fb.score = score;
            if (reply.payload.contains("feedback") && reply.payload.at("feedback").is_string()) {
                fb.feedback = reply.payload.at("feedback").get<std::string>();
            }
        } else if (config.threshold_mode == ThresholdMode::Numeric) {
            throw FormatError("evaluator '" + fb.evaluator +
                              "' reported no numeric score in numeric threshold mode");
        }
        feedbacks.push_back(std::move(fb));
    }

    // Step 4: aggregation, through the evaluation supervisor's summarize
    // call or by plain concatenation when that role is ablated.
    AggregatedFeedback agg;
    if (plan.summarize_via_llm) {
        if (ctx.calls.fetch_add(1) + 1 > config.step_budget) {
            throw StepBudgetExceeded("step budget of " + std::to_string(config.step_budget) +
                                     " backend calls exhausted");
        }
        agg = aggregate_feedback(feedbacks, distributor, &ctx.backend, config);
        ctx.emit(distributor, main_sup, agg.summary, std::nullopt, answer);
    } else {
        agg = aggregate_feedback(feedbacks, main_sup, nullptr, config);
        ctx.record(main_sup.id, RecordKind::Thought,
                   "concatenated evaluation feedback:\n" + agg.summary);
    }
    outcome.feedback_summary = agg.summary;

    // Steps 5 and 6: threshold check.
    if (config.threshold_mode == ThresholdMode::Numeric) {
        if (!agg.mean_score) {
            throw FormatError("numeric threshold mode but not every evaluator scored");
        }
        outcome.decision = decide_numeric(*agg.mean_score, config.m_threshold);
    } else {
        auto [decision, feedback] = ctx.judge(main_sup, problem, answer, agg.summary);
        outcome.decision = decision;
        if (!feedback.empty()) outcome.feedback_summary = feedback;
    }
    return outcome;
}

RunResult finish_run(RunContext& ctx, std::string final_answer, int iterations,
                     FinishReason reason) {
    RunResult result;
    result.final_answer = std::move(final_answer);
    result.transcript = std::move(ctx.transcript);
    result.iterations_used = iterations;
    result.ledger = ctx.backend.ledger().to_json();
    result.finish_reason = reason;
    return result;
}

// Shared loop body of run_refinement and run_generate_refine; assumes the
// boundary-in event has been emitted.
RunResult refine_loop(RunContext& ctx, const PipelinePlan& plan, const std::string& problem,
                      std::string answer) {
    const RefinementConfig& config = ctx.config;
    const AgentSpec& main_sup = ctx.graph.agent(plan.main_supervisor);
    const AgentSpec& revisor = ctx.graph.agent(plan.revisor);

    int iterations = 0;
    FinishReason reason = FinishReason::MaxIterations;
    for (int t = 1; t <= config.t_max; ++t) {
        iterations = t;
        IterationOutcome outcome = evaluate_and_decide(ctx, plan, problem, answer);
        if (outcome.decision == Decision::Accept) {
            reason = FinishReason::ThresholdMet;
            break;  // the standing answer is returned untouched
        }

        // Step 7: revision.
        auto snapshot = ctx.prompt_history(revisor.id);
        const CommEvent& delivery = ctx.emit(
            main_sup, revisor,
            "Revise the answer so it addresses every issue in this evaluation report:\n" +
                outcome.feedback_summary,
            problem, answer);
        MemberReply reply = ctx.member_reply(revisor, delivery.background,
                                             RunContext::member_view(delivery),
                                             std::move(snapshot));
        ctx.emit(revisor, main_sup, reply.messages.value_or(kDefaultMemberMessage), std::nullopt,
                 reply.intermediate_output);
        answer = reply.intermediate_output;
    }

    ctx.emit_boundary_out(main_sup, "Final answer.", answer);
    return finish_run(ctx, std::move(answer), iterations, reason);
}

}  // namespace

RunResult run_pipeline(const std::string& problem, const AgentGraph& graph,
                       const RefinementConfig& config, Backend& backend, MemoryStore& store,
                       const PluginRegistry& plugins) {
    config.validate();
    if (trim(problem).empty()) throw EmptyInputError("problem text is empty");

    RunContext ctx(graph, config, backend, store, plugins);
    const Team& root = graph.root_team();
    const AgentSpec& root_sup = graph.agent(root.supervisor);

    ctx.emit_boundary_in(root_sup, problem, "");
    SupervisorDecision final_decision = supervisor_loop(ctx, root);
    ctx.emit_boundary_out(root_sup, final_decision.messages,
                          final_decision.intermediate_output);
    return finish_run(ctx, final_decision.intermediate_output, 0,
                      FinishReason::SupervisorFinish);
}

RunResult run_refinement(const std::string& a0, const std::string& problem,
                         const AgentGraph& graph, const RefinementConfig& config,
                         Backend& backend, MemoryStore& store, const PluginRegistry& plugins) {
    config.validate();
    PipelinePlan plan = apply_ablation(config, graph);
    RunContext ctx(plan.graph, config, backend, store, plugins);
    const AgentSpec& main_sup = plan.graph.agent(plan.main_supervisor);

    ctx.emit_boundary_in(main_sup,
                         trim(problem).empty() ? "Refine the provided answer." : problem, a0);
    return refine_loop(ctx, plan, problem, a0);
}

RunResult run_generate_refine(const std::string& problem, const AgentGraph& graph,
                              const RefinementConfig& config, Backend& backend,
                              MemoryStore& store, const PluginRegistry& plugins) {
    config.validate();
    if (trim(problem).empty()) throw EmptyInputError("problem text is empty");
    PipelinePlan plan = apply_ablation(config, graph);
    RunContext ctx(plan.graph, config, backend, store, plugins);
    const AgentSpec& main_sup = plan.graph.agent(plan.main_supervisor);
    const AgentSpec& generator = plan.graph.agent(plan.generator);

    ctx.emit_boundary_in(main_sup, problem, "");

    auto snapshot = ctx.prompt_history(generator.id);
    const CommEvent& delivery = ctx.emit(main_sup, generator, problem, std::nullopt, "");
    MemberReply reply = ctx.member_reply(generator, delivery.background,
                                         RunContext::member_view(delivery), std::move(snapshot));
    ctx.emit(generator, main_sup, reply.messages.value_or(kDefaultMemberMessage), std::nullopt,
             reply.intermediate_output);

    return refine_loop(ctx, plan, problem, reply.intermediate_output);
}

}  // namespace hiercomm
