// Acceptance gate for the orchestration engine and harness. Each criterion
// prints exactly one PASS/FAIL line; the binary exits nonzero if any fail.
// Runs entirely against scripted backends (no network).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/agent_graph.hpp"
#include "hiercomm/backend.hpp"
#include "hiercomm/cost.hpp"
#include "hiercomm/engine.hpp"
#include "hiercomm/harness.hpp"
#include "hiercomm/memory.hpp"
#include "hiercomm/metrics.hpp"
#include "hiercomm/plugins.hpp"
#include "hiercomm/protocol.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hiercomm;
using nlohmann::json;
using testsupport::evaluator_json;
using testsupport::run_cli;
using testsupport::script_refinement;
using testsupport::supervisor_json;
using testsupport::TempDir;
using testsupport::write_file;

namespace {

int g_failed = 0;

struct Checker {
    std::vector<std::string> problems;

    void expect(bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    }
};

void run_criterion(int id, const std::string& title,
                   const std::function<void(Checker&)>& body) {
    Checker c;
    try {
        body(c);
    } catch (const std::exception& e) {
        c.problems.push_back(std::string("unexpected exception: ") + e.what());
    }
    std::printf("%s criterion %d: %s\n", c.problems.empty() ? "PASS" : "FAIL", id, title.c_str());
    for (const std::string& p : c.problems) std::printf("    - %s\n", p.c_str());
    if (!c.problems.empty()) ++g_failed;
}

const PluginRegistry& plugins() {
    static PluginRegistry registry = PluginRegistry::with_builtins();
    return registry;
}

AgentGraph graph_with_evaluators(int k) {
    return build_graph(default_two_team_config(static_cast<std::size_t>(k)), plugins().id_set());
}

bool is_member_label(const AgentId& id) {
    return id == "generator" || id == "revisor" || id.rfind("evaluator_", 0) == 0;
}

bool is_supervisor_label(const AgentId& id) {
    return id == "main_supervisor" || id == "eval_supervisor";
}

std::string random_text(std::mt19937& rng) {
    static const std::vector<std::string> pieces = {
        "alpha", "beta",    "gamma", "\"quoted\"", "line\nbreak", "caf\xc3\xa9",
        "tab\t", "{brace}", "42",    "trailing ",  "\\slash",     ""};
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::uniform_int_distribution<int> len(0, 4);
    std::string out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        if (i) out += " ";
        out += pieces[pick(rng)];
    }
    return out;
}

// ---- criterion 1 ----------------------------------------------------------

struct RefinementRun {
    RunResult result;
    std::string transcript_jsonl;
    std::string ledger_json;
    std::size_t revisor_turns = 0;
};

RefinementRun run_two_iteration_script(const AgentGraph& graph, int evaluator_threads) {
    ScriptedBackend backend(true);
    backend.set_response("evaluator_1", 0, evaluator_json(0.5, "too terse"));
    backend.set_response("evaluator_2", 0, evaluator_json(0.6, "missing citation"));
    backend.set_response("evaluator_1", 1, evaluator_json(0.9, "much better"));
    backend.set_response("evaluator_2", 1, evaluator_json(0.95, "complete now"));
    backend.set_label_default("eval_supervisor", "Consolidated evaluation report.");
    backend.set_response("revisor", 0, "revision 1");

    RefinementConfig config;
    config.t_max = 3;
    config.m_threshold = 0.8;
    config.evaluator_threads = evaluator_threads;
    config.criteria = {{"clarity", "is it clear"}, {"accuracy", "is it right"}};

    MemoryStore store;
    RefinementRun run;
    run.result = run_refinement("draft answer", "the problem", graph, config, backend, store,
                                plugins());
    run.transcript_jsonl = transcript_to_jsonl(run.result.transcript);
    run.ledger_json = backend.ledger().to_json().dump();
    run.revisor_turns = backend.turns_taken("revisor");
    return run;
}

void criterion_trace_replay(Checker& c) {
    const auto started = std::chrono::steady_clock::now();
    const AgentGraph graph = graph_with_evaluators(2);

    const RefinementRun first = run_two_iteration_script(graph, 1);
    const std::vector<std::pair<std::string, std::string>> expected = {
        {"user", "main_supervisor"},
        // iteration 1: distribute, evaluate, report, revise
        {"main_supervisor", "eval_supervisor"},
        {"eval_supervisor", "evaluator_1"},
        {"eval_supervisor", "evaluator_2"},
        {"evaluator_1", "eval_supervisor"},
        {"evaluator_2", "eval_supervisor"},
        {"eval_supervisor", "main_supervisor"},
        {"main_supervisor", "revisor"},
        {"revisor", "main_supervisor"},
        // iteration 2: same loop, then early return on accept
        {"main_supervisor", "eval_supervisor"},
        {"eval_supervisor", "evaluator_1"},
        {"eval_supervisor", "evaluator_2"},
        {"evaluator_1", "eval_supervisor"},
        {"evaluator_2", "eval_supervisor"},
        {"eval_supervisor", "main_supervisor"},
        {"main_supervisor", "user"},
    };
    c.expect(first.result.transcript.size() == expected.size(),
             "transcript has " + std::to_string(first.result.transcript.size()) +
                 " events, expected " + std::to_string(expected.size()));
    for (std::size_t i = 0; i < expected.size() && i < first.result.transcript.size(); ++i) {
        const CommEvent& e = first.result.transcript[i];
        c.expect(e.from == expected[i].first && e.to == expected[i].second,
                 "event " + std::to_string(i) + " is " + e.from + "->" + e.to + ", expected " +
                     expected[i].first + "->" + expected[i].second);
        c.expect(e.t == static_cast<std::int64_t>(i),
                 "event " + std::to_string(i) + " has t=" + std::to_string(e.t));
    }
    c.expect(first.revisor_turns == 1,
             "revisor was called " + std::to_string(first.revisor_turns) + " times, expected 1");
    c.expect(first.result.finish_reason == FinishReason::ThresholdMet,
             "finish reason is not ThresholdMet");
    c.expect(first.result.iterations_used == 2, "iterations_used != 2");
    c.expect(first.result.final_answer == "revision 1", "final answer is not the revision");

    for (int rep = 0; rep < 4; ++rep) {
        const RefinementRun again = run_two_iteration_script(graph, 1);
        c.expect(again.transcript_jsonl == first.transcript_jsonl,
                 "repeat run " + std::to_string(rep + 2) + " transcript differs");
        c.expect(again.ledger_json == first.ledger_json,
                 "repeat run " + std::to_string(rep + 2) + " ledger differs");
    }
    const RefinementRun wide = run_two_iteration_script(graph, 8);
    c.expect(wide.transcript_jsonl == first.transcript_jsonl,
             "parallelism 8 transcript differs from parallelism 1");
    c.expect(wide.ledger_json == first.ledger_json, "parallelism 8 ledger differs");

    const auto elapsed = std::chrono::steady_clock::now() - started;
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    c.expect(ms < 1000, "trace replay took " + std::to_string(ms) + " ms, budget is 1000");
}

// ---- criterion 2 ----------------------------------------------------------

void criterion_scenario_replay(Checker& c) {
    // A two-part moral judgment question whose first draft answers index 2
    // and is pushed to index 0 after evaluators flag the first scenario.
    const AgentGraph graph = graph_with_evaluators(4);

    ScriptedBackend backend(true);
    backend.set_response("generator", 0, R"({"answer": 2})");
    backend.set_response("evaluator_1", 0, evaluator_json(0.8, "intent reads plausibly"));
    backend.set_response("evaluator_2", 0, evaluator_json(0.75, "normality acceptable"));
    backend.set_response("evaluator_3", 0,
                         evaluator_json(0.3, "scenario 1 assigns responsibility wrongly"));
    backend.set_response("evaluator_4", 0,
                         evaluator_json(0.2, "scenario 1 ignores the harm done"));
    backend.set_response("revisor", 0, R"({"answer": 0})");
    for (int e = 1; e <= 4; ++e) {
        backend.set_response("evaluator_" + std::to_string(e), 1,
                             evaluator_json(0.95, "both scenarios judged wrong, consistent"));
    }
    backend.set_label_default("eval_supervisor",
                              "Responsibility and well-being both flag scenario 1.");

    RefinementConfig config;
    config.t_max = 3;
    config.m_threshold = 0.8;
    config.criteria = {{"Intent", "does the judgment reflect intent"},
                       {"Normality", "is the behavior ordinary"},
                       {"Responsibility", "who bears responsibility"},
                       {"Well-being", "who is harmed"}};

    TaskSpec spec;
    spec.task_id = "moral_scenarios";
    spec.kind = TaskKind::MultipleChoice;
    ProblemInstance instance;
    instance.question =
        "For which of these two scenarios does the main character do something clearly morally "
        "wrong? Scenario 1: ... Scenario 2: ...";
    instance.choices = {"Wrong, Wrong", "Wrong, Not wrong", "Not wrong, Wrong",
                        "Not wrong, Not wrong"};
    instance.gold_index = 0;

    MemoryStore store;
    const RunResult run = run_generate_refine(build_initial_prompt(instance, spec), graph, config,
                                              backend, store, plugins());
    c.expect(run.finish_reason == FinishReason::ThresholdMet, "run did not accept at t=2");
    c.expect(run.iterations_used == 2, "expected acceptance on the second iteration");

    const ExtractedAnswer answer = extract_answer(run, spec, instance.choices.size());
    c.expect(answer.index.has_value() && *answer.index == 0,
             "extracted answer is not index 0");
}

// ---- criterion 3 ----------------------------------------------------------

void criterion_protocol_invariants(Checker& c) {
    std::vector<AgentGraph> graphs;
    for (int k = 1; k <= 3; ++k) graphs.push_back(graph_with_evaluators(k));

    std::size_t member_to_supervisor_seen = 0;
    for (int trial = 0; trial < 1000 && c.problems.size() < 5; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) * 2654435761u + 17u);
        const int k = 1 + static_cast<int>(rng() % 3);
        const int t_max = 1 + static_cast<int>(rng() % 3);
        std::uniform_real_distribution<double> score(0.0, 1.0);

        ScriptedBackend backend(true);
        std::vector<std::vector<double>> scores;
        for (int t = 0; t < t_max; ++t) {
            std::vector<double> row;
            for (int e = 0; e < k; ++e) row.push_back(score(rng));
            scores.push_back(row);
        }
        std::vector<std::string> revisions;
        for (int t = 0; t < t_max; ++t) {
            revisions.push_back("revision " + std::to_string(t + 1) + " " + random_text(rng));
        }
        script_refinement(backend, k, scores, revisions);

        RefinementConfig config;
        config.t_max = t_max;
        config.m_threshold = 0.8;
        config.evaluator_threads = 1 + static_cast<int>(rng() % 4);

        MemoryStore store;
        const RunResult run =
            run_refinement("seed answer " + random_text(rng), "problem " + random_text(rng),
                           graphs[static_cast<std::size_t>(k - 1)], config, backend, store,
                           plugins());

        std::int64_t prev_t = -1;
        for (const CommEvent& event : run.transcript) {
            if (is_member_label(event.from) && is_supervisor_label(event.to)) {
                ++member_to_supervisor_seen;
                if (event.background.has_value()) {
                    c.problems.push_back("trial " + std::to_string(trial) + ": member event " +
                                         event.from + "->" + event.to + " carries background");
                }
            }
            if (event.t <= prev_t) {
                c.problems.push_back("trial " + std::to_string(trial) +
                                     ": time steps not strictly increasing");
            }
            prev_t = event.t;
        }
    }
    c.expect(member_to_supervisor_seen > 1000,
             "saw only " + std::to_string(member_to_supervisor_seen) +
                 " member-to-supervisor events across all runs");

    // serialize/parse round trip on randomized decision contents
    const std::vector<std::string> nexts = {"generator", "revisor", "evaluator_2", "FINISH"};
    for (int trial = 0; trial < 1000 && c.problems.size() < 8; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) + 99991u);
        SupervisorDecision decision;
        decision.thoughts = random_text(rng);
        decision.next = nexts[rng() % nexts.size()];
        decision.messages = random_text(rng);
        decision.background = random_text(rng);
        decision.intermediate_output = random_text(rng);
        const SupervisorDecision parsed =
            parse_supervisor_output(serialize_supervisor_decision(decision));
        if (!(parsed == decision)) {
            c.problems.push_back("decision round trip failed on trial " + std::to_string(trial));
        }
    }
}

// ---- criterion 4 ----------------------------------------------------------

void criterion_memory_isolation(Checker& c) {
    const AgentGraph graph = graph_with_evaluators(2);
    const std::vector<AgentId> agents = {"main_supervisor", "eval_supervisor", "generator",
                                         "evaluator_1",     "evaluator_2",     "revisor"};

    for (int trial = 0; trial < 100 && c.problems.size() < 5; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) * 7919u + 3u);

        testsupport::RecordingBackend backend(true);
        std::uniform_real_distribution<double> score(0.0, 1.0);
        const int t_max = 1 + static_cast<int>(rng() % 2);
        std::vector<std::vector<double>> scores;
        for (int t = 0; t < t_max; ++t) scores.push_back({score(rng), score(rng)});
        script_refinement(backend, 2, scores, {"revision a", "revision b"});

        MemoryStore store;
        std::map<AgentId, std::string> sentinel;
        for (const AgentId& agent : agents) {
            store.register_agent(agent);
            sentinel[agent] = "SENTINEL_" + agent + "_" + std::to_string(rng());
            MemoryRecord seed;
            seed.agent = agent;
            seed.kind = RecordKind::Thought;
            seed.content = sentinel[agent];
            store.append(seed);
        }

        RefinementConfig config;
        config.t_max = t_max;
        run_refinement("seed", "problem", graph, config, backend, store, plugins());

        for (const auto& [label, prompts] : backend.all_prompts()) {
            // the summarize prompt is built from feedback lines, not history,
            // so the positive control only applies to member prompts
            bool own_seen = prompts.empty() || label == "eval_supervisor";
            for (const std::string& prompt : prompts) {
                if (prompt.find(sentinel[label]) != std::string::npos) own_seen = true;
                for (const AgentId& other : agents) {
                    if (other == label) continue;
                    if (prompt.find(sentinel[other]) != std::string::npos) {
                        c.problems.push_back("trial " + std::to_string(trial) + ": " + label +
                                             " saw " + other + "'s sentinel");
                    }
                }
            }
            if (!own_seen) {
                c.problems.push_back("trial " + std::to_string(trial) + ": " + label +
                                     " never saw its own sentinel");
            }
        }
    }

    // close and reopen: histories must come back identical
    TempDir dir;
    std::map<AgentId, std::vector<MemoryRecord>> before;
    {
        MemoryStore store(dir.path(), "persist_run");
        ScriptedBackend backend(true);
        script_refinement(backend, 2, {{0.9, 0.9}}, {});
        RefinementConfig config;
        run_refinement("seed", "problem", graph, config, backend, store, plugins());
        for (const AgentId& agent : agents) before[agent] = store.history(agent);
    }
    MemoryStore reopened(dir.path(), "later_run");
    for (const AgentId& agent : agents) {
        reopened.register_agent(agent);
        if (!(reopened.history(agent) == before[agent])) {
            c.problems.push_back("history for " + agent + " changed across close/reopen");
        }
    }
}

// ---- criterion 5 ----------------------------------------------------------

void criterion_ablation_fidelity(Checker& c) {
    const AgentGraph graph = graph_with_evaluators(2);

    auto run_with = [&](std::set<AblationFlag> flags, ScriptedBackend& backend,
                        int t_max = 3) {
        RefinementConfig config;
        config.t_max = t_max;
        config.ablation = std::move(flags);
        config.criteria = {{"clarity", ""}, {"accuracy", ""}};
        MemoryStore store;
        return run_refinement("draft", "problem", graph, config, backend, store, plugins());
    };
    auto touches = [](const CommEvent& e, const AgentId& id) {
        return e.from == id || e.to == id;
    };

    {
        ScriptedBackend backend(true);
        backend.set_response("main_supervisor", 0,
                             R"({"verdict": "revise", "feedback": "expand the argument"})");
        backend.set_response("main_supervisor", 1, R"({"verdict": "accept"})");
        backend.set_response("revisor", 0, "expanded");
        const RunResult run = run_with({AblationFlag::NoEvalTeam}, backend);
        for (const CommEvent& e : run.transcript) {
            c.expect(!touches(e, "eval_supervisor") && !touches(e, "evaluator_1") &&
                         !touches(e, "evaluator_2"),
                     "NoEvalTeam transcript touches an evaluation agent");
        }
        c.expect(backend.turns_taken("evaluator_1") == 0, "NoEvalTeam called an evaluator");
        c.expect(backend.turns_taken("eval_supervisor") == 0,
                 "NoEvalTeam called the eval supervisor");
    }
    {
        ScriptedBackend backend(true);
        script_refinement(backend, 2, {{0.3, 0.4}, {0.9, 0.9}}, {"second draft"});
        const RunResult run = run_with({AblationFlag::NoEvalSupervisor}, backend);
        c.expect(backend.turns_taken("eval_supervisor") == 0,
                 "NoEvalSupervisor still made a summarize call");
        for (const CommEvent& e : run.transcript) {
            c.expect(!touches(e, "eval_supervisor"),
                     "NoEvalSupervisor transcript touches the eval supervisor");
        }
        c.expect(run.finish_reason == FinishReason::ThresholdMet,
                 "NoEvalSupervisor run did not accept");
    }
    {
        ScriptedBackend backend(true);
        script_refinement(backend, 2, {{0.3, 0.4}, {0.9, 0.9}}, {"second draft"});
        const RunResult run = run_with({AblationFlag::NormComm}, backend);
        for (const CommEvent& e : run.transcript) {
            c.expect(!e.background.has_value(), "NormComm event still carries background");
            c.expect(e.intermediate_output.empty(),
                     "NormComm event still carries intermediate output");
        }
    }
    {
        ScriptedBackend backend(true);
        script_refinement(backend, 2, {{0.3, 0.4}, {0.9, 0.9}}, {"second draft"});
        const RunResult run = run_with({AblationFlag::DropBackground}, backend);
        bool any_io = false;
        for (const CommEvent& e : run.transcript) {
            c.expect(!e.background.has_value(), "DropBackground event carries background");
            any_io = any_io || !e.intermediate_output.empty();
        }
        c.expect(any_io, "DropBackground also dropped intermediate outputs");
    }
    {
        ScriptedBackend backend(true);
        script_refinement(backend, 2, {{0.3, 0.4}, {0.9, 0.9}}, {"second draft"});
        const RunResult run = run_with({AblationFlag::DropIntermediate}, backend);
        bool any_background = false;
        for (const CommEvent& e : run.transcript) {
            c.expect(e.intermediate_output.empty(),
                     "DropIntermediate event carries intermediate output");
            any_background = any_background || e.background.has_value();
        }
        c.expect(any_background, "DropIntermediate also dropped backgrounds");
    }
}

// ---- criterion 6 ----------------------------------------------------------

void criterion_metric_oracles(Checker& c) {
    const auto started = std::chrono::steady_clock::now();
    const std::vector<std::string> vocab = {"the",  "cat",   "sat",  "mat",   "quick",
                                            "fox",  "jumps", "over", "lazy",  "dog",
                                            "blue", "sky",   "deep", "river", "stone"};

    auto sentence = [&](std::mt19937& rng, int min_len, int max_len) {
        std::uniform_int_distribution<int> len(min_len, max_len);
        std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
        std::string out;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            if (i) out += " ";
            out += vocab[pick(rng)];
        }
        return out;
    };
    auto close_to = [](double a, double b, double tol) { return std::fabs(a - b) <= tol; };

    // rouge
    c.expect(metrics::rouge1_f1("the quick fox", "the quick fox", metrics::TokenizerSpec::Words) ==
                 1.0,
             "rouge identity is not exactly 1");
    c.expect(metrics::rouge1_f1("cat mat", "river stone", metrics::TokenizerSpec::Words) == 0.0,
             "rouge on disjoint texts is not exactly 0");
    for (int trial = 0; trial < 200 && c.problems.size() < 5; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) + 11u);
        const std::string cand = sentence(rng, 1, 12);
        const std::string ref = sentence(rng, 1, 12);
        const double got = metrics::rouge1_f1(cand, ref, metrics::TokenizerSpec::Words);
        const double want = oracle::rouge1_f1(metrics::tokenize(metrics::TokenizerSpec::Words, cand),
                                              metrics::tokenize(metrics::TokenizerSpec::Words, ref));
        if (!close_to(got, want, 1e-12)) {
            c.problems.push_back("rouge mismatch on trial " + std::to_string(trial));
        }
    }

    // bleu
    {
        const std::vector<std::string> same = {"the quick fox jumps over", "deep blue river"};
        c.expect(metrics::bleu4(same, same, metrics::TokenizerSpec::Words) == 1.0,
                 "bleu identity is not exactly 1");
    }
    for (int trial = 0; trial < 200 && c.problems.size() < 10; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) + 1009u);
        std::uniform_int_distribution<int> corpus_size(2, 4);
        std::vector<std::string> cands, refs;
        std::vector<std::vector<std::string>> cand_toks, ref_toks;
        const int pairs = corpus_size(rng);
        for (int s = 0; s < pairs; ++s) {
            cands.push_back(sentence(rng, 2, 10));
            refs.push_back(sentence(rng, 2, 10));
            cand_toks.push_back(metrics::tokenize(metrics::TokenizerSpec::Words, cands.back()));
            ref_toks.push_back(metrics::tokenize(metrics::TokenizerSpec::Words, refs.back()));
        }
        metrics::BleuOptions options;
        options.smooth_epsilon = (trial % 2) == 1;
        const double got = metrics::bleu4(cands, refs, metrics::TokenizerSpec::Words, options);
        const double want =
            oracle::bleu4(cand_toks, ref_toks, options.smooth_epsilon, options.epsilon);
        if (!close_to(got, want, 1e-12)) {
            c.problems.push_back("bleu mismatch on trial " + std::to_string(trial));
        }
    }

    // pearson and spearman
    {
        std::vector<double> x, up, down;
        for (int i = 1; i <= 8; ++i) {
            x.push_back(i);
            up.push_back(2.0 * i);
            down.push_back(-2.0 * i);
        }
        c.expect(metrics::pearson(x, up) == 1.0, "pearson of a perfect line is not exactly 1");
        c.expect(metrics::pearson(x, down) == -1.0,
                 "pearson of a perfect inverse line is not exactly -1");
    }
    for (int trial = 0; trial < 200 && c.problems.size() < 15; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) + 4242u);
        std::uniform_int_distribution<int> len(3, 12);
        std::uniform_real_distribution<double> value(-5.0, 5.0);
        const int n = len(rng);
        std::vector<double> x, y;
        for (int i = 0; i < n; ++i) {
            x.push_back(value(rng));
            y.push_back(0.5 * x.back() + value(rng));
        }
        if (!close_to(metrics::pearson(x, y), oracle::pearson(x, y), 1e-12)) {
            c.problems.push_back("pearson mismatch on trial " + std::to_string(trial));
        }
        if (!close_to(metrics::spearman(x, y), oracle::spearman(x, y), 1e-9)) {
            c.problems.push_back("spearman mismatch on trial " + std::to_string(trial));
        }
    }

    // icc, both forms
    for (int trial = 0; trial < 200 && c.problems.size() < 20; ++trial) {
        std::mt19937 rng(static_cast<unsigned>(trial) + 31337u);
        std::uniform_int_distribution<int> subjects(4, 9);
        std::uniform_int_distribution<int> raters(3, 5);
        std::uniform_real_distribution<double> noise(-1.0, 1.0);
        const int n = subjects(rng);
        const int k = raters(rng);
        std::vector<std::vector<double>> cells(static_cast<std::size_t>(n));
        std::vector<std::string> subject_ids, rater_ids;
        for (int j = 0; j < k; ++j) rater_ids.push_back("r" + std::to_string(j));
        for (int i = 0; i < n; ++i) {
            subject_ids.push_back("s" + std::to_string(i));
            for (int j = 0; j < k; ++j) {
                cells[static_cast<std::size_t>(i)].push_back(1.5 * i + 0.4 * j + noise(rng));
            }
        }
        const metrics::RatingsMatrix matrix(cells, subject_ids, rater_ids);
        if (!close_to(metrics::icc(matrix, metrics::IccForm::TwoOneAbsolute),
                      oracle::icc_2_1(cells), 1e-9)) {
            c.problems.push_back("icc(2,1) mismatch on trial " + std::to_string(trial));
        }
        if (!close_to(metrics::icc(matrix, metrics::IccForm::TwoKAbsolute),
                      oracle::icc_2_k(cells), 1e-9)) {
            c.problems.push_back("icc(2,k) mismatch on trial " + std::to_string(trial));
        }
    }

    const auto elapsed = std::chrono::steady_clock::now() - started;
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    c.expect(ms < 10000, "metric oracle sweep took " + std::to_string(ms) + " ms, budget 10000");
}

// ---- criterion 7 ----------------------------------------------------------

double parse_reported(const std::string& output, const std::string& key, Checker& c) {
    std::istringstream in(output);
    std::string word;
    while (in >> word) {
        if (word == key) {
            double value = 0;
            if (in >> value) return value;
        }
    }
    c.problems.push_back("CLI output lacks '" + key + "': " + output);
    return std::nan("");
}

void criterion_rating_stats(Checker& c) {
    // the full ratings table used across the metric tests
    const std::vector<std::vector<double>> table = {{9, 2, 5, 8},  {6, 1, 3, 2}, {8, 4, 6, 8},
                                                    {7, 1, 2, 6},  {10, 5, 6, 9}, {6, 2, 4, 7}};
    std::vector<std::string> subjects, raters;
    for (std::size_t i = 0; i < table.size(); ++i) subjects.push_back("s" + std::to_string(i));
    for (std::size_t j = 0; j < table[0].size(); ++j) raters.push_back("r" + std::to_string(j));
    const metrics::RatingsMatrix matrix(table, subjects, raters);

    c.expect(std::fabs(metrics::icc(matrix, metrics::IccForm::TwoOneAbsolute) -
                       oracle::icc_2_1(table)) <= 1e-9,
             "icc(2,1) disagrees with the oracle on the fixed table");
    c.expect(std::fabs(metrics::icc(matrix, metrics::IccForm::TwoKAbsolute) -
                       oracle::icc_2_k(table)) <= 1e-9,
             "icc(2,k) disagrees with the oracle on the fixed table");

    // candidate column vs the mean of the others, as the CLI computes it
    std::vector<double> candidate, human_mean;
    for (const auto& row : table) {
        candidate.push_back(row.back());
        double sum = 0;
        for (std::size_t j = 0; j + 1 < row.size(); ++j) sum += row[j];
        human_mean.push_back(sum / static_cast<double>(row.size() - 1));
    }
    c.expect(std::fabs(metrics::pearson(candidate, human_mean) -
                       oracle::pearson(candidate, human_mean)) <= 1e-9,
             "pearson vs mean-of-raters disagrees with the oracle");

    // a synthetic matrix built to correlate at exactly 0.67: two rater
    // columns average to x, the candidate is 0.67 x + sqrt(1-0.67^2) e with
    // e orthogonal to x and of equal norm
    const double r = 0.67;
    const double s = std::sqrt(1.0 - r * r);
    const std::vector<double> x_centered = {1, 1, -1, -1};
    const std::vector<double> e_centered = {1, -1, 1, -1};
    std::ostringstream csv;
    csv << "rater_a,rater_b,candidate\n";
    csv << std::setprecision(17);
    for (std::size_t i = 0; i < x_centered.size(); ++i) {
        const double x = 5.0 + x_centered[i];
        const double y = 5.0 + r * x_centered[i] + s * e_centered[i];
        csv << (x + 1.0) << "," << (x - 1.0) << "," << y << "\n";
    }

    TempDir dir;
    write_file(dir.path() / "synthetic.csv", csv.str());
    const testsupport::CliResult run =
        run_cli({"stats", "pearson", "--ratings", (dir.path() / "synthetic.csv").string()});
    c.expect(run.exit_code == 0, "stats pearson exited with " + std::to_string(run.exit_code));
    const double reported = parse_reported(run.output, "pearson", c);
    c.expect(std::fabs(reported - 0.67) <= 1e-9,
             "CLI pearson is " + std::to_string(reported) + ", expected 0.67");

    // the fixed table through the CLI icc path
    std::ostringstream table_csv;
    table_csv << "r0,r1,r2,r3\n";
    for (const auto& row : table) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            table_csv << (j ? "," : "") << row[j];
        }
        table_csv << "\n";
    }
    write_file(dir.path() / "table.csv", table_csv.str());
    const testsupport::CliResult icc_run =
        run_cli({"stats", "icc", "--ratings", (dir.path() / "table.csv").string()});
    c.expect(icc_run.exit_code == 0, "stats icc exited with " + std::to_string(icc_run.exit_code));
    const double icc_single = parse_reported(icc_run.output, "icc_2_1", c);
    const double icc_avg = parse_reported(icc_run.output, "icc_2_k", c);
    c.expect(std::fabs(icc_single - oracle::icc_2_1(table)) <= 1e-9,
             "CLI icc_2_1 disagrees with the oracle");
    c.expect(std::fabs(icc_avg - oracle::icc_2_k(table)) <= 1e-9,
             "CLI icc_2_k disagrees with the oracle");
}

// ---- criterion 8 ----------------------------------------------------------

void criterion_cost_ledger(Checker& c) {
    {
        CostLedger ledger;
        for (int i = 0; i < 895; ++i) ledger.record("gpt-4o", 120, 80);
        PriceTable prices;
        prices["gpt-4o"].per_call = Money::from_string("0.17");
        const Money cost = estimate_cost(ledger, prices);
        c.expect(cost.to_string() == "152.15",
                 "895 calls at 0.17 estimated as " + cost.to_string());
    }
    {
        CostLedger ledger;
        for (int i = 0; i < 1473; ++i) ledger.record("gpt-4o-mini", 64, 48);
        PriceTable prices;
        prices["gpt-4o-mini"].per_call = Money::from_string("0.13");
        const Money cost = estimate_cost(ledger, prices);
        c.expect(cost.to_string() == "191.49",
                 "1473 calls at 0.13 estimated as " + cost.to_string());
    }
}

// ---- criterion 9 ----------------------------------------------------------

void criterion_termination(Checker& c) {
    const AgentGraph graph = graph_with_evaluators(2);
    {
        ScriptedBackend backend(true);
        backend.set_label_default("evaluator_1", evaluator_json(0.1, "never good enough"));
        backend.set_label_default("evaluator_2", evaluator_json(0.15, "still not right"));
        backend.set_label_default("eval_supervisor", "Both evaluators reject the answer.");
        backend.set_label_default("revisor", "another futile rewrite");

        RefinementConfig config;
        config.t_max = 5;
        config.m_threshold = 0.8;
        config.step_budget = 200;
        config.criteria = {{"clarity", ""}, {"accuracy", ""}};

        MemoryStore store;
        const RunResult run =
            run_refinement("draft", "problem", graph, config, backend, store, plugins());
        c.expect(run.finish_reason == FinishReason::MaxIterations,
                 "never-accept run did not stop at MaxIterations");
        c.expect(run.iterations_used == 5, "never-accept run used " +
                                               std::to_string(run.iterations_used) +
                                               " iterations, expected 5");
        c.expect(backend.turns_taken("revisor") == 5,
                 "revisor was called " + std::to_string(backend.turns_taken("revisor")) +
                     " times, expected exactly 5");
    }
    {
        ScriptedBackend backend(true);
        backend.set_label_default(
            "main_supervisor",
            supervisor_json("keep going", "generator", "one more pass", "context", ""));
        backend.set_label_default("generator", "yet another draft");

        RefinementConfig config;
        config.step_budget = 7;

        MemoryStore store;
        bool budget_hit = false;
        try {
            run_pipeline("problem", graph, config, backend, store, plugins());
        } catch (const StepBudgetExceeded&) {
            budget_hit = true;
        }
        c.expect(budget_hit, "never-finishing supervisor was not stopped by the step budget");
        c.expect(backend.ledger().total_calls() == 7,
                 "step budget allowed " + std::to_string(backend.ledger().total_calls()) +
                     " calls, expected 7");
    }
}

// ---- criterion 10 ---------------------------------------------------------

void criterion_majority_voting(Checker& c) {
    TempDir dir;
    std::ostringstream csv;
    csv << "question,choiceA,choiceB,choiceC,choiceD,gold\n";
    for (int p = 0; p < 20; ++p) {
        csv << "synthetic question " << p << ",a,b,c,d," << (p % 4) << "\n";
    }
    write_file(dir.path() / "synthetic.csv", csv.str());

    TaskSpec spec;
    spec.task_id = "synthetic_votes";
    spec.kind = TaskKind::MultipleChoice;
    spec.dataset_path = (dir.path() / "synthetic.csv").string();

    auto answer = [](int idx) { return json{{"answer", idx}}.dump(); };

    // Three vote shapes: 4-of-7 majorities, 3/3/1 ties that the earliest
    // vote must win, and unanimous votes.
    int expected_correct = 0;
    json problems = json::object();
    for (int p = 0; p < 20; ++p) {
        const int gold = p % 4;
        const int wrong = (gold + 1) % 4;
        const int spoiler = (gold + 2) % 4;
        std::vector<int> votes;
        if (p % 3 == 0) {
            votes = {gold, wrong, gold, wrong, gold, wrong, gold};
            ++expected_correct;
        } else if (p % 3 == 1) {
            votes = {wrong, gold, wrong, gold, wrong, gold, spoiler};  // tie, wrong is first
        } else {
            votes = {gold, gold, gold, gold, gold, gold, gold};
            ++expected_correct;
        }
        json vote_scripts = json::object();
        for (std::size_t v = 0; v < votes.size(); ++v) {
            vote_scripts[std::to_string(v)] = json{{"generator", answer(votes[v])}};
        }
        problems[std::to_string(p)] = json{{"votes", vote_scripts}};
    }
    const json library_doc{{"strict", true},
                           {"default",
                            {{"evaluator_1", evaluator_json(0.95, "fine")},
                             {"eval_supervisor", "summary"}}},
                           {"problems", problems}};
    const ScriptLibrary library = ScriptLibrary::from_json(library_doc);

    ExperimentConfig config;
    config.engine.model = "test-model";
    config.votes = 7;
    const BackendFactory factory = [&library](std::size_t problem, int vote) {
        return library.make_backend(problem, vote);
    };

    const ExperimentReport report = run_experiment(spec, config, factory);
    c.expect(report.scores.n_total == 20, "not every problem was scored");
    c.expect(report.scores.n_correct == expected_correct,
             "n_correct is " + std::to_string(report.scores.n_correct) + ", expected " +
                 std::to_string(expected_correct));
    const double expected_accuracy =
        static_cast<double>(expected_correct) / static_cast<double>(20);
    c.expect(report.scores.values.at("accuracy") == expected_accuracy,
             "accuracy is not exactly " + std::to_string(expected_accuracy));

    // tie problems must resolve to the first-seen answer, the wrong one
    for (int p = 0; p < 20; ++p) {
        if (p % 3 != 1) continue;
        const int wrong = (p % 4 + 1) % 4;
        const ProblemOutcome& outcome = report.outcomes[static_cast<std::size_t>(p)];
        c.expect(outcome.answer_index.has_value() && *outcome.answer_index == wrong,
                 "tie on problem " + std::to_string(p) + " did not go to the first occurrence");
        c.expect(!outcome.correct, "tie problem " + std::to_string(p) + " scored correct");
    }

    ExperimentConfig parallel = config;
    parallel.parallelism = 4;
    const ExperimentReport threaded = run_experiment(spec, parallel, factory);
    c.expect(threaded.digest() == report.digest(),
             "report digest changed with parallelism 4");
}

}  // namespace

int main() {
    run_criterion(1, "two-iteration refinement trace replay, deterministic and under 1 s",
                  criterion_trace_replay);
    run_criterion(2, "scripted moral-judgment scenario lands on answer 0",
                  criterion_scenario_replay);
    run_criterion(3, "protocol invariants hold over 1,000 randomized runs",
                  criterion_protocol_invariants);
    run_criterion(4, "agent memories stay isolated and survive reopen",
                  criterion_memory_isolation);
    run_criterion(5, "ablations remove exactly the advertised structure",
                  criterion_ablation_fidelity);
    run_criterion(6, "metrics match brute-force oracles on random instances",
                  criterion_metric_oracles);
    run_criterion(7, "rating statistics reproducible, CLI reports pearson 0.67",
                  criterion_rating_stats);
    run_criterion(8, "cost ledger reproduces the reference spend to the cent",
                  criterion_cost_ledger);
    run_criterion(9, "adversarial scripts terminate at t_max and the step budget",
                  criterion_termination);
    run_criterion(10, "seven-vote majority aggregation with first-occurrence ties",
                  criterion_majority_voting);

    if (g_failed != 0) {
        std::printf("%d of 10 criteria failed\n", g_failed);
        return 1;
    }
    std::printf("all 10 criteria passed\n");
    return 0;
}
