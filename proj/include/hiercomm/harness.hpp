#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/backend.hpp"
#include "hiercomm/cost.hpp"
#include "hiercomm/engine.hpp"
#include "hiercomm/errors.hpp"
#include "hiercomm/metrics.hpp"
#include "hiercomm/protocol.hpp"

namespace hiercomm {

enum class TaskKind { MultipleChoice, OpenQA, AdHeadline };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& text);

// Everything needed to run one benchmark task: where the data lives, which
// evaluator criteria staff the evaluation team, and how answers are shaped
// and scored.
struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::MultipleChoice;
    std::string dataset_path;
    std::vector<Criterion> evaluators;
    std::vector<std::string> metric_ids;  // empty picks the kind's defaults
    int headline_limit = 30;
    std::string banned_words_path;
    metrics::TokenizerSpec tokenizer = metrics::TokenizerSpec::Words;

    void validate() const;
    FormatSpec answer_format(std::size_t num_choices) const;
    std::vector<std::string> effective_metrics() const;

    static TaskSpec from_json(const nlohmann::json& doc);
    static TaskSpec from_file(const std::string& path);
};

struct ProblemInstance {
    std::string question;
    std::vector<std::string> choices;     // MultipleChoice
    int gold_index = -1;                  // MultipleChoice
    std::vector<std::string> references;  // OpenQA
    nlohmann::json metadata = nlohmann::json::object();
};

// MultipleChoice datasets are CSV (question,choiceA..choiceD,gold) or JSONL
// ({"question", "choices", "gold"}); OpenQA and AdHeadline are JSONL.
std::vector<ProblemInstance> load_dataset(const TaskSpec& spec);

std::string build_initial_prompt(const ProblemInstance& instance, const TaskSpec& spec);

struct ExtractedAnswer {
    std::optional<int> index;
    std::string text;
    std::vector<std::string> headlines;

    // Canonical identity used for majority voting.
    std::string key() const;
};

ExtractedAnswer extract_answer(const RunResult& run, const TaskSpec& spec,
                               std::size_t num_choices);

// Layered script document for scripted experiments:
//   {
//     "strict": true,
//     "default":  {"<label>": ["turn 0", ...] | "<every turn>", "*": "<fallback>"},
//     "problems": {"<idx>": {"script": {...}, "votes": {"<v>": {"script": {...}}}}}
//   }
// Later layers replace a label's entry wholesale (vote over problem over
// default), so each backend sees one coherent script.
class ScriptLibrary {
public:
    ScriptLibrary() = default;

    static ScriptLibrary from_json(const nlohmann::json& doc);
    static ScriptLibrary from_file(const std::string& path);

    std::unique_ptr<ScriptedBackend> make_backend(std::size_t problem, int vote) const;
    bool strict() const { return strict_; }

private:
    bool strict_ = true;
    nlohmann::json default_script_ = nlohmann::json::object();
    std::map<std::size_t, nlohmann::json> problem_scripts_;
};

using BackendFactory =
    std::function<std::unique_ptr<Backend>(std::size_t problem_index, int vote_index)>;

struct ExperimentConfig {
    RefinementConfig engine;
    int votes = 1;
    int parallelism = 1;
    std::string out_dir;  // empty runs fully in memory
    bool resume = false;
    PriceTable prices;    // when nonempty the report carries a cost estimate
    std::optional<nlohmann::json> team_config;  // explicit graph, else built from the roster
    int max_problems = 0;  // 0 = whole dataset

    void validate() const;
    nlohmann::json to_json() const;  // fingerprint input
};

enum class ProblemStatus { Scored, Errored, Skipped };

std::string to_string(ProblemStatus status);

struct ProblemOutcome {
    std::size_t index = 0;
    ProblemStatus status = ProblemStatus::Skipped;
    std::string detail;  // error text or skip reason
    std::optional<int> answer_index;
    std::string answer_text;
    std::vector<std::string> headlines;
    std::string answer_key;
    bool correct = false;  // MultipleChoice only
    nlohmann::json ledger = nlohmann::json::object();

    nlohmann::json to_json() const;
};

struct ExperimentReport {
    std::string task_id;
    metrics::ScoreReport scores;
    std::vector<ProblemOutcome> outcomes;
    CostLedger aggregate_usage;
    std::optional<Money> estimated_cost;
    std::string config_fingerprint;

    nlohmann::json to_json() const;
    // FNV-1a over the canonical report JSON; byte-stable for scripted runs.
    std::string digest() const;
};

// Builds the two-team graph for a task from its evaluator roster (or the
// explicit team_config) and runs every problem through generate + refine,
// voting across `votes` independent runs per problem.
ExperimentReport run_experiment(const TaskSpec& spec, const ExperimentConfig& config,
                                const BackendFactory& make_backend);

// Shared with the CLI: score/report a finished run directory produced by
// run_experiment (reads result.json files, not transcripts).
nlohmann::json load_report(const std::string& out_dir);

}  // namespace hiercomm
