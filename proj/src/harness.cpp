#include "hiercomm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "hiercomm/agent_graph.hpp"
#include "hiercomm/memory.hpp"
#include "hiercomm/plugins.hpp"
#include "hiercomm/text.hpp"

namespace hiercomm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::MultipleChoice: return "multiple_choice";
        case TaskKind::OpenQA: return "open_qa";
        case TaskKind::AdHeadline: return "ad_headline";
    }
    throw Error("unreachable task kind");
}

TaskKind task_kind_from_string(const std::string& text) {
    if (text == "multiple_choice") return TaskKind::MultipleChoice;
    if (text == "open_qa") return TaskKind::OpenQA;
    if (text == "ad_headline") return TaskKind::AdHeadline;
    throw ConfigError("unknown task kind: '" + text + "'");
}

std::string to_string(ProblemStatus status) {
    switch (status) {
        case ProblemStatus::Scored: return "scored";
        case ProblemStatus::Errored: return "errored";
        case ProblemStatus::Skipped: return "skipped";
    }
    throw Error("unreachable problem status");
}

void TaskSpec::validate() const {
    if (task_id.empty()) throw ConfigError("task_id must be set");
    if (headline_limit < 1) throw ConfigError("headline_limit must be >= 1");
}

FormatSpec TaskSpec::answer_format(std::size_t num_choices) const {
    FormatSpec format;
    switch (kind) {
        case TaskKind::MultipleChoice:
            format.shape = AnswerShape::AnswerIndex;
            format.num_choices = static_cast<int>(num_choices);
            break;
        case TaskKind::OpenQA:
            format.shape = AnswerShape::AnswerText;
            break;
        case TaskKind::AdHeadline:
            format.shape = AnswerShape::HeadlineList;
            break;
    }
    return format;
}

std::vector<std::string> TaskSpec::effective_metrics() const {
    if (!metric_ids.empty()) return metric_ids;
    switch (kind) {
        case TaskKind::MultipleChoice: return {"accuracy"};
        case TaskKind::OpenQA: return {"rouge1_f1", "bleu4"};
        case TaskKind::AdHeadline: return {"ccv"};
    }
    throw Error("unreachable task kind");
}

namespace {

void reject_unknown_keys(const json& doc, std::initializer_list<const char*> known,
                         const std::string& where) {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) {
                return it.key() == k;
            }) == known.end()) {
            throw ConfigError("unknown field '" + it.key() + "' in " + where);
        }
    }
}

std::string read_text_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TaskSpec TaskSpec::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("task spec must be a JSON object");
    reject_unknown_keys(doc,
                        {"task_id", "kind", "dataset", "evaluators", "metrics",
                         "headline_limit", "banned_words", "tokenizer"},
                        "task spec");
    TaskSpec spec;
    spec.task_id = doc.at("task_id").get<std::string>();
    spec.kind = task_kind_from_string(doc.at("kind").get<std::string>());
    if (doc.contains("dataset")) spec.dataset_path = doc.at("dataset").get<std::string>();
    if (doc.contains("evaluators")) {
        for (const json& e : doc.at("evaluators")) {
            Criterion c;
            c.name = e.at("name").get<std::string>();
            c.description = e.value("description", std::string{});
            spec.evaluators.push_back(std::move(c));
        }
    }
    if (doc.contains("metrics")) {
        for (const json& m : doc.at("metrics")) spec.metric_ids.push_back(m.get<std::string>());
    }
    spec.headline_limit = doc.value("headline_limit", 30);
    if (doc.contains("banned_words")) {
        spec.banned_words_path = doc.at("banned_words").get<std::string>();
    }
    if (doc.contains("tokenizer")) {
        spec.tokenizer = metrics::tokenizer_from_string(doc.at("tokenizer").get<std::string>());
    }
    spec.validate();
    return spec;
}

TaskSpec TaskSpec::from_file(const std::string& path) {
    TaskSpec spec = from_json(json::parse(read_text_file(path, "task spec")));
    // Relative data paths are resolved against the spec file's directory.
    const fs::path base = fs::path(path).parent_path();
    if (!spec.dataset_path.empty() && fs::path(spec.dataset_path).is_relative()) {
        spec.dataset_path = (base / spec.dataset_path).string();
    }
    if (!spec.banned_words_path.empty() && fs::path(spec.banned_words_path).is_relative()) {
        spec.banned_words_path = (base / spec.banned_words_path).string();
    }
    return spec;
}

namespace {

// Single-line CSV field splitting with double-quote escaping. Embedded
// newlines inside quoted fields are not supported.
std::vector<std::string> split_csv_row(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field += c;
        }
    }
    if (quoted) {
        throw DatasetError("line " + std::to_string(line_no) + ": unterminated quoted field");
    }
    fields.push_back(std::move(field));
    return fields;
}

int parse_gold_index(const std::string& text, std::size_t n_choices, std::size_t line_no) {
    const std::string t = trim(text);
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) {
            return std::isdigit(c) != 0;
        })) {
        throw DatasetError("line " + std::to_string(line_no) + ": gold '" + text +
                           "' is not a non-negative integer");
    }
    const long idx = std::stol(t);
    if (idx < 0 || static_cast<std::size_t>(idx) >= n_choices) {
        throw DatasetError("line " + std::to_string(line_no) + ": gold index " +
                           std::to_string(idx) + " outside " + std::to_string(n_choices) +
                           " choices");
    }
    return static_cast<int>(idx);
}

std::vector<ProblemInstance> load_mc_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<ProblemInstance> instances;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_csv_row(line, line_no);
        if (!saw_header) {
            if (fields.size() != 6 || !iequals(trim(fields[0]), "question") ||
                !iequals(trim(fields[5]), "gold")) {
                throw DatasetError("line " + std::to_string(line_no) +
                                   ": expected header question,choiceA,choiceB,choiceC,"
                                   "choiceD,gold");
            }
            saw_header = true;
            continue;
        }
        if (fields.size() != 6) {
            throw DatasetError("line " + std::to_string(line_no) + ": expected 6 fields, got " +
                               std::to_string(fields.size()));
        }
        ProblemInstance inst;
        inst.question = fields[0];
        inst.choices = {fields[1], fields[2], fields[3], fields[4]};
        inst.gold_index = parse_gold_index(fields[5], inst.choices.size(), line_no);
        instances.push_back(std::move(inst));
    }
    if (!saw_header) throw DatasetError("dataset is empty (no header row)");
    return instances;
}

ProblemInstance instance_from_jsonl(const TaskSpec& spec, const json& doc, std::size_t line_no) {
    if (!doc.is_object()) {
        throw DatasetError("line " + std::to_string(line_no) + ": record is not a JSON object");
    }
    ProblemInstance inst;
    switch (spec.kind) {
        case TaskKind::MultipleChoice: {
            inst.question = doc.at("question").get<std::string>();
            for (const json& c : doc.at("choices")) inst.choices.push_back(c.get<std::string>());
            if (inst.choices.empty()) {
                throw DatasetError("line " + std::to_string(line_no) + ": empty choices");
            }
            if (!doc.at("gold").is_number_integer()) {
                throw DatasetError("line " + std::to_string(line_no) +
                                   ": gold is not an integer");
            }
            const auto idx = doc.at("gold").get<long>();
            if (idx < 0 || static_cast<std::size_t>(idx) >= inst.choices.size()) {
                throw DatasetError("line " + std::to_string(line_no) + ": gold index " +
                                   std::to_string(idx) + " outside " +
                                   std::to_string(inst.choices.size()) + " choices");
            }
            inst.gold_index = static_cast<int>(idx);
            break;
        }
        case TaskKind::OpenQA: {
            inst.question = doc.at("question").get<std::string>();
            for (const json& r : doc.at("references")) {
                inst.references.push_back(r.get<std::string>());
            }
            if (inst.references.empty()) {
                throw DatasetError("line " + std::to_string(line_no) + ": empty references");
            }
            break;
        }
        case TaskKind::AdHeadline: {
            if (doc.contains("question")) {
                inst.question = doc.at("question").get<std::string>();
            } else if (doc.contains("product")) {
                inst.question = doc.at("product").get<std::string>();
            } else {
                throw DatasetError("line " + std::to_string(line_no) +
                                   ": record needs a question or product field");
            }
            break;
        }
    }
    inst.metadata = doc;
    return inst;
}

}  // namespace

std::vector<ProblemInstance> load_dataset(const TaskSpec& spec) {
    if (spec.dataset_path.empty()) throw DatasetError("task spec has no dataset path");
    std::ifstream in(spec.dataset_path, std::ios::binary);
    if (!in) throw DatasetError("cannot open dataset: " + spec.dataset_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    if (fs::path(spec.dataset_path).extension() == ".csv") {
        if (spec.kind != TaskKind::MultipleChoice) {
            throw DatasetError("CSV datasets are only supported for multiple_choice tasks");
        }
        return load_mc_csv(text);
    }

    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<ProblemInstance> instances;
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            instances.push_back(instance_from_jsonl(spec, doc, line_no));
        } catch (const json::exception& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (instances.empty()) throw DatasetError("dataset is empty: " + spec.dataset_path);
    return instances;
}

std::string build_initial_prompt(const ProblemInstance& instance, const TaskSpec& spec) {
    std::string prompt = "You are an expert in " + spec.task_id + ".";
    switch (spec.kind) {
        case TaskKind::MultipleChoice: {
            if (instance.choices.empty()) {
                throw FormatError("multiple_choice instance has no choices");
            }
            prompt += " Answer the following question.\n\nQuestion:\n" + instance.question +
                      "\n\nThe choices you are given:\n";
            for (std::size_t i = 0; i < instance.choices.size(); ++i) {
                prompt += std::to_string(i) + ". " + instance.choices[i] + "\n";
            }
            prompt +=
                "\nYour final answer must be only in the dictionary form of: "
                "{\"answer\": <index of the correct choice>}";
            break;
        }
        case TaskKind::OpenQA: {
            prompt += " Answer the following question.\n\nQuestion:\n" + instance.question +
                      "\n\nYour final answer must be only in the dictionary form of: "
                      "{\"answer\": \"<one sentence answer>\", \"details\": \"<supporting "
                      "details or explanation>\"}";
            break;
        }
        case TaskKind::AdHeadline: {
            prompt += " Create advertising headlines for the following product.\n\n"
                      "Product information:\n" +
                      instance.question + "\n\nEach headline must be at most " +
                      std::to_string(spec.headline_limit) +
                      " characters long.\nYour final answer must be only in the dictionary "
                      "form of: {\"Headline\": [\"<headline 1>\", \"<headline 2>\", ...]}";
            break;
        }
    }
    return prompt;
}

std::string ExtractedAnswer::key() const {
    if (index) return "i:" + std::to_string(*index);
    if (!headlines.empty()) {
        std::string k = "h:";
        for (const std::string& h : headlines) {
            k += h;
            k += '\x1f';
        }
        return k;
    }
    return "t:" + text;
}

namespace {

// First JSON object in `text` satisfying `pred`, scanning left to right
// through nested and successive objects.
template <typename Pred>
std::optional<json> find_payload(const std::string& text, Pred pred) {
    std::size_t start = 0;
    while (true) {
        const std::size_t brace = text.find('{', start);
        if (brace == std::string::npos) return std::nullopt;
        auto doc = extract_first_json_object(text.substr(brace));
        if (doc && pred(*doc)) return doc;
        start = brace + 1;
    }
}

std::optional<int> integer_answer(const json& doc) {
    if (!doc.contains("answer")) return std::nullopt;
    const json& a = doc.at("answer");
    if (a.is_number_integer()) return a.get<int>();
    if (a.is_string()) {
        const std::string t = trim(a.get<std::string>());
        if (!t.empty() && std::all_of(t.begin(), t.end(), [](unsigned char c) {
                return std::isdigit(c) != 0;
            })) {
            return std::stoi(t);
        }
    }
    return std::nullopt;
}

}  // namespace

ExtractedAnswer extract_answer(const RunResult& run, const TaskSpec& spec,
                               std::size_t num_choices) {
    const std::string& text = run.final_answer;
    ExtractedAnswer answer;
    switch (spec.kind) {
        case TaskKind::MultipleChoice: {
            auto doc = find_payload(text, [](const json& d) {
                return integer_answer(d).has_value();
            });
            if (!doc) throw ExtractionError("no {\"answer\": <index>} payload in final answer");
            const int idx = *integer_answer(*doc);
            if (idx < 0 || (num_choices > 0 && static_cast<std::size_t>(idx) >= num_choices)) {
                throw ExtractionError("extracted answer index " + std::to_string(idx) +
                                      " outside " + std::to_string(num_choices) + " choices");
            }
            answer.index = idx;
            break;
        }
        case TaskKind::OpenQA: {
            auto doc = find_payload(text, [](const json& d) {
                return d.contains("answer") && d.at("answer").is_string();
            });
            if (!doc) throw ExtractionError("no {\"answer\": \"...\"} payload in final answer");
            answer.text = doc->at("answer").get<std::string>();
            break;
        }
        case TaskKind::AdHeadline: {
            auto doc = find_payload(text, [](const json& d) {
                return d.contains("Headline") && d.at("Headline").is_array();
            });
            if (!doc) throw ExtractionError("no {\"Headline\": [...]} payload in final answer");
            for (const json& h : doc->at("Headline")) {
                if (!h.is_string()) throw ExtractionError("Headline entries must be strings");
                answer.headlines.push_back(h.get<std::string>());
            }
            if (answer.headlines.empty()) throw ExtractionError("Headline list is empty");
            break;
        }
    }
    return answer;
}

ScriptLibrary ScriptLibrary::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("script library must be a JSON object");
    reject_unknown_keys(doc, {"strict", "default", "problems"}, "script library");
    ScriptLibrary lib;
    lib.strict_ = doc.value("strict", true);
    if (doc.contains("default")) {
        if (!doc.at("default").is_object()) {
            throw ConfigError("script library 'default' must be an object");
        }
        lib.default_script_ = doc.at("default");
    }
    if (doc.contains("problems")) {
        for (auto it = doc.at("problems").begin(); it != doc.at("problems").end(); ++it) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(it.key());
            } catch (const std::exception&) {
                throw ConfigError("script library problem key '" + it.key() +
                                  "' is not an index");
            }
            if (!it.value().is_object()) {
                throw ConfigError("script for problem " + it.key() + " must be an object");
            }
            lib.problem_scripts_[idx] = it.value();
        }
    }
    return lib;
}

ScriptLibrary ScriptLibrary::from_file(const std::string& path) {
    return from_json(json::parse(read_text_file(path, "script library")));
}

namespace {

void overlay_script(json& base, const json& layer) {
    for (auto it = layer.begin(); it != layer.end(); ++it) base[it.key()] = it.value();
}

}  // namespace

std::unique_ptr<ScriptedBackend> ScriptLibrary::make_backend(std::size_t problem,
                                                             int vote) const {
    json merged = default_script_;
    auto it = problem_scripts_.find(problem);
    if (it != problem_scripts_.end()) {
        const json& entry = it->second;
        if (entry.contains("script")) overlay_script(merged, entry.at("script"));
        if (entry.contains("votes")) {
            const json& votes = entry.at("votes");
            auto vit = votes.find(std::to_string(vote));
            if (vit != votes.end()) {
                overlay_script(merged, vit->contains("script") ? vit->at("script") : *vit);
            }
        }
    }

    auto backend = std::make_unique<ScriptedBackend>(strict_);
    for (auto mit = merged.begin(); mit != merged.end(); ++mit) {
        const std::string& label = mit.key();
        const json& value = mit.value();
        if (label == "*") {
            backend->set_default_response(value.get<std::string>());
        } else if (value.is_string()) {
            backend->set_label_default(label, value.get<std::string>());
        } else if (value.is_array()) {
            for (const json& r : value) backend->add_response(label, r.get<std::string>());
        } else {
            throw ConfigError("script entry for '" + label + "' must be a string or array");
        }
    }
    return backend;
}

void ExperimentConfig::validate() const {
    engine.validate();
    if (votes < 1) throw ConfigError("votes must be >= 1");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (max_problems < 0) throw ConfigError("max_problems must be >= 0");
}

json ExperimentConfig::to_json() const {
    // Fingerprint input: everything that changes results. Parallelism,
    // output location and resume mode deliberately excluded so reports stay
    // byte-identical across those knobs.
    json criteria = json::array();
    for (const Criterion& c : engine.criteria) {
        criteria.push_back({{"name", c.name}, {"description", c.description}});
    }
    json ablation = json::array();
    std::vector<std::string> flags;
    for (AblationFlag f : engine.ablation) flags.push_back(to_string(f));
    std::sort(flags.begin(), flags.end());
    for (const std::string& f : flags) ablation.push_back(f);
    return json{{"t_max", engine.t_max},
                {"threshold_mode",
                 engine.threshold_mode == ThresholdMode::Numeric ? "numeric" : "llm_judged"},
                {"m_threshold", engine.m_threshold},
                {"ablation", ablation},
                {"step_budget", engine.step_budget},
                {"parse_retries", engine.parse_retries},
                {"max_history_records", engine.max_history_records},
                {"model", engine.model},
                {"temperature", engine.temperature},
                {"max_tool_rounds", engine.max_tool_rounds},
                {"criteria", criteria},
                {"votes", votes},
                {"max_problems", max_problems}};
}

json ProblemOutcome::to_json() const {
    json doc{{"index", index},
             {"status", to_string(status)},
             {"detail", detail},
             {"answer_key", answer_key},
             {"answer_text", answer_text},
             {"correct", correct},
             {"ledger", ledger}};
    if (answer_index) doc["answer_index"] = *answer_index;
    if (!headlines.empty()) doc["headlines"] = headlines;
    return doc;
}

namespace {

ProblemOutcome outcome_from_json(const json& doc) {
    ProblemOutcome out;
    out.index = doc.at("index").get<std::size_t>();
    const std::string status = doc.at("status").get<std::string>();
    if (status == "scored") {
        out.status = ProblemStatus::Scored;
    } else if (status == "errored") {
        out.status = ProblemStatus::Errored;
    } else if (status == "skipped") {
        out.status = ProblemStatus::Skipped;
    } else {
        throw ConfigError("unknown outcome status: '" + status + "'");
    }
    out.detail = doc.value("detail", std::string{});
    out.answer_key = doc.value("answer_key", std::string{});
    out.answer_text = doc.value("answer_text", std::string{});
    out.correct = doc.value("correct", false);
    if (doc.contains("answer_index")) out.answer_index = doc.at("answer_index").get<int>();
    if (doc.contains("headlines")) {
        for (const json& h : doc.at("headlines")) out.headlines.push_back(h.get<std::string>());
    }
    if (doc.contains("ledger")) out.ledger = doc.at("ledger");
    return out;
}

}  // namespace

json ExperimentReport::to_json() const {
    json outcome_docs = json::array();
    for (const ProblemOutcome& o : outcomes) outcome_docs.push_back(o.to_json());
    json doc{{"task_id", task_id},
             {"config_fingerprint", config_fingerprint},
             {"scores", scores.to_json()},
             {"outcomes", outcome_docs},
             {"usage", aggregate_usage.to_json()}};
    if (estimated_cost) doc["estimated_cost_usd"] = estimated_cost->to_string();
    return doc;
}

std::string ExperimentReport::digest() const { return fnv1a_hex(to_json().dump()); }

namespace {

struct ProblemJob {
    const TaskSpec* spec;
    const ExperimentConfig* config;
    const BackendFactory* make_backend;
    const AgentGraph* graph;
    const PluginRegistry* plugins;
    const std::vector<ProblemInstance>* dataset;
};

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open for write: " + path.string());
    out << content;
    if (!out) throw StorageError("write failed: " + path.string());
}

ProblemOutcome run_one_problem(const ProblemJob& job, std::size_t index) {
    const TaskSpec& spec = *job.spec;
    const ExperimentConfig& config = *job.config;
    const ProblemInstance& instance = (*job.dataset)[index];

    ProblemOutcome out;
    out.index = index;

    fs::path problem_dir;
    const bool persist = !config.out_dir.empty();
    if (persist) {
        problem_dir = fs::path(config.out_dir) / ("p" + std::to_string(index));
        if (config.resume && fs::exists(problem_dir / "outcome.json")) {
            try {
                ProblemOutcome prior = outcome_from_json(
                    json::parse(read_text_file((problem_dir / "outcome.json").string(),
                                               "prior outcome")));
                if (prior.index == index) return prior;
            } catch (const std::exception&) {
                // Unreadable marker: fall through and redo the problem.
            }
        }
        fs::create_directories(problem_dir);
    }

    const std::string problem_text = build_initial_prompt(instance, spec);
    std::vector<ExtractedAnswer> vote_answers;
    CostLedger problem_usage;
    std::string extraction_note;

    for (int vote = 0; vote < config.votes; ++vote) {
        fs::path run_dir = problem_dir;
        if (persist && config.votes > 1) {
            run_dir = problem_dir / ("v" + std::to_string(vote));
            fs::create_directories(run_dir);
        }
        RefinementConfig engine_cfg = config.engine;
        engine_cfg.run_id = "p" + std::to_string(index) + "_v" + std::to_string(vote);

        auto store = persist ? std::make_unique<MemoryStore>((run_dir / "memory").string(),
                                                             engine_cfg.run_id)
                             : std::make_unique<MemoryStore>();
        std::unique_ptr<Backend> backend = (*job.make_backend)(index, vote);
        if (!backend) throw ConfigError("backend factory returned null");

        bool usage_merged = false;
        try {
            RunResult result = run_generate_refine(problem_text, *job.graph, engine_cfg,
                                                   *backend, *store, *job.plugins);
            problem_usage.merge(backend->ledger());
            usage_merged = true;
            if (persist) {
                write_file(run_dir / "transcript.jsonl", transcript_to_jsonl(result.transcript));
                write_file(run_dir / "result.json", result.to_json().dump(2) + "\n");
                write_file(run_dir / "ledger.json",
                           backend->ledger().to_json().dump(2) + "\n");
            }
            try {
                vote_answers.push_back(extract_answer(result, spec, instance.choices.size()));
            } catch (const ExtractionError& e) {
                extraction_note = e.what();
            }
        } catch (const Error& e) {
            if (!usage_merged) problem_usage.merge(backend->ledger());
            out.status = ProblemStatus::Errored;
            out.detail = e.what();
            out.ledger = problem_usage.to_json();
            if (persist) write_file(problem_dir / "outcome.json", out.to_json().dump(2) + "\n");
            return out;
        }
    }

    out.ledger = problem_usage.to_json();
    if (vote_answers.empty()) {
        // Every vote failed extraction. Multiple choice counts this as a
        // wrong answer; text tasks have nothing to score against.
        if (spec.kind == TaskKind::MultipleChoice) {
            out.status = ProblemStatus::Scored;
            out.correct = false;
        } else {
            out.status = ProblemStatus::Skipped;
        }
        out.detail = "extraction_failed: " + extraction_note;
    } else {
        std::vector<std::string> keys;
        keys.reserve(vote_answers.size());
        for (const ExtractedAnswer& a : vote_answers) keys.push_back(a.key());
        const std::string winner = metrics::majority_vote(keys);
        const ExtractedAnswer& chosen = *std::find_if(
            vote_answers.begin(), vote_answers.end(),
            [&](const ExtractedAnswer& a) { return a.key() == winner; });
        out.status = ProblemStatus::Scored;
        out.answer_key = winner;
        out.answer_index = chosen.index;
        out.answer_text = chosen.text;
        out.headlines = chosen.headlines;
        if (spec.kind == TaskKind::MultipleChoice) {
            out.correct = chosen.index && *chosen.index == instance.gold_index;
        }
    }
    if (persist) write_file(problem_dir / "outcome.json", out.to_json().dump(2) + "\n");
    return out;
}

void score_outcomes(const TaskSpec& spec, const std::vector<ProblemInstance>& dataset,
                    ExperimentReport& report) {
    const auto wanted = spec.effective_metrics();
    auto requested = [&](const char* id) {
        return std::find(wanted.begin(), wanted.end(), id) != wanted.end();
    };

    std::int64_t scored = 0;
    for (const ProblemOutcome& o : report.outcomes) {
        if (o.status == ProblemStatus::Scored) ++scored;
    }
    report.scores.n_total = scored;

    switch (spec.kind) {
        case TaskKind::MultipleChoice: {
            std::vector<int> predictions;
            std::vector<int> gold;
            for (const ProblemOutcome& o : report.outcomes) {
                if (o.status != ProblemStatus::Scored) continue;
                predictions.push_back(o.answer_index.value_or(-1));
                gold.push_back(dataset[o.index].gold_index);
                if (o.correct) ++report.scores.n_correct;
            }
            if (requested("accuracy") && !predictions.empty()) {
                report.scores.values["accuracy"] = metrics::accuracy(predictions, gold);
            }
            break;
        }
        case TaskKind::OpenQA: {
            std::vector<std::string> candidates;
            std::vector<std::string> references;
            double rouge_sum = 0.0;
            for (const ProblemOutcome& o : report.outcomes) {
                if (o.status != ProblemStatus::Scored) continue;
                const auto& refs = dataset[o.index].references;
                double best = 0.0;
                for (const std::string& ref : refs) {
                    best = std::max(best,
                                    metrics::rouge1_f1(o.answer_text, ref, spec.tokenizer));
                }
                rouge_sum += best;
                candidates.push_back(o.answer_text);
                references.push_back(refs.front());
            }
            if (!candidates.empty()) {
                if (requested("rouge1_f1")) {
                    report.scores.values["rouge1_f1"] =
                        rouge_sum / static_cast<double>(candidates.size());
                }
                if (requested("bleu4")) {
                    report.scores.values["bleu4"] =
                        metrics::bleu4(candidates, references, spec.tokenizer);
                }
            }
            break;
        }
        case TaskKind::AdHeadline: {
            std::vector<std::pair<std::string, std::int64_t>> items;
            for (const ProblemOutcome& o : report.outcomes) {
                if (o.status != ProblemStatus::Scored) continue;
                for (const std::string& h : o.headlines) {
                    items.emplace_back(h, spec.headline_limit);
                }
            }
            if (requested("ccv") && !items.empty()) {
                report.scores.values["ccv"] = metrics::ccv_rate(items);
            }
            break;
        }
    }
}

}  // namespace

ExperimentReport run_experiment(const TaskSpec& spec, const ExperimentConfig& config,
                                const BackendFactory& make_backend) {
    spec.validate();
    config.validate();
    if (!make_backend) throw ConfigError("backend factory is empty");

    std::vector<ProblemInstance> dataset = load_dataset(spec);
    if (config.max_problems > 0 &&
        dataset.size() > static_cast<std::size_t>(config.max_problems)) {
        dataset.resize(static_cast<std::size_t>(config.max_problems));
    }

    std::vector<std::string> banned_words;
    if (!spec.banned_words_path.empty()) banned_words = load_banned_words(spec.banned_words_path);
    PluginRegistry plugins = PluginRegistry::with_builtins(banned_words);

    const json team_json =
        config.team_config
            ? *config.team_config
            : default_two_team_config(std::max<std::size_t>(1, spec.evaluators.size()));
    const AgentGraph graph = build_graph(team_json, plugins.id_set());

    ExperimentConfig effective = config;
    if (effective.engine.criteria.empty()) effective.engine.criteria = spec.evaluators;
    effective.validate();

    ExperimentReport report;
    report.task_id = spec.task_id;
    report.config_fingerprint = fnv1a_hex(
        json{{"task", spec.task_id}, {"config", effective.to_json()}, {"team", team_json}}
            .dump());

    if (!effective.out_dir.empty()) fs::create_directories(effective.out_dir);

    ProblemJob job{&spec, &effective, &make_backend, &graph, &plugins, &dataset};
    std::vector<ProblemOutcome> outcomes(dataset.size());

    const int workers =
        std::min<int>(effective.parallelism, static_cast<int>(dataset.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < dataset.size(); ++i) outcomes[i] = run_one_problem(job, i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> worker_errors(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    while (true) {
                        const std::size_t i = next.fetch_add(1);
                        if (i >= dataset.size()) break;
                        outcomes[i] = run_one_problem(job, i);
                    }
                } catch (...) {
                    worker_errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (std::thread& t : pool) t.join();
        for (const std::exception_ptr& e : worker_errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    report.outcomes = std::move(outcomes);
    for (const ProblemOutcome& o : report.outcomes) {
        if (!o.ledger.is_null() && !o.ledger.empty()) {
            report.aggregate_usage.merge(CostLedger::from_json(o.ledger));
        }
    }
    score_outcomes(spec, dataset, report);
    if (!effective.prices.empty()) {
        report.estimated_cost = estimate_cost(report.aggregate_usage, effective.prices);
    }

    if (!effective.out_dir.empty()) {
        write_file(fs::path(effective.out_dir) / "report.json",
                   report.to_json().dump(2) + "\n");
    }
    return report;
}

json load_report(const std::string& out_dir) {
    return json::parse(
        read_text_file((fs::path(out_dir) / "report.json").string(), "report"));
}

}  // namespace hiercomm
