#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hiercomm/backend.hpp"
#include "hiercomm/cost.hpp"
#include "hiercomm/engine.hpp"
#include "hiercomm/errors.hpp"
#include "hiercomm/harness.hpp"
#include "hiercomm/metrics.hpp"

namespace {

using hiercomm::ConfigError;
using nlohmann::json;

std::string slurp(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct RunArgs {
    std::string task_path;
    std::string backend_kind = "scripted";
    std::string config_path;
    std::string script_path;
    std::string out_dir;
    std::string prices_path;
    std::string base_url;
    std::vector<std::string> ablation;
    int votes = 1;
    int parallel = 1;
    int max_problems = 0;
    bool resume = false;
};

int do_run(const RunArgs& args) {
    hiercomm::TaskSpec spec = hiercomm::TaskSpec::from_file(args.task_path);

    json config_doc = json::object();
    if (!args.config_path.empty()) {
        config_doc = json::parse(slurp(args.config_path, "engine config"));
    }
    const bool nested = config_doc.contains("engine");
    hiercomm::ExperimentConfig config;
    config.engine = hiercomm::refinement_config_from_json(
        nested ? config_doc.at("engine") : config_doc);
    for (const std::string& flag : args.ablation) {
        config.engine.ablation.insert(hiercomm::ablation_from_string(flag));
    }
    config.votes = args.votes;
    config.parallelism = args.parallel;
    config.out_dir = args.out_dir;
    config.resume = args.resume;
    config.max_problems = args.max_problems;
    if (nested && config_doc.contains("team")) config.team_config = config_doc.at("team");
    if (!args.prices_path.empty()) {
        config.prices =
            hiercomm::price_table_from_json(json::parse(slurp(args.prices_path, "price table")));
    } else if (nested && config_doc.contains("prices")) {
        config.prices = hiercomm::price_table_from_json(config_doc.at("prices"));
    }

    hiercomm::BackendFactory factory;
    if (args.backend_kind == "scripted") {
        if (args.script_path.empty()) {
            throw ConfigError("the scripted backend needs --script <library.json>");
        }
        auto library = std::make_shared<hiercomm::ScriptLibrary>(
            hiercomm::ScriptLibrary::from_file(args.script_path));
        factory = [library](std::size_t problem, int vote) -> std::unique_ptr<hiercomm::Backend> {
            return library->make_backend(problem, vote);
        };
    } else {
        hiercomm::HttpBackendConfig http;
        http.base_url = args.base_url.empty() ? "https://api.openai.com" : args.base_url;
        factory = [http](std::size_t, int) -> std::unique_ptr<hiercomm::Backend> {
            return std::make_unique<hiercomm::HttpBackend>(http);
        };
    }

    hiercomm::ExperimentReport report = hiercomm::run_experiment(spec, config, factory);
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

// Candidate column (the last one) against the mean of all other raters,
// row by row.
std::pair<std::vector<double>, std::vector<double>> split_candidate(
    const hiercomm::metrics::RatingsMatrix& matrix) {
    std::vector<double> others_mean;
    std::vector<double> candidate;
    const std::size_t k = matrix.raters();
    for (std::size_t s = 0; s < matrix.subjects(); ++s) {
        double sum = 0.0;
        for (std::size_t r = 0; r + 1 < k; ++r) sum += matrix.at(s, r);
        others_mean.push_back(sum / static_cast<double>(k - 1));
        candidate.push_back(matrix.at(s, k - 1));
    }
    return {others_mean, candidate};
}

int do_stats(const std::string& which, const std::string& ratings_path) {
    const auto matrix =
        hiercomm::metrics::RatingsMatrix::from_csv(slurp(ratings_path, "ratings csv"));
    if (which == "icc") {
        std::printf("icc_2_1 %.12f\n",
                    hiercomm::metrics::icc(matrix, hiercomm::metrics::IccForm::TwoOneAbsolute));
        std::printf("icc_2_k %.12f\n",
                    hiercomm::metrics::icc(matrix, hiercomm::metrics::IccForm::TwoKAbsolute));
        return 0;
    }
    if (matrix.raters() < 2) throw ConfigError("need at least 2 rater columns");
    auto [others, candidate] = split_candidate(matrix);
    if (which == "pearson") {
        std::printf("pearson %.12f\n", hiercomm::metrics::pearson(others, candidate));
    } else {
        std::printf("spearman %.12f\n", hiercomm::metrics::spearman(others, candidate));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hiercomm: hierarchical multi-agent refinement benchmark runner"};
    app.require_subcommand(1);

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "Run a task's dataset through the engine");
    run->add_option("--task", run_args.task_path, "Task spec JSON file")->required();
    run->add_option("--backend", run_args.backend_kind, "Completion provider")
        ->check(CLI::IsMember({"live", "scripted"}));
    run->add_option("--config", run_args.config_path, "Engine config JSON file");
    run->add_option("--script", run_args.script_path, "Script library for the scripted backend");
    run->add_option("--votes", run_args.votes, "Independent runs per problem, majority voted");
    run->add_option("--ablation", run_args.ablation, "Ablation flags")->delimiter(',');
    run->add_option("--parallel", run_args.parallel, "Concurrent problems");
    run->add_option("--out", run_args.out_dir, "Run directory for transcripts and reports");
    run->add_flag("--resume", run_args.resume, "Skip problems already completed in --out");
    run->add_option("--prices", run_args.prices_path, "Model price table JSON");
    run->add_option("--base-url", run_args.base_url, "Live backend base URL");
    run->add_option("--max-problems", run_args.max_problems, "Cap on dataset size (0 = all)");

    std::string score_dir;
    CLI::App* score = app.add_subcommand("score", "Print the scores of a finished run");
    score->add_option("--run-dir", score_dir, "Directory passed to run --out")->required();

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "Print a finished run's full report");
    report->add_option("--run-dir", report_dir, "Directory passed to run --out")->required();

    CLI::App* stats = app.add_subcommand("stats", "Rating agreement statistics over a CSV");
    stats->require_subcommand(1);
    std::string ratings_path;
    for (const char* name : {"icc", "pearson", "spearman"}) {
        CLI::App* sub = stats->add_subcommand(
            name, std::string(name) + " over a ratings matrix (header row = rater ids)");
        sub->add_option("--ratings", ratings_path, "Ratings CSV file")->required();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return do_run(run_args);
        if (score->parsed()) {
            std::cout << hiercomm::load_report(score_dir).at("scores").dump(2) << "\n";
            return 0;
        }
        if (report->parsed()) {
            std::cout << hiercomm::load_report(report_dir).dump(2) << "\n";
            return 0;
        }
        if (stats->parsed()) {
            return do_stats(stats->get_subcommands().front()->get_name(), ratings_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
