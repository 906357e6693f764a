#pragma once

// Shared helpers for the test binaries: a prompt-recording scripted
// backend, throwaway directories, canned team scripts and a tiny
// subprocess runner for CLI checks.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomm/backend.hpp"
#include "hiercomm/engine.hpp"

namespace testsupport {

// Scripted backend that also keeps every prompt it was shown, per label,
// so tests can assert on what each agent actually saw.
class RecordingBackend : public hiercomm::ScriptedBackend {
public:
    explicit RecordingBackend(bool strict = true) : ScriptedBackend(strict) {}

    std::vector<std::string> prompts(const std::string& label) const {
        std::lock_guard lock(mutex_);
        auto it = prompts_.find(label);
        return it == prompts_.end() ? std::vector<std::string>{} : it->second;
    }

    std::map<std::string, std::vector<std::string>> all_prompts() const {
        std::lock_guard lock(mutex_);
        return prompts_;
    }

protected:
    hiercomm::CompletionResponse do_complete(const hiercomm::CompletionRequest& req) override {
        {
            std::lock_guard lock(mutex_);
            prompts_[req.agent_label].push_back(req.user_text);
        }
        return ScriptedBackend::do_complete(req);
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<std::string>> prompts_;
};

class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 rng(std::random_device{}());
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto candidate = base / ("hiercomm_test_" + std::to_string(rng()));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create a temp directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// A supervisor reply in the five-field wire format.
inline std::string supervisor_json(const std::string& thoughts, const std::string& next,
                                   const std::string& messages, const std::string& background,
                                   const std::string& intermediate_output) {
    nlohmann::json doc{{"thoughts", thoughts},
                       {"next", next},
                       {"messages", messages},
                       {"background", background},
                       {"intermediate_output", intermediate_output}};
    return doc.dump();
}

inline std::string evaluator_json(double score, const std::string& feedback) {
    return nlohmann::json{{"score", score}, {"feedback", feedback}}.dump();
}

// Scripts a full refinement over the default two-team graph with
// k evaluators: per-iteration evaluator scores, then fixed revisor texts.
// Extra turns fall back to label defaults.
inline void script_refinement(hiercomm::ScriptedBackend& backend, int k,
                              const std::vector<std::vector<double>>& scores_per_iteration,
                              const std::vector<std::string>& revisions) {
    for (std::size_t it = 0; it < scores_per_iteration.size(); ++it) {
        for (int e = 0; e < k; ++e) {
            const double score = scores_per_iteration[it][static_cast<std::size_t>(e)];
            backend.set_response("evaluator_" + std::to_string(e + 1), it,
                                 evaluator_json(score, "iteration " + std::to_string(it + 1) +
                                                           " assessment"));
        }
    }
    backend.set_label_default("eval_supervisor", "Combined evaluation summary.");
    for (std::size_t r = 0; r < revisions.size(); ++r) {
        backend.set_response("revisor", r, revisions[r]);
    }
}

#ifdef HIERCOMM_CLI_PATH

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

inline std::string shell_quote(const std::string& arg) {
    std::string quoted = "'";
    for (char c : arg) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted += c;
        }
    }
    quoted += "'";
    return quoted;
}

inline CliResult run_cli(const std::vector<std::string>& args) {
    std::string command = shell_quote(HIERCOMM_CLI_PATH);
    for (const std::string& a : args) command += " " + shell_quote(a);
    command += " 2>&1";

    CliResult result;
    FILE* pipe = popen(command.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed for: " + command);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        result.output.append(buf.data(), n);
    }
    const int status = pclose(pipe);
    result.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    return result;
}

#endif  // HIERCOMM_CLI_PATH

}  // namespace testsupport
