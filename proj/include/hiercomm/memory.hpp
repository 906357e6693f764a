#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hiercomm/agent_graph.hpp"
#include "hiercomm/errors.hpp"

namespace hiercomm {

enum class RecordKind { Received, Sent, Thought, ToolCall, ToolResult };

std::string to_string(RecordKind kind);
RecordKind record_kind_from_string(const std::string& text);

struct MemoryRecord {
    AgentId agent;
    std::int64_t seq = 0;
    RecordKind kind = RecordKind::Received;
    std::string content;
    std::string run_id;
    std::int64_t timestep = 0;

    bool operator==(const MemoryRecord&) const = default;
};

// Append-only per-agent conversation history. Each agent's records are kept
// strictly separate; history(a) never returns another agent's records.
// Optionally backed by one line-delimited log file per agent so that
// histories survive a process restart.
class MemoryStore {
public:
    // In-memory only, nothing written to disk.
    MemoryStore() = default;

    // Persistent store rooted at `dir` (created if missing). Existing agent
    // logs under `dir` are loaded and sequence numbers continue from the
    // persisted maximum.
    MemoryStore(std::filesystem::path dir, std::string run_id);

    MemoryStore(const MemoryStore&) = delete;
    MemoryStore& operator=(const MemoryStore&) = delete;

    // Idempotent. Agents must be registered before append/history.
    void register_agent(const AgentId& agent);
    bool has_agent(const AgentId& agent) const;

    // Assigns the next per-agent seq, stores the record and, when persistent,
    // flushes one log line. record.seq on input is ignored.
    std::int64_t append(MemoryRecord record);

    // Copy of this agent's records in seq order.
    std::vector<MemoryRecord> history(const AgentId& agent) const;

    std::size_t record_count(const AgentId& agent) const;
    std::size_t total_records() const;

    const std::string& run_id() const { return run_id_; }
    bool persistent() const { return !dir_.empty(); }
    const std::filesystem::path& dir() const { return dir_; }

private:
    struct AgentLog {
        std::vector<MemoryRecord> records;
        std::int64_t next_seq = 0;
        std::ofstream out;  // open only when persistent
    };

    std::filesystem::path log_path(const AgentId& agent) const;
    void load_agent_log(const AgentId& agent, AgentLog& log);

    mutable std::mutex mutex_;
    std::map<AgentId, AgentLog> agents_;
    std::filesystem::path dir_;
    std::string run_id_;
};

}  // namespace hiercomm
