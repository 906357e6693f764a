#include "hiercomm/memory.hpp"

#include <nlohmann/json.hpp>

#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

std::string to_string(RecordKind kind) {
    switch (kind) {
        case RecordKind::Received: return "received";
        case RecordKind::Sent: return "sent";
        case RecordKind::Thought: return "thought";
        case RecordKind::ToolCall: return "tool_call";
        case RecordKind::ToolResult: return "tool_result";
    }
    throw Error("unreachable record kind");
}

RecordKind record_kind_from_string(const std::string& text) {
    if (text == "received") return RecordKind::Received;
    if (text == "sent") return RecordKind::Sent;
    if (text == "thought") return RecordKind::Thought;
    if (text == "tool_call") return RecordKind::ToolCall;
    if (text == "tool_result") return RecordKind::ToolResult;
    throw ParseError("unknown record kind: '" + text + "'", text);
}

MemoryStore::MemoryStore(std::filesystem::path dir, std::string run_id)
    : dir_(std::move(dir)), run_id_(std::move(run_id)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StorageError("cannot create memory dir '" + dir_.string() + "': " + ec.message());
}

std::filesystem::path MemoryStore::log_path(const AgentId& agent) const {
    return dir_ / (agent + ".log");
}

void MemoryStore::load_agent_log(const AgentId& agent, AgentLog& log) {
    const auto path = log_path(agent);
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        if (!in) throw StorageError("cannot open memory log '" + path.string() + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            json doc;
            try {
                doc = json::parse(line);
            } catch (const json::exception& e) {
                throw StorageError("corrupt memory log '" + path.string() + "': " + e.what());
            }
            MemoryRecord rec;
            rec.agent = agent;
            rec.seq = doc.at("seq").get<std::int64_t>();
            rec.kind = record_kind_from_string(doc.at("kind").get<std::string>());
            rec.timestep = doc.at("timestep").get<std::int64_t>();
            rec.content = doc.at("content").get<std::string>();
            // Records keep the run that wrote them; logs from before the
            // field existed fall back to the store's current run id.
            rec.run_id = doc.value("run_id", run_id_);
            if (rec.seq != log.next_seq) {
                throw StorageError("memory log '" + path.string() + "' has seq " +
                                   std::to_string(rec.seq) + ", expected " +
                                   std::to_string(log.next_seq));
            }
            log.records.push_back(std::move(rec));
            ++log.next_seq;
        }
    }
    log.out.open(path, std::ios::app);
    if (!log.out) throw StorageError("cannot open memory log '" + path.string() + "' for append");
}

void MemoryStore::register_agent(const AgentId& agent) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = agents_.try_emplace(agent);
    if (inserted && persistent()) load_agent_log(agent, it->second);
}

bool MemoryStore::has_agent(const AgentId& agent) const {
    std::lock_guard lock(mutex_);
    return agents_.count(agent) != 0;
}

std::int64_t MemoryStore::append(MemoryRecord record) {
    std::lock_guard lock(mutex_);
    auto it = agents_.find(record.agent);
    if (it == agents_.end()) {
        throw UnknownAgentError("append for unregistered agent: '" + record.agent + "'");
    }
    AgentLog& log = it->second;
    record.seq = log.next_seq++;
    if (record.run_id.empty()) record.run_id = run_id_;
    if (persistent()) {
        json doc{{"seq", record.seq},
                 {"kind", to_string(record.kind)},
                 {"timestep", record.timestep},
                 {"content", record.content},
                 {"run_id", record.run_id}};
        log.out << doc.dump() << '\n';
        log.out.flush();
        if (!log.out) {
            throw StorageError("write failed on memory log for agent '" + record.agent + "'");
        }
    }
    const std::int64_t seq = record.seq;
    log.records.push_back(std::move(record));
    return seq;
}

std::vector<MemoryRecord> MemoryStore::history(const AgentId& agent) const {
    std::lock_guard lock(mutex_);
    auto it = agents_.find(agent);
    if (it == agents_.end()) {
        throw UnknownAgentError("history for unregistered agent: '" + agent + "'");
    }
    return it->second.records;
}

std::size_t MemoryStore::record_count(const AgentId& agent) const {
    std::lock_guard lock(mutex_);
    auto it = agents_.find(agent);
    if (it == agents_.end()) {
        throw UnknownAgentError("record_count for unregistered agent: '" + agent + "'");
    }
    return it->second.records.size();
}

std::size_t MemoryStore::total_records() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [_, log] : agents_) n += log.records.size();
    return n;
}

}  // namespace hiercomm
