#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hiercomm/errors.hpp"

namespace hiercomm {

using AgentId = std::string;
using TeamId = std::string;

// Reserved sender/recipient id for the boundary of a run (the initial problem
// delivery and the final report). Never a real agent.
inline constexpr const char* kUserNode = "user";

enum class AgentType { Supervisor, Member };

std::string to_string(AgentType type);
AgentType agent_type_from_string(const std::string& text);

struct AgentSpec {
    AgentId id;
    std::string role;
    std::vector<std::string> plugins;
    AgentType type = AgentType::Member;
    // Team this agent belongs to as a member. The root supervisor belongs to
    // no team, so it carries the id of the team it supervises.
    TeamId team;
};

struct Team {
    TeamId id;
    AgentId supervisor;
    std::vector<AgentId> members;
};

// Fixed communication topology: teams of one supervisor plus members, edges
// between a supervisor and each of its members in both directions. Immutable
// once built; safe to share across concurrent runs.
class AgentGraph {
public:
    const AgentSpec& agent(const AgentId& id) const;
    bool has_agent(const AgentId& id) const;
    const Team& team(const TeamId& id) const;
    const Team& root_team() const;

    // Declaration order from the config document.
    const std::vector<AgentId>& agent_order() const { return agent_order_; }
    const std::vector<TeamId>& team_order() const { return team_order_; }

    bool has_edge(const AgentId& from, const AgentId& to) const;
    const std::set<std::pair<AgentId, AgentId>>& edges() const { return edges_; }

    // Agents one directed edge away, in config declaration order.
    std::vector<AgentId> neighbors(const AgentId& id) const;

    // Team supervised by `id`, or nullptr when `id` supervises none.
    const Team* supervised_team(const AgentId& id) const;

    std::size_t agent_count() const { return agent_order_.size(); }

    // Stable content hash over agents, teams and edges. Equal digests before
    // and after a run witness that the graph was not mutated.
    std::string digest() const;

private:
    friend AgentGraph build_graph(const nlohmann::json& config,
                                  const std::set<std::string>& known_plugins);

    std::map<AgentId, AgentSpec> agents_;
    std::map<TeamId, Team> teams_;
    std::vector<AgentId> agent_order_;
    std::vector<TeamId> team_order_;
    std::set<std::pair<AgentId, AgentId>> edges_;
    TeamId root_team_;
};

// Validates and builds the graph from a config document of the form
//   { "agents": [ {"id", "type", "role", "plugins"} ... ],
//     "teams":  [ {"id", "supervisor", "members"} ... ] }
// Unknown fields are rejected. Every plugin id must be present in
// `known_plugins`. Throws ConfigError on any violation.
AgentGraph build_graph(const nlohmann::json& config,
                       const std::set<std::string>& known_plugins);

// Two-team structure: a main team (supervisor, generator, evaluation
// supervisor, revisor) and an evaluation team of k evaluators led by the
// evaluation supervisor.
nlohmann::json default_two_team_config(int k_evaluators);

}  // namespace hiercomm
