#include "hiercomm/agent_graph.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hiercomm/text.hpp"

namespace hiercomm {

using nlohmann::json;

std::string to_string(AgentType type) {
    return type == AgentType::Supervisor ? "supervisor" : "member";
}

AgentType agent_type_from_string(const std::string& text) {
    if (iequals(text, "supervisor")) return AgentType::Supervisor;
    if (iequals(text, "member")) return AgentType::Member;
    throw ConfigError("unknown agent type: '" + text + "'");
}

const AgentSpec& AgentGraph::agent(const AgentId& id) const {
    auto it = agents_.find(id);
    if (it == agents_.end()) throw UnknownAgentError("unknown agent: '" + id + "'");
    return it->second;
}

bool AgentGraph::has_agent(const AgentId& id) const { return agents_.count(id) != 0; }

const Team& AgentGraph::team(const TeamId& id) const {
    auto it = teams_.find(id);
    if (it == teams_.end()) throw ConfigError("unknown team: '" + id + "'");
    return it->second;
}

const Team& AgentGraph::root_team() const { return team(root_team_); }

bool AgentGraph::has_edge(const AgentId& from, const AgentId& to) const {
    return edges_.count({from, to}) != 0;
}

std::vector<AgentId> AgentGraph::neighbors(const AgentId& id) const {
    agent(id);  // throws UnknownAgentError
    std::vector<AgentId> out;
    for (const TeamId& tid : team_order_) {
        const Team& t = teams_.at(tid);
        if (t.supervisor == id) {
            out.insert(out.end(), t.members.begin(), t.members.end());
        } else if (std::find(t.members.begin(), t.members.end(), id) != t.members.end()) {
            out.push_back(t.supervisor);
        }
    }
    return out;
}

const Team* AgentGraph::supervised_team(const AgentId& id) const {
    for (const TeamId& tid : team_order_) {
        const Team& t = teams_.at(tid);
        if (t.supervisor == id) return &t;
    }
    return nullptr;
}

std::string AgentGraph::digest() const {
    json doc;
    doc["agents"] = json::array();
    for (const AgentId& id : agent_order_) {
        const AgentSpec& a = agents_.at(id);
        doc["agents"].push_back({{"id", a.id},
                                 {"role", a.role},
                                 {"plugins", a.plugins},
                                 {"type", to_string(a.type)},
                                 {"team", a.team}});
    }
    doc["teams"] = json::array();
    for (const TeamId& tid : team_order_) {
        const Team& t = teams_.at(tid);
        doc["teams"].push_back({{"id", t.id}, {"supervisor", t.supervisor}, {"members", t.members}});
    }
    json edges = json::array();
    for (const auto& [from, to] : edges_) edges.push_back({from, to});
    doc["edges"] = std::move(edges);
    return fnv1a_hex(doc.dump());
}

namespace {

bool valid_id_token(const std::string& id) {
    if (id.empty()) return false;
    for (unsigned char c : id) {
        if (!(std::isalnum(c) || c == '_' || c == '-' || c == '.')) return false;
    }
    return true;
}

void reject_unknown_fields(const json& obj, std::initializer_list<const char*> allowed,
                           const std::string& context) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return it.key() == k; }) == allowed.end()) {
            throw ConfigError("unknown field '" + it.key() + "' in " + context);
        }
    }
}

}  // namespace

AgentGraph build_graph(const json& config, const std::set<std::string>& known_plugins) {
    if (!config.is_object()) throw ConfigError("team config must be a JSON object");
    reject_unknown_fields(config, {"agents", "teams"}, "team config");
    if (!config.contains("agents") || !config.contains("teams")) {
        throw ConfigError("team config requires 'agents' and 'teams'");
    }

    AgentGraph g;

    for (const json& a : config.at("agents")) {
        if (!a.is_object()) throw ConfigError("agent entry must be an object");
        reject_unknown_fields(a, {"id", "type", "role", "plugins"}, "agent entry");
        AgentSpec spec;
        spec.id = a.at("id").get<std::string>();
        if (!valid_id_token(spec.id)) {
            throw ConfigError("invalid agent id: '" + spec.id + "'");
        }
        if (spec.id == kUserNode) {
            throw ConfigError("agent id '" + std::string(kUserNode) + "' is reserved");
        }
        spec.type = agent_type_from_string(a.at("type").get<std::string>());
        spec.role = a.value("role", std::string{});
        if (a.contains("plugins")) {
            for (const json& p : a.at("plugins")) {
                spec.plugins.push_back(p.get<std::string>());
            }
        }
        for (const std::string& p : spec.plugins) {
            if (known_plugins.count(p) == 0) {
                throw ConfigError("agent '" + spec.id + "' references unknown plugin '" + p + "'");
            }
        }
        if (g.agents_.count(spec.id) != 0) {
            throw ConfigError("duplicate agent id: '" + spec.id + "'");
        }
        g.agent_order_.push_back(spec.id);
        g.agents_.emplace(spec.id, std::move(spec));
    }
    if (g.agent_order_.empty()) throw ConfigError("team config declares no agents");

    std::map<AgentId, TeamId> member_of;
    std::map<AgentId, TeamId> supervises;
    for (const json& t : config.at("teams")) {
        if (!t.is_object()) throw ConfigError("team entry must be an object");
        reject_unknown_fields(t, {"id", "supervisor", "members"}, "team entry");
        Team team;
        team.id = t.at("id").get<std::string>();
        if (!valid_id_token(team.id)) throw ConfigError("invalid team id: '" + team.id + "'");
        if (g.teams_.count(team.id) != 0) throw ConfigError("duplicate team id: '" + team.id + "'");
        team.supervisor = t.at("supervisor").get<std::string>();
        if (g.agents_.count(team.supervisor) == 0) {
            throw ConfigError("team '" + team.id + "' names missing supervisor '" + team.supervisor + "'");
        }
        if (g.agents_.at(team.supervisor).type != AgentType::Supervisor) {
            throw ConfigError("supervisor of team '" + team.id + "' must have supervisor type");
        }
        if (supervises.count(team.supervisor) != 0) {
            throw ConfigError("agent '" + team.supervisor + "' supervises more than one team");
        }
        for (const json& m : t.at("members")) {
            AgentId member = m.get<std::string>();
            if (g.agents_.count(member) == 0) {
                throw ConfigError("team '" + team.id + "' names missing member '" + member + "'");
            }
            if (member == team.supervisor) {
                throw ConfigError("supervisor '" + member + "' listed among members of its own team '" +
                                  team.id + "'");
            }
            if (std::find(team.members.begin(), team.members.end(), member) != team.members.end()) {
                throw ConfigError("duplicate member '" + member + "' in team '" + team.id + "'");
            }
            if (member_of.count(member) != 0) {
                throw ConfigError("agent '" + member + "' is a member of more than one team");
            }
            member_of[member] = team.id;
            team.members.push_back(std::move(member));
        }
        if (team.members.empty()) throw ConfigError("team '" + team.id + "' has no members");
        supervises[team.supervisor] = team.id;
        g.team_order_.push_back(team.id);
        g.teams_.emplace(team.id, std::move(team));
    }
    if (g.team_order_.empty()) throw ConfigError("team config declares no teams");

    for (const AgentId& id : g.agent_order_) {
        const bool in_team = member_of.count(id) != 0;
        const bool leads_team = supervises.count(id) != 0;
        if (!in_team && !leads_team) {
            throw ConfigError("agent '" + id + "' is not part of any team");
        }
        AgentSpec& spec = g.agents_.at(id);
        spec.team = in_team ? member_of.at(id) : supervises.at(id);
    }

    // Supervision must be acyclic: follow each team's supervisor up through
    // the team it is a member of.
    for (const TeamId& start : g.team_order_) {
        std::set<TeamId> seen;
        TeamId current = start;
        while (true) {
            if (!seen.insert(current).second) {
                throw ConfigError("cyclic supervision involving team '" + current + "'");
            }
            const AgentId& sup = g.teams_.at(current).supervisor;
            auto it = member_of.find(sup);
            if (it == member_of.end()) break;
            current = it->second;
        }
    }

    std::vector<TeamId> roots;
    for (const TeamId& tid : g.team_order_) {
        if (member_of.count(g.teams_.at(tid).supervisor) == 0) roots.push_back(tid);
    }
    if (roots.size() != 1) {
        throw ConfigError("expected exactly one root team, found " + std::to_string(roots.size()));
    }
    g.root_team_ = roots.front();

    for (const TeamId& tid : g.team_order_) {
        const Team& t = g.teams_.at(tid);
        for (const AgentId& m : t.members) {
            g.edges_.insert({t.supervisor, m});
            g.edges_.insert({m, t.supervisor});
        }
    }
    return g;
}

json default_two_team_config(int k_evaluators) {
    if (k_evaluators < 1) throw ConfigError("k_evaluators must be >= 1");
    json agents = json::array();
    agents.push_back({{"id", "main_supervisor"},
                      {"type", "supervisor"},
                      {"role", "Oversees the main team, routes work between members and decides "
                               "when the final output is ready."},
                      {"plugins", json::array()}});
    agents.push_back({{"id", "generator"},
                      {"type", "member"},
                      {"role", "Produces a candidate answer for the given problem."},
                      {"plugins", json::array({"output_tool"})}});
    agents.push_back({{"id", "eval_supervisor"},
                      {"type", "supervisor"},
                      {"role", "Leads the evaluation team: distributes criteria to evaluators and "
                               "synthesizes their feedback into one report."},
                      {"plugins", json::array()}});
    agents.push_back({{"id", "revisor"},
                      {"type", "member"},
                      {"role", "Revises the candidate answer so that it addresses every point in "
                               "the evaluation feedback."},
                      {"plugins", json::array({"output_tool"})}});
    json members = json::array({"generator", "eval_supervisor", "revisor"});
    json eval_members = json::array();
    for (int i = 1; i <= k_evaluators; ++i) {
        std::string id = "evaluator_" + std::to_string(i);
        agents.push_back({{"id", id},
                          {"type", "member"},
                          {"role", "Scores the candidate answer against one assigned criterion and "
                                   "reports detailed feedback."},
                          {"plugins", json::array({"output_tool"})}});
        eval_members.push_back(id);
    }
    json teams = json::array();
    teams.push_back({{"id", "main"}, {"supervisor", "main_supervisor"}, {"members", members}});
    teams.push_back({{"id", "eval"}, {"supervisor", "eval_supervisor"}, {"members", eval_members}});
    return json{{"agents", agents}, {"teams", teams}};
}

}  // namespace hiercomm
