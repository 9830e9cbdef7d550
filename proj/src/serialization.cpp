#include "cdpg/serialization.hpp"

#include "json.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace cdpg {

using nlohmann::json;

namespace {

json distribution_json(const SupportGrid& grid, std::span<const double> probs)
{
    return {{"z_min", grid.z_min()},
            {"z_max", grid.z_max()},
            {"n_atoms", grid.size()},
            {"probs", std::vector<double>(probs.begin(), probs.end())}};
}

CategoricalDistribution distribution_from(const json& j)
{
    const SupportGrid grid(j.at("z_min").get<double>(), j.at("z_max").get<double>(),
                           j.at("n_atoms").get<std::size_t>());
    return {grid, j.at("probs").get<std::vector<double>>()};
}

std::pair<std::size_t, std::size_t> parse_key(const std::string& key)
{
    const auto colon = key.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("table key '" + key + "' is not of the form s:a");
    return {std::stoul(key.substr(0, colon)), std::stoul(key.substr(colon + 1))};
}

json parse(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
    }
}

// Missing keys and wrong value types surface as invalid_argument like every other format error.
template <typename F>
auto decode(const char* what, F&& body)
{
    try {
        return body();
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string(what) + ": " + e.what());
    }
}

ReturnDistributionTable table_from(const json& j)
{
    if (!j.is_object() || j.empty())
        throw std::invalid_argument("return table JSON must be a non-empty object");
    std::map<std::pair<std::size_t, std::size_t>, CategoricalDistribution> entries;
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    for (const auto& [key, value] : j.items()) {
        const auto sa = parse_key(key);
        n_states = std::max(n_states, sa.first + 1);
        n_actions = std::max(n_actions, sa.second + 1);
        entries.emplace(sa, distribution_from(value));
    }
    if (entries.size() != n_states * n_actions)
        throw std::invalid_argument("return table JSON is missing (s, a) entries");
    ReturnDistributionTable table(entries.begin()->second.grid(), n_states, n_actions);
    for (const auto& [sa, dist] : entries)
        table.set_entry(sa.first, sa.second, dist);
    return table;
}

TabularMdp mdp_from(const json& j)
{
    const auto n = j.at("n_states").get<std::size_t>();
    const auto m = j.at("n_actions").get<std::size_t>();
    const auto& tj = j.at("transition");
    const auto& cj = j.at("cost");
    if (tj.size() != n || cj.size() != n)
        throw std::invalid_argument("MDP JSON: transition/cost must have n_states rows");
    std::vector<double> transition(n * m * n);
    std::vector<double> cost(n * m * n);
    for (std::size_t s = 0; s < n; ++s) {
        if (tj[s].size() != m || cj[s].size() != m)
            throw std::invalid_argument("MDP JSON: each state needs n_actions entries");
        for (std::size_t a = 0; a < m; ++a) {
            const auto probs = tj[s][a].get<std::vector<double>>();
            if (probs.size() != n)
                throw std::invalid_argument("MDP JSON: transition rows need n_states entries");
            for (std::size_t next = 0; next < n; ++next) {
                const std::size_t k = (s * m + a) * n + next;
                transition[k] = probs[next];
                if (cj[s][a].is_array()) {
                    if (cj[s][a].size() != n)
                        throw std::invalid_argument("MDP JSON: cost rows need n_states entries");
                    cost[k] = cj[s][a][next].get<double>();
                } else {
                    cost[k] = cj[s][a].get<double>();
                }
            }
        }
    }
    return {n,
            m,
            std::move(transition),
            std::move(cost),
            j.at("gamma").get<double>(),
            j.value("terminals", std::vector<std::size_t>{})};
}

SoftmaxPolicy policy_from(const json& j)
{
    const auto& rows = j.at("theta");
    if (!rows.is_array() || rows.empty())
        throw std::invalid_argument("policy JSON needs a non-empty theta matrix");
    const std::size_t n = rows.size();
    const std::size_t m = rows[0].size();
    std::vector<double> theta;
    theta.reserve(n * m);
    for (const auto& row : rows) {
        if (row.size() != m)
            throw std::invalid_argument("policy JSON theta rows have different lengths");
        for (const auto& v : row)
            theta.push_back(v.get<double>());
    }
    if (j.value("n_states", n) != n || j.value("n_actions", m) != m)
        throw std::invalid_argument("policy JSON theta shape disagrees with n_states/n_actions");
    return {n, m, std::move(theta)};
}

}  // namespace

std::string distribution_to_json(const CategoricalDistribution& dist, int indent)
{
    return distribution_json(dist.grid(), dist.probs()).dump(indent);
}

CategoricalDistribution distribution_from_json(const std::string& text)
{
    return decode("distribution JSON", [&] { return distribution_from(parse(text)); });
}

std::string table_to_json(const ReturnDistributionTable& table, int indent)
{
    json out = json::object();
    for (std::size_t s = 0; s < table.n_states(); ++s)
        for (std::size_t a = 0; a < table.n_actions(); ++a)
            out[std::to_string(s) + ":" + std::to_string(a)] =
                distribution_json(table.grid(), table.entry(s, a));
    return out.dump(indent);
}

ReturnDistributionTable table_from_json(const std::string& text)
{
    return decode("return table JSON", [&] { return table_from(parse(text)); });
}

std::string mdp_to_json(const TabularMdp& mdp, int indent)
{
    const std::size_t n = mdp.n_states();
    const std::size_t m = mdp.n_actions();
    json transition = json::array();
    json cost = json::array();
    const bool full_cost = mdp.costs_depend_on_next_state();
    for (std::size_t s = 0; s < n; ++s) {
        json trow = json::array();
        json crow = json::array();
        for (std::size_t a = 0; a < m; ++a) {
            std::vector<double> probs(n);
            std::vector<double> costs(n);
            for (std::size_t next = 0; next < n; ++next) {
                probs[next] = mdp.transition(s, a, next);
                costs[next] = mdp.cost(s, a, next);
            }
            trow.push_back(probs);
            if (full_cost)
                crow.push_back(costs);
            else
                crow.push_back(mdp.cost(s, a));
        }
        transition.push_back(trow);
        cost.push_back(crow);
    }
    json out = {{"n_states", n},          {"n_actions", m},     {"gamma", mdp.gamma()},
                {"terminals", mdp.terminals()}, {"transition", transition}, {"cost", cost}};
    return out.dump(indent);
}

TabularMdp mdp_from_json(const std::string& text)
{
    return decode("MDP JSON", [&] { return mdp_from(parse(text)); });
}

std::string policy_to_json(const SoftmaxPolicy& policy, int indent)
{
    json theta = json::array();
    for (std::size_t s = 0; s < policy.n_states(); ++s) {
        std::vector<double> row(policy.n_actions());
        for (std::size_t a = 0; a < policy.n_actions(); ++a)
            row[a] = policy.theta(s, a);
        theta.push_back(row);
    }
    json out = {{"n_states", policy.n_states()},
                {"n_actions", policy.n_actions()},
                {"theta", theta}};
    return out.dump(indent);
}

SoftmaxPolicy policy_from_json(const std::string& text)
{
    return decode("policy JSON", [&] { return policy_from(parse(text)); });
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

}  // namespace cdpg
