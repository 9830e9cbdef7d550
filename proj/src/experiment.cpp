#include "cdpg/experiment.hpp"

#include "cdpg/serialization.hpp"

#include "json.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

namespace cdpg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Algorithm algo)
{
    return algo == Algorithm::Cdpg ? "cdpg" : "spg";
}

Algorithm parse_algorithm(const std::string& text)
{
    if (text == "cdpg")
        return Algorithm::Cdpg;
    if (text == "spg")
        return Algorithm::Spg;
    throw ConfigError("unknown algorithm '" + text + "' (expected cdpg or spg)");
}

namespace {

// ----- scalar text conversions --------------------------------------------------------------

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> items;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (auto t = trim(item); !t.empty())
            items.push_back(t);
    return items;
}

std::string join(const std::vector<std::string>& items)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i)
        out += (i ? ", " : "") + items[i];
    return out;
}

std::string format_real(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

double parse_real(const std::string& text, const std::string& where)
{
    const auto t = trim(text);
    double v = 0.0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError(where + ": expected a number, got '" + text + "'");
    return v;
}

std::uint64_t parse_integer(const std::string& text, const std::string& where)
{
    const auto t = trim(text);
    std::uint64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError(where + ": expected a non-negative integer, got '" + text + "'");
    return v;
}

bool parse_bool(const std::string& text, const std::string& where)
{
    const auto t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on")
        return true;
    if (t == "false" || t == "0" || t == "no" || t == "off")
        return false;
    throw ConfigError(where + ": expected true/false, got '" + text + "'");
}

std::string format_bool(bool v)
{
    return v ? "true" : "false";
}

// ----- field table shared by the INI and JSON forms -----------------------------------------

enum class FieldType { Real, Integer, Bool, Text, OptionalInteger, RealList, IntegerList, TextList };

struct GridDraft {
    double z_min;
    double z_max;
    std::uint64_t n_atoms;
};

struct ParseState {
    ExperimentConfig config;
    GridDraft grid;
};

struct Field {
    const char* section;
    const char* key;
    FieldType type;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ParseState&, const std::string&, const std::string&)> set;
};

std::string environment_kind_name(EnvironmentKind kind)
{
    switch (kind) {
    case EnvironmentKind::File:
        return "file";
    case EnvironmentKind::Random:
        return "random";
    case EnvironmentKind::Cliffwalk:
        break;
    }
    return "cliffwalk";
}

EnvironmentKind parse_environment_kind(const std::string& text)
{
    if (text == "cliffwalk")
        return EnvironmentKind::Cliffwalk;
    if (text == "file")
        return EnvironmentKind::File;
    if (text == "random")
        return EnvironmentKind::Random;
    throw ConfigError("environment.kind: unknown kind '" + text + "'");
}

#define REAL_FIELD(sec, name, member)                                                        \
    Field{sec, name, FieldType::Real,                                                        \
          [](const ExperimentConfig& c) { return format_real(c.member); },                  \
          [](ParseState& p, const std::string& v, const std::string& w) {                    \
              p.config.member = parse_real(v, w);                                            \
          }}
#define INT_FIELD(sec, name, member)                                                         \
    Field{sec, name, FieldType::Integer,                                                     \
          [](const ExperimentConfig& c) { return std::to_string(c.member); },               \
          [](ParseState& p, const std::string& v, const std::string& w) {                    \
              p.config.member = static_cast<decltype(p.config.member)>(parse_integer(v, w)); \
          }}
#define BOOL_FIELD(sec, name, member)                                                        \
    Field{sec, name, FieldType::Bool,                                                        \
          [](const ExperimentConfig& c) { return format_bool(c.member); },                  \
          [](ParseState& p, const std::string& v, const std::string& w) {                    \
              p.config.member = parse_bool(v, w);                                            \
          }}
#define TEXT_FIELD(sec, name, member)                                                        \
    Field{sec, name, FieldType::Text, [](const ExperimentConfig& c) { return c.member; },   \
          [](ParseState& p, const std::string& v, const std::string&) {                      \
              p.config.member = trim(v);                                                     \
          }}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        Field{"environment", "kind", FieldType::Text,
              [](const ExperimentConfig& c) { return environment_kind_name(c.environment.kind); },
              [](ParseState& p, const std::string& v, const std::string&) {
                  p.config.environment.kind = parse_environment_kind(trim(v));
              }},
        TEXT_FIELD("environment", "mdp_path", environment.mdp_path),
        Field{"environment", "start_state", FieldType::OptionalInteger,
              [](const ExperimentConfig& c) {
                  return c.environment.start_state ? std::to_string(*c.environment.start_state)
                                                   : std::string();
              },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  if (trim(v).empty())
                      p.config.environment.start_state.reset();
                  else
                      p.config.environment.start_state = parse_integer(v, w);
              }},
        REAL_FIELD("environment", "p_slip", environment.cliffwalk.p_slip),
        REAL_FIELD("environment", "fall_cost", environment.cliffwalk.fall_cost),
        REAL_FIELD("environment", "step_cost", environment.cliffwalk.step_cost),
        REAL_FIELD("environment", "gamma", environment.cliffwalk.gamma),
        INT_FIELD("environment", "random_states", environment.random_states),
        INT_FIELD("environment", "random_actions", environment.random_actions),
        REAL_FIELD("environment", "random_gamma", environment.random_gamma),
        REAL_FIELD("environment", "random_max_cost", environment.random_max_cost),
        BOOL_FIELD("environment", "random_terminal", environment.random_terminal),

        Field{"algorithm", "names", FieldType::TextList,
              [](const ExperimentConfig& c) {
                  std::vector<std::string> names;
                  for (auto a : c.algorithms)
                      names.push_back(to_string(a));
                  return join(names);
              },
              [](ParseState& p, const std::string& v, const std::string&) {
                  p.config.algorithms.clear();
                  for (const auto& name : split_list(v))
                      p.config.algorithms.push_back(parse_algorithm(name));
              }},

        Field{"risk", "measure", FieldType::Text,
              [](const ExperimentConfig& c) { return c.risk.name(); },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  try {
                      p.config.risk.kind = parse_risk_kind(trim(v));
                  } catch (const std::invalid_argument& e) {
                      throw ConfigError(w + ": " + e.what());
                  }
              }},
        REAL_FIELD("risk", "alpha", risk.alpha),

        Field{"grid", "z_min", FieldType::Real,
              [](const ExperimentConfig& c) { return format_real(c.grid.z_min()); },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  p.grid.z_min = parse_real(v, w);
              }},
        Field{"grid", "z_max", FieldType::Real,
              [](const ExperimentConfig& c) { return format_real(c.grid.z_max()); },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  p.grid.z_max = parse_real(v, w);
              }},
        Field{"grid", "n_atoms", FieldType::Integer,
              [](const ExperimentConfig& c) { return std::to_string(c.grid.size()); },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  p.grid.n_atoms = parse_integer(v, w);
              }},

        Field{"eval", "mode", FieldType::Text,
              [](const ExperimentConfig& c) {
                  return std::string(c.eval.mode == EvalMode::ModelBased ? "model" : "sample");
              },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  const auto t = trim(v);
                  if (t == "model")
                      p.config.eval.mode = EvalMode::ModelBased;
                  else if (t == "sample")
                      p.config.eval.mode = EvalMode::SampleBased;
                  else
                      throw ConfigError(w + ": expected model or sample, got '" + t + "'");
              }},
        INT_FIELD("eval", "max_sweeps", eval.max_sweeps),
        REAL_FIELD("eval", "tolerance", eval.tolerance),
        BOOL_FIELD("eval", "warm_start", eval.warm_start),
        INT_FIELD("eval", "early_stop_patience", eval.early_stop_patience),
        REAL_FIELD("eval", "td_step_size", eval.td_step_size),

        REAL_FIELD("cdpg", "step_size", cdpg.step_size),
        INT_FIELD("cdpg", "iterations", cdpg.iterations),
        INT_FIELD("cdpg", "trajectories_per_iter", cdpg.trajectories_per_iter),
        REAL_FIELD("cdpg", "grad_norm_stop", cdpg.grad_norm_stop),
        INT_FIELD("cdpg", "horizon_cap", cdpg.horizon_cap),
        REAL_FIELD("cdpg", "schedule_kappa", cdpg.schedule_kappa),

        INT_FIELD("spg", "batch_size", spg.batch_size),
        REAL_FIELD("spg", "step_size", spg.step_size),
        INT_FIELD("spg", "iterations", spg.iterations),
        INT_FIELD("spg", "horizon_cap", spg.horizon_cap),

        Field{"run", "seeds", FieldType::IntegerList,
              [](const ExperimentConfig& c) {
                  std::vector<std::string> items;
                  for (auto s : c.run.seeds)
                      items.push_back(std::to_string(s));
                  return join(items);
              },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  p.config.run.seeds.clear();
                  for (const auto& item : split_list(v))
                      p.config.run.seeds.push_back(parse_integer(item, w));
              }},
        TEXT_FIELD("run", "output_dir", run.output_dir),
        TEXT_FIELD("run", "reference", run.reference),
        REAL_FIELD("run", "threshold", run.threshold),
        BOOL_FIELD("run", "record_wall_time", run.record_wall_time),
        Field{"run", "eval_alphas", FieldType::RealList,
              [](const ExperimentConfig& c) {
                  std::vector<std::string> items;
                  for (auto a : c.run.eval_alphas)
                      items.push_back(format_real(a));
                  return join(items);
              },
              [](ParseState& p, const std::string& v, const std::string& w) {
                  p.config.run.eval_alphas.clear();
                  for (const auto& item : split_list(v))
                      p.config.run.eval_alphas.push_back(parse_real(item, w));
              }},
        TEXT_FIELD("run", "policy", run.policy),

        REAL_FIELD("gradcheck", "fd_step", gradcheck.fd_step),
        REAL_FIELD("gradcheck", "threshold", gradcheck.threshold),
        REAL_FIELD("gradcheck", "cvar_alpha", gradcheck.cvar_alpha),
        REAL_FIELD("gradcheck", "msd_alpha", gradcheck.msd_alpha),
        REAL_FIELD("gradcheck", "theta_scale", gradcheck.theta_scale),
        INT_FIELD("gradcheck", "max_states", gradcheck.max_states),
    };
    return table;
}

#undef REAL_FIELD
#undef INT_FIELD
#undef BOOL_FIELD
#undef TEXT_FIELD

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

ExperimentConfig config_from_sections(const SectionMap& sections)
{
    ParseState state{ExperimentConfig{}, {}};
    state.grid = {state.config.grid.z_min(), state.config.grid.z_max(), state.config.grid.size()};

    std::set<std::pair<std::string, std::string>> known;
    for (const auto& f : fields())
        known.emplace(f.section, f.key);
    for (const auto& [section, entries] : sections)
        for (const auto& [key, value] : entries)
            if (!known.count({section, key}))
                throw ConfigError("unknown config key '" + section + "." + key + "'");

    for (const auto& f : fields()) {
        const auto sec = sections.find(f.section);
        if (sec == sections.end())
            continue;
        const auto it = sec->second.find(f.key);
        if (it == sec->second.end())
            continue;
        const std::string where = std::string(f.section) + "." + f.key;
        try {
            f.set(state, it->second, where);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    try {
        state.config.grid =
            SupportGrid(state.grid.z_min, state.grid.z_max, static_cast<std::size_t>(state.grid.n_atoms));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    state.config.validate();
    return state.config;
}

json typed_value(FieldType type, const std::string& text)
{
    switch (type) {
    case FieldType::Real:
        return parse_real(text, "serialize");
    case FieldType::Integer:
        return parse_integer(text, "serialize");
    case FieldType::Bool:
        return parse_bool(text, "serialize");
    case FieldType::Text:
        return text;
    case FieldType::OptionalInteger:
        return text.empty() ? json(nullptr) : json(parse_integer(text, "serialize"));
    case FieldType::RealList: {
        json arr = json::array();
        for (const auto& item : split_list(text))
            arr.push_back(parse_real(item, "serialize"));
        return arr;
    }
    case FieldType::IntegerList: {
        json arr = json::array();
        for (const auto& item : split_list(text))
            arr.push_back(parse_integer(item, "serialize"));
        return arr;
    }
    case FieldType::TextList: {
        json arr = json::array();
        for (const auto& item : split_list(text))
            arr.push_back(item);
        return arr;
    }
    }
    return text;
}

std::string json_scalar_text(const json& v)
{
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_null())
        return {};
    if (v.is_number_float())
        return format_real(v.get<double>());
    return v.dump();
}

std::string json_value_text(const json& v)
{
    if (!v.is_array())
        return json_scalar_text(v);
    std::vector<std::string> items;
    for (const auto& item : v)
        items.push_back(json_scalar_text(item));
    return join(items);
}

// ----- helpers for the commands ---------------------------------------------------------------

void apply_overrides(ExperimentConfig& config, const CliOptions& options)
{
    if (options.out_dir)
        config.run.output_dir = *options.out_dir;
    if (options.seed)
        config.run.seeds = {*options.seed};
}

ExperimentConfig load_with_overrides(const CliOptions& options)
{
    if (options.config_path.empty())
        throw ConfigError("--config is required");
    auto config = load_config(options.config_path);
    apply_overrides(config, options);
    config.validate();
    return config;
}

fs::path prepare_output_dir(const ExperimentConfig& config)
{
    const fs::path dir(config.run.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

json number_or_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

SoftmaxPolicy resolve_policy(const std::string& spec, const ExperimentConfig& config,
                             const TabularMdp& mdp)
{
    const bool cliff = config.environment.kind == EnvironmentKind::Cliffwalk;
    if (spec == "safe" || spec == "shortest") {
        if (!cliff)
            throw ConfigError("policy '" + spec + "' is only defined for the cliffwalk environment");
        return spec == "safe" ? cliffwalk::safe_path_policy() : cliffwalk::shortest_path_policy();
    }
    if (spec == "uniform")
        return {mdp.n_states(), mdp.n_actions()};
    SoftmaxPolicy policy = [&] {
        try {
            return policy_from_json(read_text_file(spec));
        } catch (const std::exception& e) {
            throw ConfigError("cannot load policy '" + spec + "': " + e.what());
        }
    }();
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw ConfigError("policy '" + spec + "' has shape " + std::to_string(policy.n_states()) +
                          "x" + std::to_string(policy.n_actions()) + " but the environment has " +
                          std::to_string(mdp.n_states()) + "x" + std::to_string(mdp.n_actions()));
    return policy;
}

std::vector<std::size_t> non_terminal_states(const TabularMdp& mdp)
{
    std::vector<std::size_t> states;
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
        if (!mdp.is_terminal(s))
            states.push_back(s);
    return states;
}

json run_summary(const RunOutcome& run, double threshold)
{
    const auto& records = run.result.history.records;
    json j = {{"algorithm", to_string(run.algorithm)},
              {"seed", run.seed},
              {"iterations_run", records.size()},
              {"greedy_path", run.greedy_path},
              {"quantile_ties", run.result.history.quantile_ties()}};
    if (records.empty()) {
        j["final_risk"] = nullptr;
        j["final_divergence"] = nullptr;
        j["converged"] = false;
    } else {
        j["final_risk"] = number_or_null(records.back().risk_value);
        j["final_divergence"] = number_or_null(records.back().divergence);
        j["converged"] = records.back().divergence < threshold;
    }
    j["iterations_to_threshold"] = run.first_below ? json(run.first_below->iteration) : json(nullptr);
    j["trajectories_to_threshold"] =
        run.first_below ? json(run.first_below->cum_trajectories) : json(nullptr);
    j["wall_time_to_threshold_ms"] =
        run.first_below ? json(run.first_below->wall_time_ms) : json(nullptr);
    return j;
}

std::string history_csv(const TrainingHistory& history)
{
    std::ostringstream out;
    history.write_csv(out);
    return out.str();
}

void log_line(std::ostream& log, bool quiet, const std::string& text)
{
    if (!quiet)
        log << text << '\n';
}

// Configuration and runtime errors both map to exit code 1; validation failures are returned
// explicitly by the commands.
template <typename F>
int guarded(std::ostream& log, F&& body)
{
    try {
        return body();
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return exit_code::kConfigError;
    }
}

}  // namespace

// ----- config ---------------------------------------------------------------------------------

void ExperimentConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok)
            throw ConfigError(what);
    };
    const auto& env = environment;
    switch (env.kind) {
    case EnvironmentKind::Cliffwalk:
        require(env.cliffwalk.p_slip >= 0.0 && env.cliffwalk.p_slip <= 1.0,
                "environment.p_slip must lie in [0, 1]");
        require(std::isfinite(env.cliffwalk.fall_cost) && std::isfinite(env.cliffwalk.step_cost),
                "environment costs must be finite");
        require(env.cliffwalk.gamma >= 0.0 && env.cliffwalk.gamma < 1.0,
                "environment.gamma must lie in [0, 1)");
        break;
    case EnvironmentKind::File:
        require(!env.mdp_path.empty(), "environment.mdp_path is required for kind = file");
        require(fs::exists(env.mdp_path), "environment.mdp_path '" + env.mdp_path + "' not found");
        break;
    case EnvironmentKind::Random:
        require(env.random_states >= 1 && env.random_actions >= 1,
                "environment.random_states and random_actions must be at least 1");
        require(env.random_gamma >= 0.0 && env.random_gamma < 1.0,
                "environment.random_gamma must lie in [0, 1)");
        require(env.random_max_cost >= 0.0 && std::isfinite(env.random_max_cost),
                "environment.random_max_cost must be finite and non-negative");
        break;
    }

    require(!algorithms.empty(), "algorithm.names must list at least one algorithm");
    require(std::set<Algorithm>(algorithms.begin(), algorithms.end()).size() == algorithms.size(),
            "algorithm.names lists an algorithm twice");
    try {
        risk.validate();
        eval.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const bool uses_spg =
        std::find(algorithms.begin(), algorithms.end(), Algorithm::Spg) != algorithms.end();
    require(!uses_spg || risk.kind == RiskKind::CVaR, "spg requires risk.measure = cvar");

    require(cdpg.step_size > 0.0, "cdpg.step_size must be positive");
    require(cdpg.trajectories_per_iter >= 1, "cdpg.trajectories_per_iter must be at least 1");
    require(cdpg.grad_norm_stop >= 0.0, "cdpg.grad_norm_stop must be non-negative");
    require(cdpg.horizon_cap >= 1, "cdpg.horizon_cap must be at least 1");
    require(cdpg.schedule_kappa >= 0.0, "cdpg.schedule_kappa must be non-negative");
    require(spg.batch_size >= 2, "spg.batch_size must be at least 2");
    require(spg.step_size > 0.0, "spg.step_size must be positive");
    require(spg.horizon_cap >= 1, "spg.horizon_cap must be at least 1");

    require(!run.seeds.empty(), "run.seeds must list at least one seed");
    require(!run.output_dir.empty(), "run.output_dir must not be empty");
    require(run.threshold > 0.0, "run.threshold must be positive");
    for (double a : run.eval_alphas)
        require(a > 0.0 && a <= 1.0, "run.eval_alphas entries must lie in (0, 1]");
    require(run.reference == "safe" || run.reference == "shortest" || run.reference == "none" ||
                fs::exists(run.reference),
            "run.reference must be safe, shortest, none, or an existing policy file");
    if (env.kind != EnvironmentKind::Cliffwalk)
        require(run.reference != "safe" && run.reference != "shortest",
                "run.reference '" + run.reference + "' needs the cliffwalk environment");

    require(gradcheck.fd_step > 0.0, "gradcheck.fd_step must be positive");
    require(gradcheck.threshold > 0.0, "gradcheck.threshold must be positive");
    require(gradcheck.cvar_alpha > 0.0 && gradcheck.cvar_alpha <= 1.0,
            "gradcheck.cvar_alpha must lie in (0, 1]");
    require(gradcheck.msd_alpha >= 0.0 && gradcheck.msd_alpha <= 1.0,
            "gradcheck.msd_alpha must lie in [0, 1]");
    require(gradcheck.theta_scale >= 0.0, "gradcheck.theta_scale must be non-negative");
}

ExperimentConfig parse_config_ini(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    SectionMap sections;
    for (const auto& [section, body] : tree) {
        if (body.empty())
            throw ConfigError("config key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body)
            sections[section][key] = value.data();
    }
    return config_from_sections(sections);
}

std::string config_to_ini(const ExperimentConfig& config)
{
    std::ostringstream out;
    std::string current;
    for (const auto& f : fields()) {
        if (f.section != current) {
            out << (current.empty() ? "" : "\n") << '[' << f.section << "]\n";
            current = f.section;
        }
        out << f.key << " = " << f.get(config) << '\n';
    }
    return out.str();
}

ExperimentConfig parse_config_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config JSON must be an object of sections");
    SectionMap sections;
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object())
            throw ConfigError("config section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items())
            sections[section][key] = json_value_text(value);
    }
    return config_from_sections(sections);
}

std::string config_to_json(const ExperimentConfig& config)
{
    json out = json::object();
    for (const auto& f : fields())
        out[f.section][f.key] = typed_value(f.type, f.get(config));
    return out.dump(2);
}

ExperimentConfig load_config(const std::string& path)
{
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return fs::path(path).extension() == ".json" ? parse_config_json(text) : parse_config_ini(text);
}

// ----- environment and run plumbing ---------------------------------------------------------

TabularMdp build_environment(const EnvironmentConfig& env, std::uint64_t seed)
{
    switch (env.kind) {
    case EnvironmentKind::File:
        try {
            return mdp_from_json(read_text_file(env.mdp_path));
        } catch (const std::exception& e) {
            throw ConfigError("cannot load MDP '" + env.mdp_path + "': " + e.what());
        }
    case EnvironmentKind::Random: {
        Rng rng(seed);
        return random_mdp(env.random_states, env.random_actions, env.random_gamma,
                          env.random_max_cost, env.random_terminal, rng);
    }
    case EnvironmentKind::Cliffwalk:
        break;
    }
    return cliffwalk::build(env.cliffwalk);
}

std::size_t start_state(const EnvironmentConfig& env, const TabularMdp& mdp)
{
    const std::size_t s =
        env.start_state.value_or(env.kind == EnvironmentKind::Cliffwalk ? cliffwalk::kStart : 0);
    if (s >= mdp.n_states())
        throw ConfigError("environment.start_state " + std::to_string(s) + " is out of range");
    return s;
}

std::optional<PolicyReference> resolve_reference(const ExperimentConfig& config,
                                                 const TabularMdp& mdp)
{
    const auto& ref = config.run.reference;
    if (ref == "none")
        return std::nullopt;
    if (ref == "safe")
        return PolicyReference{cliffwalk::safe_path_policy(), cliffwalk::safe_path_states()};
    if (ref == "shortest")
        return PolicyReference{cliffwalk::shortest_path_policy(),
                               cliffwalk::shortest_path_states()};
    return PolicyReference{resolve_policy(ref, config, mdp), non_terminal_states(mdp)};
}

CdpgConfig make_cdpg_config(const ExperimentConfig& config, const TabularMdp& mdp,
                            std::uint64_t seed)
{
    CdpgConfig c;
    c.step_size = config.cdpg.step_size;
    c.iterations = config.cdpg.iterations;
    c.trajectories_per_iter = config.cdpg.trajectories_per_iter;
    c.grid = config.grid;
    c.eval = config.eval;
    c.start_state = start_state(config.environment, mdp);
    c.rng_seed = seed;
    c.grad_norm_stop = config.cdpg.grad_norm_stop;
    c.horizon_cap = config.cdpg.horizon_cap;
    c.schedule_kappa = config.cdpg.schedule_kappa;
    c.record_wall_time = config.run.record_wall_time;
    try {
        c.validate(mdp);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

SpgConfig make_spg_config(const ExperimentConfig& config, const TabularMdp& mdp,
                          std::uint64_t seed)
{
    SpgConfig c;
    c.batch_size = config.spg.batch_size;
    c.step_size = config.spg.step_size;
    c.iterations = config.spg.iterations;
    c.alpha = config.risk.alpha;
    c.horizon_cap = config.spg.horizon_cap;
    c.rng_seed = seed;
    c.start_state = start_state(config.environment, mdp);
    c.record_wall_time = config.run.record_wall_time;
    try {
        c.validate(mdp);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::vector<RunOutcome> run_training(const ExperimentConfig& config,
                                     const std::vector<Algorithm>& algorithms)
{
    struct Job {
        Algorithm algorithm;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto algo : algorithms)
        for (auto seed : config.run.seeds)
            jobs.push_back({algo, seed});

    std::vector<std::optional<RunOutcome>> slots(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    const auto n_jobs = static_cast<long>(jobs.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (long k = 0; k < n_jobs; ++k) {
        try {
            const auto& job = jobs[static_cast<std::size_t>(k)];
            const auto mdp = build_environment(config.environment, job.seed);
            const auto reference = resolve_reference(config, mdp);
            auto result = job.algorithm == Algorithm::Cdpg
                              ? cdpg_train(mdp, config.risk,
                                           make_cdpg_config(config, mdp, job.seed), reference)
                              : spg_train(mdp, make_spg_config(config, mdp, job.seed), reference);
            auto path = greedy_path(mdp, result.policy, start_state(config.environment, mdp));
            auto first = result.history.first_below(config.run.threshold);
            slots[static_cast<std::size_t>(k)] =
                RunOutcome{job.algorithm, job.seed, std::move(result), std::move(path), first};
        } catch (...) {
            errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    std::vector<RunOutcome> outcomes;
    outcomes.reserve(slots.size());
    for (auto& slot : slots)
        outcomes.push_back(std::move(*slot));
    return outcomes;
}

std::vector<GradcheckEntry> run_gradcheck(const ExperimentConfig& config, const GradientHook& hook)
{
    const auto& gc = config.gradcheck;
    const std::vector<RiskMeasureSpec> specs = {RiskMeasureSpec::cvar(gc.cvar_alpha),
                                                RiskMeasureSpec::expectation(),
                                                RiskMeasureSpec::mean_semideviation(gc.msd_alpha)};
    // Finite differences need the fixed point to near machine precision.
    EvalConfig eval;
    eval.max_sweeps = 1000000;
    eval.tolerance = 1e-15;
    eval.warm_start = false;
    eval.early_stop_patience = 50;

    std::vector<GradcheckEntry> entries;
    for (auto seed : config.run.seeds) {
        const auto mdp = build_environment(config.environment, seed);
        if (mdp.n_states() > gc.max_states)
            throw ConfigError("gradcheck needs at most " + std::to_string(gc.max_states) +
                              " states; the environment has " + std::to_string(mdp.n_states()));
        const std::size_t start = start_state(config.environment, mdp);

        Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
        std::normal_distribution<double> normal(0.0, gc.theta_scale);
        std::vector<double> theta(mdp.n_params());
        for (auto& v : theta)
            v = gc.theta_scale > 0.0 ? normal(rng) : 0.0;

        auto start_distribution = [&](const std::vector<double>& th) {
            const SoftmaxPolicy policy(mdp.n_states(), mdp.n_actions(), th);
            const auto evaluated = evaluate_policy(mdp, policy, config.grid, eval);
            return std::make_pair(state_distribution(evaluated.table, policy, start),
                                  evaluated.table);
        };

        const SoftmaxPolicy policy(mdp.n_states(), mdp.n_actions(), theta);
        const auto [dist, table] = start_distribution(theta);
        const auto measure = expected_gradient_measure(mdp, policy, table, start);

        std::vector<std::vector<double>> fd(specs.size(), std::vector<double>(theta.size()));
        std::vector<bool> quantile_moved(specs.size(), false);
        const auto base_quantile = quantile_atom(dist, 1.0 - gc.cvar_alpha).index;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            auto plus = theta;
            auto minus = theta;
            plus[k] += gc.fd_step;
            minus[k] -= gc.fd_step;
            const auto dp = start_distribution(plus).first;
            const auto dm = start_distribution(minus).first;
            for (std::size_t r = 0; r < specs.size(); ++r)
                fd[r][k] = (risk_value(dp, specs[r]) - risk_value(dm, specs[r])) / (2.0 * gc.fd_step);
            if (quantile_atom(dp, 1.0 - gc.cvar_alpha).index != base_quantile ||
                quantile_atom(dm, 1.0 - gc.cvar_alpha).index != base_quantile)
                quantile_moved[0] = true;
        }

        for (std::size_t r = 0; r < specs.size(); ++r) {
            GradcheckEntry entry;
            entry.seed = seed;
            entry.measure = specs[r].name();
            auto analytic = risk_gradient(measure, dist, specs[r]);
            if (hook)
                hook(analytic.gradient);
            if (analytic.quantile_tie || quantile_moved[r]) {
                entry.skipped = true;
                entry.note = "quantile tie; CVaR is not differentiable here";
            } else if (analytic.zero_semideviation && specs[r].alpha > 0.0) {
                entry.skipped = true;
                entry.note = "zero semideviation; the gradient is one-sided";
            }
            for (std::size_t k = 0; k < theta.size(); ++k)
                entry.max_relative_error =
                    std::max(entry.max_relative_error,
                             std::abs(analytic.gradient[k] - fd[r][k]) / (1.0 + std::abs(fd[r][k])));
            entries.push_back(entry);
        }
    }
    return entries;
}

// ----- commands -------------------------------------------------------------------------------

int cmd_train(const CliOptions& options, std::ostream& log)
{
    return guarded(log, [&] {
        const auto config = load_with_overrides(options);
        const auto dir = prepare_output_dir(config);
        const auto probe = build_environment(config.environment, config.run.seeds.front());
        if (!grid_covers_returns(config.grid, probe))
            log_line(log, options.quiet,
                     "warning: grid [" + format_real(config.grid.z_min()) + ", " +
                         format_real(config.grid.z_max()) +
                         "] does not cover c/(1-gamma); tail mass is clamped to the boundary");

        const auto outcomes = run_training(config, config.algorithms);
        json runs = json::array();
        for (const auto& run : outcomes) {
            const auto stem = to_string(run.algorithm) + "_" + std::to_string(run.seed);
            write_file(dir / (stem + ".csv"), history_csv(run.result.history));
            write_file(dir / (stem + "_policy.json"), policy_to_json(run.result.policy, 2) + "\n");
            if (const auto ties = run.result.history.quantile_ties(); ties > 0)
                log_line(log, options.quiet,
                         "warning: " + stem + ": " + std::to_string(ties) +
                             " iterations hit a CVaR quantile tie");
            auto summary = run_summary(run, config.run.threshold);
            log_line(log, options.quiet,
                     stem + ": final risk " + json_scalar_text(summary["final_risk"]) +
                         ", divergence " + json_scalar_text(summary["final_divergence"]));
            runs.push_back(std::move(summary));
        }
        const json summary = {{"reference", config.run.reference},
                              {"threshold", config.run.threshold},
                              {"risk", {{"measure", config.risk.name()}, {"alpha", config.risk.alpha}}},
                              {"runs", runs}};
        write_file(dir / "summary.json", summary.dump(2) + "\n");
        return exit_code::kSuccess;
    });
}

int cmd_evaluate(const CliOptions& options, std::ostream& log)
{
    return guarded(log, [&] {
        const auto config = load_with_overrides(options);
        const auto dir = prepare_output_dir(config);
        const auto seed = config.run.seeds.front();
        const auto mdp = build_environment(config.environment, seed);
        const auto policy = resolve_policy(options.policy_path.value_or(config.run.policy), config, mdp);
        const std::size_t start = start_state(config.environment, mdp);

        EvalConfig eval = config.eval;
        eval.warm_start = false;
        const auto evaluated = evaluate_policy(mdp, policy, config.grid, eval);
        const double residual = bellman_residual(evaluated.table, mdp, policy);

        auto risk_block = [&](const CategoricalDistribution& dist) {
            json cvar = json::object();
            for (double a : config.run.eval_alphas)
                cvar[format_real(a)] = risk_value(dist, RiskMeasureSpec::cvar(a));
            return json{{"mean", measure_mean(dist)}, {"cvar", cvar}};
        };

        json states = json::array();
        for (std::size_t s = 0; s < mdp.n_states(); ++s) {
            const auto dist = state_distribution(evaluated.table, policy, s);
            auto entry = risk_block(dist);
            entry["state"] = s;
            entry["distribution"] = json::parse(distribution_to_json(dist));
            states.push_back(std::move(entry));
        }
        const auto start_dist = state_distribution(evaluated.table, policy, start);
        json report = {{"start_state", start},
                       {"start", risk_block(start_dist)},
                       {"sweeps_used", evaluated.sweeps_used},
                       {"final_sweep_distance", evaluated.final_residual},
                       {"bellman_residual", residual},
                       {"grid_overflow", evaluated.grid_overflow},
                       {"states", states}};
        write_file(dir / "evaluation.json", report.dump(2) + "\n");
        if (evaluated.grid_overflow)
            log_line(log, options.quiet, "warning: grid does not cover c/(1-gamma)");
        std::ostringstream line;
        line << "start state " << start << ": mean " << measure_mean(start_dist);
        for (double a : config.run.eval_alphas)
            line << ", CVaR(" << a << ") " << risk_value(start_dist, RiskMeasureSpec::cvar(a));
        line << ", Bellman residual " << residual;
        log_line(log, options.quiet, line.str());
        return exit_code::kSuccess;
    });
}

int cmd_gradcheck(const CliOptions& options, std::ostream& log, const GradientHook& hook)
{
    return guarded(log, [&] {
        const auto config = load_with_overrides(options);
        const auto dir = prepare_output_dir(config);
        const auto entries = run_gradcheck(config, hook);

        bool failed = false;
        std::ostringstream csv;
        csv << "seed,measure,max_relative_error,status\n";
        for (const auto& e : entries) {
            const bool bad = !e.skipped && !(e.max_relative_error < config.gradcheck.threshold);
            failed = failed || bad;
            const std::string status = e.skipped ? "skipped" : (bad ? "fail" : "pass");
            char err[64];
            std::snprintf(err, sizeof err, "%.6e", e.max_relative_error);
            csv << e.seed << ',' << e.measure << ',' << err << ',' << status << '\n';
            log_line(log, options.quiet,
                     "seed " + std::to_string(e.seed) + " " + e.measure + ": " + err + " " + status +
                         (e.note.empty() ? "" : " (" + e.note + ")"));
        }
        write_file(dir / "gradcheck.csv", csv.str());
        if (failed) {
            log << "gradcheck: relative error above " << config.gradcheck.threshold << '\n';
            return exit_code::kValidationFailure;
        }
        return exit_code::kSuccess;
    });
}

int cmd_compare(const CliOptions& options, std::ostream& log)
{
    return guarded(log, [&] {
        const auto config = load_with_overrides(options);
        const std::set<Algorithm> named(config.algorithms.begin(), config.algorithms.end());
        if (named.size() != 2)
            throw ConfigError("comparison needs two algorithms: set algorithm.names = cdpg, spg");
        const auto dir = prepare_output_dir(config);
        const auto outcomes = run_training(config, {Algorithm::Cdpg, Algorithm::Spg});

        std::ostringstream merged;
        merged << "algorithm,seed,iteration,cum_trajectories,eval_sweeps,risk_value,grad_norm,"
                  "divergence,wall_time_ms\n";
        for (const auto& run : outcomes) {
            std::istringstream rows(history_csv(run.result.history));
            std::string row;
            std::getline(rows, row);
            while (std::getline(rows, row))
                merged << to_string(run.algorithm) << ',' << run.seed << ',' << row << '\n';
        }
        write_file(dir / "compare.csv", merged.str());

        std::map<std::uint64_t, std::map<Algorithm, const RunOutcome*>> by_seed;
        for (const auto& run : outcomes)
            by_seed[run.seed][run.algorithm] = &run;

        std::ostringstream table;
        table << "seed,algorithm,iterations_to_threshold,trajectories_to_threshold,"
                 "wall_time_to_threshold_ms\n";
        json per_seed = json::array();
        std::size_t cdpg_wins = 0;
        std::vector<double> ratios;
        for (auto seed : config.run.seeds) {
            json row = {{"seed", seed}};
            double traj[2] = {std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::infinity()};
            for (auto algo : {Algorithm::Cdpg, Algorithm::Spg}) {
                const auto* run = by_seed[seed][algo];
                const auto& fb = run->first_below;
                table << seed << ',' << to_string(algo) << ',';
                if (fb) {
                    char wall[32];
                    std::snprintf(wall, sizeof wall, "%.3f", fb->wall_time_ms);
                    table << fb->iteration << ',' << fb->cum_trajectories << ',' << wall << '\n';
                    traj[algo == Algorithm::Cdpg ? 0 : 1] = static_cast<double>(fb->cum_trajectories);
                } else {
                    table << ",,\n";
                }
                row[to_string(algo)] = run_summary(*run, config.run.threshold);
            }
            const bool win = std::isfinite(traj[0]) && traj[0] <= traj[1];
            cdpg_wins += win ? 1 : 0;
            if (std::isfinite(traj[0]) && std::isfinite(traj[1]))
                ratios.push_back(traj[1] / traj[0]);
            row["cdpg_fewer_or_equal_trajectories"] = win;
            row["trajectory_ratio_spg_over_cdpg"] =
                std::isfinite(traj[0]) && std::isfinite(traj[1]) ? json(traj[1] / traj[0]) : json(nullptr);
            per_seed.push_back(std::move(row));
        }
        write_file(dir / "compare_summary.csv", table.str());

        json median = nullptr;
        if (!ratios.empty()) {
            std::sort(ratios.begin(), ratios.end());
            const auto n = ratios.size();
            median = n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
        }
        const json summary = {{"threshold", config.run.threshold},
                              {"reference", config.run.reference},
                              {"seeds", per_seed},
                              {"cdpg_fewer_or_equal_trajectories", cdpg_wins},
                              {"n_seeds", config.run.seeds.size()},
                              {"median_trajectory_ratio_spg_over_cdpg", median}};
        write_file(dir / "compare_summary.json", summary.dump(2) + "\n");
        log_line(log, options.quiet,
                 "CDPG needed no more trajectories than SPG on " + std::to_string(cdpg_wins) + " of " +
                     std::to_string(config.run.seeds.size()) + " seeds; median SPG/CDPG ratio " +
                     json_scalar_text(median));
        return exit_code::kSuccess;
    });
}

}  // namespace cdpg
