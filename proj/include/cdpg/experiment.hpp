#pragma once

#include "cdpg/categorical.hpp"
#include "cdpg/evaluation.hpp"
#include "cdpg/history.hpp"
#include "cdpg/mdp.hpp"
#include "cdpg/policy_gradient.hpp"
#include "cdpg/risk.hpp"
#include "cdpg/spg.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdpg {

/// Raised for unreadable, malformed, or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EnvironmentKind { Cliffwalk, File, Random };
enum class Algorithm { Cdpg, Spg };

std::string to_string(Algorithm algo);
Algorithm parse_algorithm(const std::string& text);

struct EnvironmentConfig {
    EnvironmentKind kind = EnvironmentKind::Cliffwalk;
    cliffwalk::Params cliffwalk{};
    /// MDP JSON file, used when kind = File.
    std::string mdp_path;
    /// Random MDP shape, used when kind = Random (the instance is drawn from the run seed).
    std::size_t random_states = 3;
    std::size_t random_actions = 2;
    double random_gamma = 0.5;
    double random_max_cost = 1.0;
    bool random_terminal = false;
    /// Start state; unset means the environment's natural start (6 on Cliffwalk, 0 otherwise).
    std::optional<std::size_t> start_state;

    bool operator==(const EnvironmentConfig&) const = default;
};

struct CdpgSettings {
    double step_size = 0.05;
    std::size_t iterations = 2000;
    std::size_t trajectories_per_iter = 1;
    double grad_norm_stop = 0.0;
    std::size_t horizon_cap = 200;
    double schedule_kappa = 0.0;

    bool operator==(const CdpgSettings&) const = default;
};

struct SpgSettings {
    std::size_t batch_size = 100;
    double step_size = 0.01;
    std::size_t iterations = 500;
    std::size_t horizon_cap = 200;

    bool operator==(const SpgSettings&) const = default;
};

struct RunSettings {
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "out";
    /// "safe", "shortest", "none", or a policy JSON path (compared over non-terminal states).
    std::string reference = "safe";
    double threshold = 0.1;
    bool record_wall_time = false;
    /// CVaR levels reported by `evaluate`.
    std::vector<double> eval_alphas{0.1, 1.0};
    /// Policy for `evaluate`: "safe", "shortest", "uniform", or a policy JSON path.
    std::string policy = "safe";

    bool operator==(const RunSettings&) const = default;
};

struct GradcheckSettings {
    double fd_step = 1e-5;
    double threshold = 1e-3;
    double cvar_alpha = 0.3;
    double msd_alpha = 0.5;
    /// Scale of the random policy parameters drawn per seed.
    double theta_scale = 1.0;
    std::size_t max_states = 6;

    bool operator==(const GradcheckSettings&) const = default;
};

struct ExperimentConfig {
    EnvironmentConfig environment{};
    /// Algorithms to run, in the order given.
    std::vector<Algorithm> algorithms{Algorithm::Cdpg};
    RiskMeasureSpec risk = RiskMeasureSpec::cvar(0.1);
    SupportGrid grid{0.0, 300.0, 301};
    EvalConfig eval{};
    CdpgSettings cdpg{};
    SpgSettings spg{};
    RunSettings run{};
    GradcheckSettings gradcheck{};

    /// Throws ConfigError on any inconsistency, including unreadable MDP files.
    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Key-value (INI) form. Sections: environment, algorithm, risk, grid, eval, cdpg, spg, run,
/// gradcheck. Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig parse_config_ini(const std::string& text);
std::string config_to_ini(const ExperimentConfig& config);

/// JSON form with the same sections as objects.
ExperimentConfig parse_config_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);

/// Reads a config file; `.json` files are parsed as JSON, everything else as INI.
ExperimentConfig load_config(const std::string& path);

TabularMdp build_environment(const EnvironmentConfig& env, std::uint64_t seed);
std::size_t start_state(const EnvironmentConfig& env, const TabularMdp& mdp);

/// Resolves the run's reference policy; nullopt for "none".
std::optional<PolicyReference> resolve_reference(const ExperimentConfig& config,
                                                 const TabularMdp& mdp);

CdpgConfig make_cdpg_config(const ExperimentConfig& config, const TabularMdp& mdp,
                            std::uint64_t seed);
SpgConfig make_spg_config(const ExperimentConfig& config, const TabularMdp& mdp,
                          std::uint64_t seed);

struct RunOutcome {
    Algorithm algorithm = Algorithm::Cdpg;
    std::uint64_t seed = 0;
    TrainResult result;
    std::vector<std::size_t> greedy_path;
    /// First record with divergence below the threshold, if any.
    std::optional<IterationRecord> first_below;
};

/// Trains every (algorithm, seed) pair. Pairs run in parallel; the output is ordered by
/// algorithm list order, then seed order.
std::vector<RunOutcome> run_training(const ExperimentConfig& config,
                                     const std::vector<Algorithm>& algorithms);

struct GradcheckEntry {
    std::uint64_t seed = 0;
    std::string measure;
    double max_relative_error = 0.0;
    bool skipped = false;
    std::string note;
};

/// Hook applied to every analytic risk gradient before comparison; used to inject faults.
using GradientHook = std::function<void(std::vector<double>&)>;

/// Analytic risk gradients (exact expected measure gradient) against central finite differences
/// of the evaluated start-state risk, per seed and risk measure.
std::vector<GradcheckEntry> run_gradcheck(const ExperimentConfig& config,
                                          const GradientHook& hook = {});

struct CliOptions {
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy_path;
    bool quiet = false;
};

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kValidationFailure = 2;
}  // namespace exit_code

/// Subcommands. Each loads the config, applies CLI overrides, writes its outputs under the
/// output directory, and returns an exit code. `log` receives progress and warnings.
int cmd_train(const CliOptions& options, std::ostream& log);
int cmd_evaluate(const CliOptions& options, std::ostream& log);
int cmd_gradcheck(const CliOptions& options, std::ostream& log, const GradientHook& hook = {});
int cmd_compare(const CliOptions& options, std::ostream& log);

}  // namespace cdpg
