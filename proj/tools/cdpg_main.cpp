#include "cdpg/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Risk-sensitive categorical distributional policy gradients on tabular MDPs"};
    app.require_subcommand(1);

    cdpg::CliOptions options;
    std::uint64_t seed = 0;
    std::string policy;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", options.config_path, "Experiment config (INI or .json)")
            ->required();
        sub->add_option("--out", "Output directory (overrides run.output_dir)")
            ->type_name("DIR")
            ->each([&](const std::string& v) { options.out_dir = v; });
        sub->add_option("--seed", seed, "Run a single seed (overrides run.seeds)")
            ->each([&](const std::string&) { options.seed = seed; });
        sub->add_flag("--quiet", options.quiet, "Only print errors");
    };

    auto* train = app.add_subcommand("train", "Train the configured algorithms on every seed");
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a fixed policy's return distributions");
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference risk gradients");
    auto* compare = app.add_subcommand("compare", "Run CDPG and SPG on matched seeds");
    for (auto* sub : {train, evaluate, gradcheck, compare})
        add_common(sub);
    evaluate->add_option("--policy", policy, "safe, shortest, uniform, or a policy JSON file")
        ->each([&](const std::string& v) { options.policy_path = v; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cdpg::exit_code::kSuccess : cdpg::exit_code::kConfigError;
    }

    if (train->parsed())
        return cdpg::cmd_train(options, std::cerr);
    if (evaluate->parsed())
        return cdpg::cmd_evaluate(options, std::cerr);
    if (gradcheck->parsed())
        return cdpg::cmd_gradcheck(options, std::cerr);
    return cdpg::cmd_compare(options, std::cerr);
}
