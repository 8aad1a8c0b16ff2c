// calib <command> --config <path> [--seed N] [--out DIR]

#include "calib/cli_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

namespace {

int fail(const std::string& command, const std::string& message) {
    const nlohmann::json err = {{"status", "error"}, {"command", command}, {"message", message}};
    std::cerr << err.dump() << "\n";
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kinetic parameter calibration: simulation, regression and learned inverse models"};
    app.set_version_flag("--version", calib::kToolVersion);
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "Simulate one parameter set on a uniform grid"},
        {"generate", "Generate the synthetic training and test sets"},
        {"fit", "Multistart regression on every evaluation sample"},
        {"train-ddl", "Train the direct regression network"},
        {"train-cfm", "Train the flow-matching velocity network"},
        {"predict", "Network predictions and posterior samples for the evaluation set"},
        {"evaluate", "Trajectory and parameter NRMSE per method"},
        {"report", "Parameter tables, posterior spread and NRMSE summary"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "Run configuration (key = value lines)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Override the configured seed");
        sub->add_option("--out", out_dir, "Override the output directory");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        calib::RunConfig config = calib::RunConfig::load(config_path);
        if (seed) config.set("seed", std::to_string(*seed));
        if (out_dir) config.set("out_dir", std::filesystem::absolute(*out_dir).string());
        const calib::PipelineSettings settings = calib::settings_from_config(config);
        calib::run_pipeline(settings, calib::command_from_string(command));
        std::cout << command << ": wrote " << settings.out_dir.string() << " (config " << settings.config_hash
                  << ")\n";
    } catch (const std::exception& e) {
        return fail(command, e.what());
    }
    return 0;
}
