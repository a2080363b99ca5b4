#include "anosov/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace anosov;

int main(int argc, char** argv)
{
    CLI::App app{"anosov: non-stationary Anosov torus maps"};
    app.require_subcommand(1);

    RunConfig rc;
    bool seed_given = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", rc.config_path, "config file (JSON)")->required();
        sub->add_option("--seed", rc.seed, "run seed (default: config 'seed' or 1)")
            ->each([&](const std::string&) { seed_given = true; });
        sub->add_option("--out", rc.out_dir, "output directory")->capture_default_str();
        sub->add_option("--threads", rc.threads, "worker threads")
            ->check(CLI::Range(1, 256))
            ->capture_default_str();
        sub->add_flag("--force", rc.force, "proceed when the sequence fails validation");
        sub->add_flag("--stamp", rc.stamp, "write a UTC timestamp into output headers");
        sub->add_option("--set", rc.overrides, "override a config field: path=value (repeatable)");
    };
    const char* help[] = {"check the assumptions and report the constants",
                          "dump the finite-time stable/unstable fields on a grid",
                          "evolve a standard family and write snapshots",
                          "holonomy between two nearby unstable segments",
                          "run the coupling ledger for two families",
                          "memory-loss experiment: Delta_n by several methods"};
    for (std::size_t i = 0; i < command_names().size(); ++i)
        add_common(app.add_subcommand(command_names()[i], help[i]));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    rc.command = app.get_subcommands().front()->get_name();

    try {
        rc.config = load_config_file(rc.config_path);
        for (const auto& o : rc.overrides) apply_override(rc.config, o);
        if (!seed_given && rc.config.contains("seed")) rc.seed = rc.config.at("seed").get<std::uint64_t>();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: field 'seed': " << e.what() << "\n";
        return kExitUsage;
    }
    if (rc.stamp) rc.timestamp = utc_timestamp();

    const CommandResult res = run_command(rc);
    for (const auto& m : res.messages) std::cerr << m << "\n";
    if (!res.files.empty()) {
        try {
            write_outputs(rc.out_dir, res.files);
        } catch (const std::exception& e) {
            std::cerr << "output error: " << e.what() << "\n";
            return kExitUsage;
        }
        for (const auto& [name, content] : res.files) std::cout << rc.out_dir << "/" << name << "\n";
    }
    return res.exit_code;
}
