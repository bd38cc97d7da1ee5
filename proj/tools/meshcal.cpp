#include <CLI11.hpp>

#include <string>
#include <vector>

#include "meshcal/cli_commands.hpp"
#include "meshcal/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"MZI mesh optical matrix multiplier calibration and surrogate modeling toolkit"};
    app.set_version_flag("--version", meshcal::kVersion);
    app.require_subcommand(1);

    struct Common {
        std::string config_path;
        std::string out_dir = "run";
        std::vector<std::string> overrides;
        int jobs = 0;
    };
    std::map<std::string, Common> commons;
    for (const char* name : {"generate", "fit", "evaluate", "sweep", "program", "task", "report"}) {
        CLI::App* sub = app.add_subcommand(name);
        Common& c = commons[name];
        sub->add_option("-c,--config", c.config_path, "run configuration file (TOML-style key = value)");
        sub->add_option("-o,--out", c.out_dir, "output directory")->capture_default_str();
        sub->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
        sub->add_option("-j,--jobs", c.jobs, "worker threads (0 = hardware)")->capture_default_str();
    }

    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();
    const Common& c = commons[name];
    try {
        meshcal::RunConfig cfg =
            c.config_path.empty() ? meshcal::RunConfig{} : meshcal::RunConfig::parse_file(c.config_path);
        for (const std::string& o : c.overrides) cfg.set_override(o);
        if (c.jobs > 0) cfg.set("jobs", std::to_string(c.jobs));
        return meshcal::cli::run_command(name, cfg, c.out_dir);
    } catch (const meshcal::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return meshcal::cli::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return meshcal::cli::kExitConfig;
    }
}
