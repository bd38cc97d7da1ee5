#pragma once

#include <filesystem>
#include <string>

#include "meshcal/run_config.hpp"

namespace meshcal::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

int cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_fit(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_sweep(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_program(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_task(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_report(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Dispatches a subcommand by name and maps exceptions onto the exit
/// codes above (config errors 2, numerical failures 3, I/O 4).
int run_command(const std::string& name, const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace meshcal::cli
