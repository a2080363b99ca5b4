#pragma once

// The CLI commands as library calls: each returns its output files in memory
// so the caller (CLI or test) decides where and whether to write them.

#include "anosov/io.hpp"

#include <map>
#include <string>
#include <vector>

namespace anosov {

inline constexpr int kExitPass = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitProperty = 2;

struct CommandResult {
    int exit_code = kExitPass;
    /// file name -> content
    std::map<std::string, std::string> files;
    /// One-line notes for stderr (warnings, verdicts).
    std::vector<std::string> messages;
};

CommandResult cmd_validate(const RunConfig& rc);
CommandResult cmd_fields(const RunConfig& rc);
CommandResult cmd_evolve(const RunConfig& rc);
CommandResult cmd_holonomy(const RunConfig& rc);
CommandResult cmd_couple(const RunConfig& rc);
CommandResult cmd_memloss(const RunConfig& rc);

/// Dispatch on rc.command. ConfigError and std::invalid_argument from config
/// reading map to kExitUsage; numerical failures (std::runtime_error) to
/// kExitProperty, with the message in `messages`.
CommandResult run_command(const RunConfig& rc);

const std::vector<std::string>& command_names();

}  // namespace anosov
