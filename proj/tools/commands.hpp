#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace labelflow::cli {

/// Exit codes shared by every command.
enum ExitCode : int {
    kOk = 0,
    kValidation = 2,
    kIo = 3,
    kSolver = 4,
    kReplayMismatch = 5,
};

/// Registers every subcommand on `app`. After a successful parse, `selected`
/// runs the chosen command and returns its exit code.
void register_commands(CLI::App& app, std::function<int()>& selected);

}  // namespace labelflow::cli
