#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bdre/config.hpp"

namespace bdre {

inline constexpr std::string_view kVersion = "0.1.0";

struct CommandOptions {
    std::optional<std::filesystem::path> out_dir;  // overrides output.dir
    std::optional<std::uint64_t> seed;             // overrides sim.seed
    std::size_t threads = 1;
};

struct CheckLine {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct CommandResult {
    std::string command;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    std::vector<CheckLine> checks;
    std::vector<std::string> notes;
    std::vector<std::string> files;  // relative to out_dir, in write order

    bool passed() const;
};

/// invariant | simulate | rates | verify. Writes the command's CSVs,
/// report.txt, config.json and manifest.txt into the output directory.
CommandResult run_command(std::string_view command, RunConfig cfg, const CommandOptions& options);

std::vector<std::string> command_names();

}  // namespace bdre
