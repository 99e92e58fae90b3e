#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bdre/commands.hpp"
#include "bdre/config.hpp"
#include "bdre/error.hpp"

namespace {

std::optional<std::string> env_var(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Birth-death processes in an interactive random environment"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> out_dir;
    for (const auto& name : bdre::command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "overrides sim.seed");
        sub->add_option("--threads", threads, "worker threads (BDRE_THREADS)");
        sub->add_option("--out", out_dir, "output directory (BDRE_OUT_DIR, then output.dir)");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        bdre::CommandOptions opt;
        opt.seed = seed;
        if (!out_dir) out_dir = env_var("BDRE_OUT_DIR");
        if (out_dir) opt.out_dir = *out_dir;
        if (!threads) {
            if (auto t = env_var("BDRE_THREADS")) threads = static_cast<std::size_t>(std::stoul(*t));
        }
        opt.threads = threads.value_or(1);
        const bdre::CommandResult r = bdre::run_command(command, bdre::load_config(config_path), opt);
        for (const auto& c : r.checks) {
            std::cout << c.name << ": " << (c.passed ? "PASS" : "FAIL");
            if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
            std::cout << "\n";
        }
        std::cout << "wrote " << r.files.size() << " files to " << r.out_dir.string() << "\n";
        return r.passed() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "bdre " << command << ": " << e.what() << "\n";
        return 2;
    }
}
