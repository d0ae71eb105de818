#pragma once

#include "eddkit/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace edd {

inline constexpr const char* kVersion = "0.1.0";

struct Invocation {
    std::string subcommand; // train-ensemble | distill | detect | toy | augmented | analyze
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

const std::vector<std::string>& subcommands();

// Written to <out>/manifest-<subcommand>.json once a run succeeds.
struct RunManifest {
    std::string subcommand;
    std::string config_hash;
    std::uint64_t seed = 0;
    struct Artifact {
        std::string path; // relative to the output directory
        std::string hash; // FNV-1a 64 of the file bytes
    };
    std::vector<Artifact> artifacts;
    std::vector<std::pair<std::string, double>> timings; // phase, seconds

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
};

// Effective config after applying --seed and --out.
ExperimentConfig resolve_config(const Invocation& inv);

// Runs one subcommand; errors propagate as edd::Error subclasses.
RunManifest run_subcommand(const Invocation& inv, std::ostream& log);

// 0 success, 2 config or usage error, 3 training divergence, 4 I/O error,
// 1 anything else.
int exit_code_for(const std::exception& e) noexcept;

// Full command-line entry point: parses argv, runs, reports errors on stderr
// and returns the exit code.
int cli_main(int argc, const char* const* argv);

} // namespace edd
