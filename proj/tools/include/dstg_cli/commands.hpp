#pragma once

#include "dstg_cli/run_config.hpp"

#include <string>
#include <vector>

namespace dstg::cli {

// Per-invocation inputs that are not configuration: the config file and the
// artifact paths a subcommand operates on.
struct Invocation {
    std::string config_path;
    std::vector<std::string> checkpoints;
    std::string matrix; // spectrum: CSV matrix analyzed instead of a checkpoint
};

// Subcommand names, in help order.
const std::vector<std::string>& command_names();

// The full help text the binary prints for one subcommand (as shown by
// `dstg <command> --help`). Throws std::invalid_argument on unknown names.
std::string help_text(const std::string& command);

// Command bodies. Each resolves the run directory, writes config.resolved
// first, then produces the artifacts described in its help text. Errors are
// reported by exception; the caller turns them into exit status 1.
int cmd_train(const RunConfig& cfg, const Invocation& inv);
int cmd_probe(const RunConfig& cfg, const Invocation& inv);
int cmd_heads(const RunConfig& cfg, const Invocation& inv);
int cmd_spectrum(const RunConfig& cfg, const Invocation& inv);
int cmd_attn(const RunConfig& cfg, const Invocation& inv);
int cmd_hidden_pca(const RunConfig& cfg, const Invocation& inv);
int cmd_compare(const RunConfig& cfg, const Invocation& inv);

// Full argv entry point: parses flags, merges config file and overrides,
// dispatches, and maps exceptions to stderr + nonzero exit.
int run_cli(int argc, const char* const* argv);

} // namespace dstg::cli
