#pragma once

#include "dstg/model.hpp"
#include "dstg/train.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dstg::cli {

// Merged settings for every subcommand. Each field is exposed as exactly one
// configuration key (see schema()); unknown keys are rejected everywhere.
struct RunConfig {
    // model
    std::string variant = "dstg";
    std::string mlm_scope = "semantic_only";
    int layers = 2;
    int n_heads = 4;
    int d_ap = 8;
    int d_sem = 56;
    int max_positions = 128;
    int num_buckets = 32;
    int max_distance = 128;
    double norm_eps = 1e-6;
    // training
    int steps = 300;
    int batch_size = 8;
    int warmup = 30;
    double peak_lr = 1e-2;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double mask_rate = 0.15;
    uint64_t seed = 42;
    // paths
    std::string vocab = "data/vocab.txt";
    std::string corpus = "data";
    std::string out;
    // analysis
    int layer = -1;
    int head = -1;
    std::string stream = "ap";
    int doc_index = 0;
    int analysis_docs = 8;
    bool include_special_rows = true;
    // probes
    double lambda = 1.0;
    int probe_seeds = 5;
    double test_fraction = 0.2;
    bool layer0_embeddings = true;
    // execution
    int threads = 0;

    // Derived views. Both validate and throw std::invalid_argument on a
    // config that the core model/trainer would reject.
    ModelConfig model_config(int vocab_size) const;
    TrainConfig train_config() const;
};

// One configuration key: its name, a human-readable type tag, help text, and
// accessors that move a textual value in and out of a RunConfig.
struct SchemaEntry {
    std::string key;
    std::string type_name; // "int", "float", "bool", "string"
    std::string help;
    std::function<std::string(const RunConfig&)> encode;
    std::function<void(RunConfig&, const std::string&)> decode; // throws on bad value
};

// The full key list, in canonical order. Single source of truth for config
// files, command-line overrides, --help, and config.resolved.
const std::vector<SchemaEntry>& schema();

// Looks up a key; returns nullptr when unknown.
const SchemaEntry* schema_find(const std::string& key);

// Parses a flat key/value file (TOML-compatible subset: `key = value`, blank
// lines, `#` comments, optionally quoted strings) into cfg. Throws
// std::runtime_error with a `<path>:<line>: message` prefix on any problem,
// including unknown and duplicate keys.
void parse_config_file(const std::string& path, RunConfig& cfg);

// Applies one textual override; throws std::runtime_error mentioning the key
// when it is unknown or its value does not parse.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical snapshot: one `key = value` line per schema entry, in schema
// order. parse_config_file(resolved_text(cfg)) reproduces cfg exactly.
std::string resolved_text(const RunConfig& cfg);

// Stable 64-bit FNV-1a hash of a string, as 16 hex digits.
std::string stable_hash(const std::string& text);

// Environment variable consulted for the default output root.
inline constexpr const char* kOutRootEnv = "DSTG_OUT_ROOT";

// The directory a command writes into: cfg.out when set, otherwise
// `<$DSTG_OUT_ROOT or "runs">/<command>-<hash of the resolved config>`.
std::string run_directory(const RunConfig& cfg, const std::string& command);

} // namespace dstg::cli
