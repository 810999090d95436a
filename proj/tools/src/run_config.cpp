#include "dstg_cli/run_config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dstg::cli {
namespace {

// shortest decimal form that parses back to exactly the same double
std::string fmt_double(double v) {
    char buf[64];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
        }
    }
    out += '"';
    return out;
}

long long parse_int(const std::string& text) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(text.c_str(), &end, 10);
    if (errno != 0 || end == text.c_str() || *end != '\0')
        throw std::invalid_argument("expected an integer, got '" + text + "'");
    return v;
}

uint64_t parse_u64(const std::string& text) {
    if (!text.empty() && text[0] == '-')
        throw std::invalid_argument("expected a non-negative integer, got '" + text + "'");
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (errno != 0 || end == text.c_str() || *end != '\0')
        throw std::invalid_argument("expected a non-negative integer, got '" + text + "'");
    return v;
}

double parse_double(const std::string& text) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (errno != 0 || end == text.c_str() || *end != '\0')
        throw std::invalid_argument("expected a number, got '" + text + "'");
    return v;
}

bool parse_bool(const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw std::invalid_argument("expected true or false, got '" + text + "'");
}

SchemaEntry int_entry(std::string key, std::string help, int RunConfig::*field) {
    return {std::move(key), "int", std::move(help),
            [field](const RunConfig& c) { return std::to_string(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = int(parse_int(v)); }};
}

SchemaEntry f64_entry(std::string key, std::string help, double RunConfig::*field) {
    return {std::move(key), "float", std::move(help),
            [field](const RunConfig& c) { return fmt_double(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = parse_double(v); }};
}

SchemaEntry bool_entry(std::string key, std::string help, bool RunConfig::*field) {
    return {std::move(key), "bool", std::move(help),
            [field](const RunConfig& c) { return c.*field ? "true" : "false"; },
            [field](RunConfig& c, const std::string& v) { c.*field = parse_bool(v); }};
}

SchemaEntry str_entry(std::string key, std::string help, std::string RunConfig::*field) {
    return {std::move(key), "string", std::move(help),
            [field](const RunConfig& c) { return quote(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

// string key whose value must come from a fixed name set
SchemaEntry name_entry(std::string key, std::string help, std::string RunConfig::*field,
                       std::vector<std::string> allowed) {
    return {std::move(key), "string", std::move(help),
            [field](const RunConfig& c) { return quote(c.*field); },
            [field, allowed = std::move(allowed)](RunConfig& c, const std::string& v) {
                for (const std::string& a : allowed)
                    if (v == a) {
                        c.*field = v;
                        return;
                    }
                std::string msg = "expected one of {";
                for (size_t i = 0; i < allowed.size(); ++i)
                    msg += (i ? ", " : "") + allowed[i];
                throw std::invalid_argument(msg + "}, got '" + v + "'");
            }};
}

std::vector<SchemaEntry> build_schema() {
    std::vector<SchemaEntry> s;
    s.push_back(name_entry("variant", "model variant", &RunConfig::variant,
                           {"dstg", "ap", "rp", "rope"}));
    s.push_back(name_entry("mlm_scope",
                           "final states feeding the MLM head (disentangled variant)",
                           &RunConfig::mlm_scope, {"semantic_only", "full"}));
    s.push_back(int_entry("layers", "number of encoder layers", &RunConfig::layers));
    s.push_back(int_entry("n_heads", "attention heads per layer", &RunConfig::n_heads));
    s.push_back(int_entry("d_ap",
                          "width of the absolute-position stream (forced to 0 for "
                          "entangled variants)",
                          &RunConfig::d_ap));
    s.push_back(int_entry("d_sem", "width of the semantic stream", &RunConfig::d_sem));
    s.push_back(int_entry("max_positions", "maximum sequence length", &RunConfig::max_positions));
    s.push_back(int_entry("num_buckets", "relative-position bias buckets", &RunConfig::num_buckets));
    s.push_back(int_entry("max_distance", "largest bucketed relative distance", &RunConfig::max_distance));
    s.push_back(f64_entry("norm_eps", "RMSNorm epsilon", &RunConfig::norm_eps));
    s.push_back(int_entry("steps", "optimizer steps", &RunConfig::steps));
    s.push_back(int_entry("batch_size", "documents per step", &RunConfig::batch_size));
    s.push_back(int_entry("warmup", "linear warmup steps before cosine decay", &RunConfig::warmup));
    s.push_back(f64_entry("peak_lr", "learning rate at the end of warmup", &RunConfig::peak_lr));
    s.push_back(f64_entry("weight_decay", "decoupled AdamW weight decay", &RunConfig::weight_decay));
    s.push_back(f64_entry("beta1", "AdamW first-moment decay", &RunConfig::beta1));
    s.push_back(f64_entry("beta2", "AdamW second-moment decay", &RunConfig::beta2));
    s.push_back(f64_entry("adam_eps", "AdamW denominator epsilon", &RunConfig::adam_eps));
    s.push_back(f64_entry("mask_rate", "fraction of maskable positions corrupted per document",
                          &RunConfig::mask_rate));
    s.push_back({"seed", "int", "master RNG seed",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }});
    s.push_back(str_entry("vocab", "vocabulary file (one token per line)", &RunConfig::vocab));
    s.push_back(str_entry("corpus", "directory of .txt corpus files", &RunConfig::corpus));
    s.push_back(str_entry("out",
                          "run directory (empty: derive under the output root, "
                          "see DSTG_OUT_ROOT)",
                          &RunConfig::out));
    s.push_back(int_entry("layer", "layer to analyze (-1 = last available)", &RunConfig::layer));
    s.push_back(int_entry("head", "attention head to render (-1 = all)", &RunConfig::head));
    s.push_back(name_entry("stream", "hidden-state stream for hidden-pca", &RunConfig::stream,
                           {"ap", "sem"}));
    s.push_back(int_entry("doc_index", "corpus document analyzed by attn and hidden-pca",
                          &RunConfig::doc_index));
    s.push_back(int_entry("analysis_docs",
                          "corpus documents averaged by heads (0 = all)", &RunConfig::analysis_docs));
    s.push_back(bool_entry("include_special_rows",
                           "keep anchor-token query rows in head influence averages",
                           &RunConfig::include_special_rows));
    s.push_back(f64_entry("lambda", "ridge penalty for probes and compare", &RunConfig::lambda));
    s.push_back(int_entry("probe_seeds", "independent probe train/test splits", &RunConfig::probe_seeds));
    s.push_back(f64_entry("test_fraction", "held-out fraction of documents per split",
                          &RunConfig::test_fraction));
    s.push_back(bool_entry("layer0_embeddings",
                           "probe the embedding state as layer 0", &RunConfig::layer0_embeddings));
    s.push_back(int_entry("threads", "cap on internal worker threads (0 = no cap)",
                          &RunConfig::threads));
    return s;
}

struct Line {
    std::string key, value;
    bool blank = false;
};

// Splits one config line into key/value. Understands `# comments` (also
// trailing, outside quotes) and double-quoted values with basic escapes.
Line split_line(const std::string& raw) {
    std::string text = raw;
    // strip a trailing comment that is not inside quotes
    bool in_quotes = false;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '"' && (i == 0 || text[i - 1] != '\\')) in_quotes = !in_quotes;
        else if (c == '#' && !in_quotes) {
            text.resize(i);
            break;
        }
    }
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    text = trim(text);
    if (text.empty()) return {.key = "", .value = "", .blank = true};
    size_t eq = text.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected `key = value`");
    Line out;
    out.key = trim(text.substr(0, eq));
    out.value = trim(text.substr(eq + 1));
    if (out.key.empty()) throw std::invalid_argument("missing key before '='");
    if (out.value.empty()) throw std::invalid_argument("missing value after '='");
    if (out.value.front() == '"') {
        if (out.value.size() < 2 || out.value.back() != '"')
            throw std::invalid_argument("unterminated quoted value");
        std::string body = out.value.substr(1, out.value.size() - 2);
        std::string unescaped;
        for (size_t i = 0; i < body.size(); ++i) {
            if (body[i] != '\\') {
                unescaped += body[i];
                continue;
            }
            if (++i == body.size())
                throw std::invalid_argument("dangling escape in quoted value");
            switch (body[i]) {
            case 'n': unescaped += '\n'; break;
            case 't': unescaped += '\t'; break;
            case '"': unescaped += '"'; break;
            case '\\': unescaped += '\\'; break;
            default: throw std::invalid_argument("unsupported escape in quoted value");
            }
        }
        out.value = unescaped;
    } else if (out.value.find_first_of(" \t") != std::string::npos) {
        throw std::invalid_argument("unquoted value contains whitespace");
    }
    return out;
}

} // namespace

const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> s = build_schema();
    return s;
}

const SchemaEntry* schema_find(const std::string& key) {
    for (const SchemaEntry& e : schema())
        if (e.key == key) return &e;
    return nullptr;
}

void parse_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::set<std::string> seen;
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto fail = [&](const std::string& msg) -> void {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + msg);
        };
        Line line;
        try {
            line = split_line(raw);
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        }
        if (line.blank) continue;
        const SchemaEntry* entry = schema_find(line.key);
        if (!entry) fail("unknown key '" + line.key + "'");
        if (!seen.insert(line.key).second) fail("duplicate key '" + line.key + "'");
        try {
            entry->decode(cfg, line.value);
        } catch (const std::invalid_argument& e) {
            fail(line.key + ": " + e.what());
        }
    }
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const SchemaEntry* entry = schema_find(key);
    if (!entry) throw std::runtime_error("unknown configuration key '" + key + "'");
    try {
        entry->decode(cfg, value);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("--" + key + ": " + e.what());
    }
}

std::string resolved_text(const RunConfig& cfg) {
    std::string out;
    for (const SchemaEntry& e : schema()) out += e.key + " = " + e.encode(cfg) + "\n";
    return out;
}

std::string stable_hash(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string run_directory(const RunConfig& cfg, const std::string& command) {
    if (!cfg.out.empty()) return cfg.out;
    const char* env = std::getenv(kOutRootEnv);
    std::string root = env && *env ? env : "runs";
    return root + "/" + command + "-" + stable_hash(command + "\n" + resolved_text(cfg)).substr(0, 12);
}

ModelConfig RunConfig::model_config(int vocab_size) const {
    ModelConfig mc;
    mc.variant = variant_from_name(variant);
    mc.mlm_scope = scope_from_name(mlm_scope);
    mc.layers = layers;
    mc.n_heads = n_heads;
    mc.d_ap = mc.variant == Variant::DSTG ? d_ap : 0;
    mc.d_sem = d_sem;
    mc.max_positions = max_positions;
    mc.num_buckets = num_buckets;
    mc.max_distance = max_distance;
    mc.norm_eps = real(norm_eps);
    mc.vocab_size = vocab_size;
    mc.validate();
    return mc;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = batch_size;
    tc.warmup = warmup;
    tc.peak_lr = peak_lr;
    tc.weight_decay = weight_decay;
    tc.beta1 = beta1;
    tc.beta2 = beta2;
    tc.eps = adam_eps;
    tc.mask.rate = mask_rate;
    tc.seed = seed;
    tc.validate();
    return tc;
}

} // namespace dstg::cli
