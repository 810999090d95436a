#include "dstg_cli/commands.hpp"

#include "dstg/analysis.hpp"
#include "dstg/corpus.hpp"
#include "dstg/probes.hpp"
#include "dstg/train.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace dstg::cli {
namespace {

// ---------------------------------------------------------------------------
// shared plumbing

// Creates the run directory and writes config.resolved before anything else,
// so every run directory carries its exact configuration even if the command
// fails half way.
std::string prepare_run_dir(const RunConfig& cfg, const std::string& command) {
    std::string dir = run_directory(cfg, command);
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.resolved", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + dir + "/config.resolved");
    out << resolved_text(cfg);
    if (!out) throw std::runtime_error("failed writing " + dir + "/config.resolved");
    return dir;
}

Vocab load_vocab_checked(const RunConfig& cfg) {
    if (!fs::exists(cfg.vocab))
        throw std::runtime_error("vocabulary file not found: " + cfg.vocab);
    return load_vocab(cfg.vocab);
}

std::vector<Document> load_corpus_checked(const RunConfig& cfg, const Vocab& vocab) {
    if (!fs::is_directory(cfg.corpus))
        throw std::runtime_error("corpus directory not found: " + cfg.corpus);
    std::vector<Document> corpus = build_corpus(cfg.corpus, vocab, cfg.max_positions, true);
    if (corpus.empty())
        throw std::runtime_error("corpus directory holds no usable text: " + cfg.corpus);
    return corpus;
}

Checkpoint load_ck(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw std::runtime_error("failed to load checkpoint '" + path + "': " + e.what());
    }
}

void check_tokenizer(const Checkpoint& ck, const Vocab& vocab, const std::string& path) {
    if (ck.model.cfg.vocab_size != vocab.size())
        throw std::runtime_error(
            "tokenizer mismatch for checkpoint '" + path + "': model expects a vocabulary of " +
            std::to_string(ck.model.cfg.vocab_size) + " tokens but '" +
            std::to_string(vocab.size()) + "' were loaded");
}

void require_disentangled(const Checkpoint& ck, const std::string& what) {
    if (!ck.model.cfg.has_ap_stream() || !ck.model.cfg.has_rp_bias())
        throw std::runtime_error(what + " requires a checkpoint of the disentangled variant "
                                        "(dstg); this checkpoint is '" +
                                 variant_name(ck.model.cfg.variant) + "'");
}

void expect_checkpoints(const Invocation& inv, size_t n, const std::string& command) {
    if (inv.checkpoints.size() != n)
        throw std::runtime_error(command + " expects exactly " + std::to_string(n) +
                                 " --checkpoint argument" + (n == 1 ? "" : "s") + ", got " +
                                 std::to_string(inv.checkpoints.size()));
}

ProbeOptions probe_opts(const RunConfig& cfg) {
    ProbeOptions o;
    o.seeds = cfg.probe_seeds;
    o.lambda = cfg.lambda;
    o.test_fraction = cfg.test_fraction;
    o.seed = cfg.seed;
    o.layer0_embeddings = cfg.layer0_embeddings;
    o.validate();
    return o;
}

const Document& doc_at(const std::vector<Document>& corpus, int index) {
    if (index < 0 || size_t(index) >= corpus.size())
        throw std::runtime_error("doc_index " + std::to_string(index) +
                                 " out of range; the corpus has " +
                                 std::to_string(corpus.size()) + " documents");
    return corpus[size_t(index)];
}

std::string fmt_r2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void note_artifact(const std::string& path) { std::printf("wrote: %s\n", path.c_str()); }

// ---------------------------------------------------------------------------
// command-line surface

struct ParsedArgs {
    Invocation inv;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string command;
};

std::unique_ptr<CLI::App> build_app(ParsedArgs& out) {
    auto app = std::make_unique<CLI::App>(
        "dstg: train and dissect disentangled-position transformer encoders");
    app->require_subcommand(1);
    struct Sub {
        const char* name;
        const char* desc;
        bool checkpoints;
        bool matrix;
    };
    const Sub subs[] = {
        {"train", "train a model variant on a corpus; writes loss.csv and a checkpoint", false,
         false},
        {"probe", "ridge-probe checkpoint hidden states for positional structure", true, false},
        {"heads", "attention-head influence taxonomy of a dstg checkpoint", true, false},
        {"spectrum", "PCA + DCT spectrum of the position embedding table or a CSV matrix", true,
         true},
        {"attn", "per-head attention component maps for one document", true, false},
        {"hidden-pca", "2-component PCA of one document's hidden states", true, false},
        {"compare", "per-layer positional R2 of a semantic_only vs a full-scope checkpoint",
         true, false},
    };
    RunConfig defaults;
    for (const Sub& s : subs) {
        CLI::App* sub = app->add_subcommand(s.name, s.desc);
        sub->callback([&out, name = std::string(s.name)] { out.command = name; });
        sub->add_option("--config", out.inv.config_path,
                        "configuration file (flat `key = value` lines)")
            ->group("Inputs");
        if (s.checkpoints)
            sub->add_option("--checkpoint", out.inv.checkpoints, "checkpoint directory")
                ->group("Inputs");
        if (s.matrix)
            sub->add_option("--matrix", out.inv.matrix,
                            "CSV matrix (rows x columns, no header) analyzed instead of a "
                            "checkpoint")
                ->group("Inputs");
        for (const SchemaEntry& e : schema()) {
            std::string help = e.help + " [" + e.type_name + "] (default: " +
                               e.encode(defaults) + ")";
            sub->add_option_function<std::string>(
                   "--" + e.key,
                   [&out, key = e.key](const std::string& v) {
                       out.overrides.emplace_back(key, v);
                   },
                   help)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
                ->group("Configuration keys");
        }
    }
    return app;
}

} // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"train", "probe",      "heads",  "spectrum",
                                                   "attn",  "hidden-pca", "compare"};
    return names;
}

std::string help_text(const std::string& command) {
    ParsedArgs scratch;
    std::unique_ptr<CLI::App> app = build_app(scratch);
    const CLI::App* sub = app->get_subcommand(command); // throws on unknown name
    return sub->help();
}

// ---------------------------------------------------------------------------
// commands

int cmd_train(const RunConfig& cfg, const Invocation&) {
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    ModelConfig mc = cfg.model_config(vocab.size());
    TrainConfig tc = cfg.train_config();
    std::string dir = prepare_run_dir(cfg, "train");
    TrainResult res = train(mc, tc, corpus, vocab, dir);
    std::printf("trained %s (%s) for %d steps; final loss %.6f\n", variant_name(mc.variant),
                scope_name(mc.mlm_scope), res.final_step, double(res.losses.back()));
    note_artifact(dir + "/loss.csv");
    note_artifact(dir + "/checkpoint");
    return 0;
}

int cmd_probe(const RunConfig& cfg, const Invocation& inv) {
    if (inv.checkpoints.empty())
        throw std::runtime_error("probe expects at least one --checkpoint argument");
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    ProbeOptions opts = probe_opts(cfg);
    const std::vector<ProbeTarget> targets = {ProbeTarget::TokenAp, ProbeTarget::SegmentAp,
                                              ProbeTarget::IntraSegment};

    std::string dir = prepare_run_dir(cfg, "probe");
    struct Probed {
        std::string label;
        std::vector<ProbeReport> reports; // one per target
    };
    std::vector<Probed> models;
    std::set<std::string> used_labels;
    for (const std::string& path : inv.checkpoints) {
        Checkpoint ck = load_ck(path);
        check_tokenizer(ck, vocab, path);
        std::vector<ProbeReport> reports = run_probes(ck.model, corpus, vocab, targets, opts);
        std::string label = reports.front().model_label;
        for (int suffix = 2; !used_labels.insert(label).second; ++suffix)
            label = reports.front().model_label + "-" + std::to_string(suffix);
        for (const ProbeReport& rep : reports) {
            std::string path_out =
                dir + "/probes_" + label + "_" + target_name(rep.target) + ".csv";
            write_probe_csv(path_out, rep);
            note_artifact(path_out);
        }
        models.push_back({label, std::move(reports)});
    }

    if (models.size() > 1) {
        for (size_t t = 0; t < targets.size(); ++t) {
            // column per (model, stream); row per probed layer
            std::vector<std::pair<size_t, ProbeStream>> columns;
            int max_layer = 0;
            for (size_t m = 0; m < models.size(); ++m) {
                std::vector<ProbeStream> seen;
                for (const ProbeCell& c : models[m].reports[t].cells) {
                    if (std::find(seen.begin(), seen.end(), c.stream) == seen.end()) {
                        seen.push_back(c.stream);
                        columns.emplace_back(m, c.stream);
                    }
                    max_layer = std::max(max_layer, c.layer);
                }
            }
            std::string path_out =
                dir + "/probe_table_" + target_name(targets[t]) + ".csv";
            std::ofstream out(path_out, std::ios::binary);
            if (!out) throw std::runtime_error("cannot write " + path_out);
            out << "layer";
            for (auto [m, stream] : columns)
                out << "," << models[m].label << "." << probe_stream_name(stream);
            out << "\n";
            for (int layer = 0; layer <= max_layer; ++layer) {
                out << layer;
                for (auto [m, stream] : columns) {
                    const ProbeCell* cell = models[m].reports[t].cell(layer, stream);
                    out << "," << (cell ? fmt_r2(cell->r2_mean) : "");
                }
                out << "\n";
            }
            out.close();
            note_artifact(path_out);
        }
    }
    return 0;
}

int cmd_heads(const RunConfig& cfg, const Invocation& inv) {
    expect_checkpoints(inv, 1, "heads");
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    Checkpoint ck = load_ck(inv.checkpoints[0]);
    check_tokenizer(ck, vocab, inv.checkpoints[0]);
    require_disentangled(ck, "head influence");
    if (cfg.analysis_docs > 0 && size_t(cfg.analysis_docs) < corpus.size())
        corpus.resize(size_t(cfg.analysis_docs));
    HeadInfluenceOptions opts;
    opts.include_special_rows = cfg.include_special_rows;
    std::vector<HeadInfluence> heads = all_head_influences(ck.model, corpus, vocab, opts);
    std::string dir = prepare_run_dir(cfg, "heads");
    write_heads_csv(dir + "/heads.csv", heads);
    for (const HeadInfluence& h : heads)
        std::printf("layer %d head %d  sem %.3f  ap %.3f  rp %.3f\n", h.layer, h.head,
                    h.normalized[0], h.normalized[1], h.normalized[2]);
    note_artifact(dir + "/heads.csv");
    return 0;
}

int cmd_spectrum(const RunConfig& cfg, const Invocation& inv) {
    const bool has_ck = !inv.checkpoints.empty();
    const bool has_matrix = !inv.matrix.empty();
    if (has_ck == has_matrix)
        throw std::runtime_error(
            "spectrum expects exactly one input: --checkpoint or --matrix");
    SpectrumReport report;
    if (has_matrix) {
        report = embedding_spectrum(read_matrix_csv(inv.matrix));
    } else {
        expect_checkpoints(inv, 1, "spectrum");
        Checkpoint ck = load_ck(inv.checkpoints[0]);
        if (!ck.model.cfg.has_ap_table())
            throw std::runtime_error(
                std::string("checkpoint variant '") + variant_name(ck.model.cfg.variant) +
                "' has no absolute-position embedding table; pass --matrix to analyze an "
                "external matrix instead");
        report = embedding_spectrum(ck.model.ap_table);
    }
    std::string dir = prepare_run_dir(cfg, "spectrum");
    write_spectrum_csv(dir + "/spectrum.csv", report);
    size_t show = std::min<size_t>(4, report.variance_ratio.size());
    for (size_t i = 0; i < show; ++i)
        std::printf("pc %zu  variance %.4f  low-frequency share %.4f\n", i + 1,
                    report.variance_ratio[i], report.lowfreq_share[i]);
    note_artifact(dir + "/spectrum.csv");
    return 0;
}

int cmd_attn(const RunConfig& cfg, const Invocation& inv) {
    expect_checkpoints(inv, 1, "attn");
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    Checkpoint ck = load_ck(inv.checkpoints[0]);
    check_tokenizer(ck, vocab, inv.checkpoints[0]);
    require_disentangled(ck, "attention maps");
    const Document& doc = doc_at(corpus, cfg.doc_index);
    const int n_layers = ck.model.cfg.layers;
    const int layer = cfg.layer < 0 ? n_layers - 1 : cfg.layer;
    if (layer < 0 || layer >= n_layers)
        throw std::runtime_error("layer " + std::to_string(layer) +
                                 " out of range; the model has " + std::to_string(n_layers) +
                                 " layers");
    AttentionMapSet maps = attention_maps(ck.model, doc, vocab, layer);
    const int n_heads = ck.model.cfg.n_heads;
    std::vector<int> heads;
    if (cfg.head < 0)
        for (int h = 0; h < n_heads; ++h) heads.push_back(h);
    else if (cfg.head < n_heads)
        heads.push_back(cfg.head);
    else
        throw std::runtime_error("head " + std::to_string(cfg.head) +
                                 " out of range; the model has " + std::to_string(n_heads) +
                                 " heads");
    std::string dir = prepare_run_dir(cfg, "attn");
    for (int h : heads) {
        const std::pair<const char*, const Tensor*> components[] = {
            {"sem", &maps.sem[size_t(h)]},
            {"ap", &maps.ap[size_t(h)]},
            {"rp", &maps.rp[size_t(h)]},
            {"combined", &maps.combined[size_t(h)]},
        };
        for (auto [name, mat] : components) {
            std::string base = dir + "/attn_L" + std::to_string(layer) + "_H" +
                               std::to_string(h) + "_" + name;
            write_matrix_csv(base + ".csv", *mat);
            write_heatmap_svg(base + ".svg", *mat);
            note_artifact(base + ".csv");
            note_artifact(base + ".svg");
        }
    }
    return 0;
}

int cmd_hidden_pca(const RunConfig& cfg, const Invocation& inv) {
    expect_checkpoints(inv, 1, "hidden-pca");
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    Checkpoint ck = load_ck(inv.checkpoints[0]);
    check_tokenizer(ck, vocab, inv.checkpoints[0]);
    const Stream stream = cfg.stream == "ap" ? Stream::AP : Stream::Sem;
    if (stream == Stream::AP && !ck.model.cfg.has_ap_stream())
        throw std::runtime_error("the ap stream requires a dstg checkpoint; this checkpoint "
                                 "is '" +
                                 std::string(variant_name(ck.model.cfg.variant)) +
                                 "' (use --stream sem)");
    const Document& doc = doc_at(corpus, cfg.doc_index);
    const int n_layers = ck.model.cfg.layers;
    int layer = cfg.layer;
    if (layer < 0) {
        // last state that still carries the requested stream
        layer = n_layers;
        if (stream == Stream::AP && ck.model.cfg.mlm_scope == MlmScope::semantic_only)
            layer = n_layers - 1;
    }
    HiddenPcaResult res = hidden_pca(ck.model, doc, vocab, layer, stream);
    std::string dir = prepare_run_dir(cfg, "hidden-pca");
    std::string path = dir + "/hidden_pca_L" + std::to_string(layer) + ".csv";
    write_hidden_pca_csv(path, res);
    std::printf("layer %d %s stream: pc1 %.4f pc2 %.4f of variance\n", layer,
                stream_name(stream), res.variance_ratio[0], res.variance_ratio[1]);
    note_artifact(path);
    return 0;
}

int cmd_compare(const RunConfig& cfg, const Invocation& inv) {
    expect_checkpoints(inv, 2, "compare");
    Vocab vocab = load_vocab_checked(cfg);
    std::vector<Document> corpus = load_corpus_checked(cfg, vocab);
    Checkpoint a = load_ck(inv.checkpoints[0]);
    Checkpoint b = load_ck(inv.checkpoints[1]);
    check_tokenizer(a, vocab, inv.checkpoints[0]);
    check_tokenizer(b, vocab, inv.checkpoints[1]);
    require_disentangled(a, "compare");
    require_disentangled(b, "compare");
    const Checkpoint* sem_only = nullptr;
    const Checkpoint* full = nullptr;
    for (const Checkpoint* ck : {&a, &b})
        (ck->model.cfg.mlm_scope == MlmScope::semantic_only ? sem_only : full) = ck;
    if (!sem_only || !full)
        throw std::runtime_error("compare expects one semantic_only and one full-scope dstg "
                                 "checkpoint, in either order");
    const ModelConfig& ca = sem_only->model.cfg;
    const ModelConfig& cb = full->model.cfg;
    if (ca.layers != cb.layers || ca.n_heads != cb.n_heads || ca.d_ap != cb.d_ap ||
        ca.d_sem != cb.d_sem || ca.max_positions != cb.max_positions)
        throw std::runtime_error("compare expects architecturally identical checkpoints "
                                 "differing only in MLM scope");

    ProbeOptions opts = probe_opts(cfg);
    ProbeReport rep_sem =
        run_probe(sem_only->model, corpus, vocab, ProbeTarget::TokenAp, opts);
    ProbeReport rep_full = run_probe(full->model, corpus, vocab, ProbeTarget::TokenAp, opts);

    int max_layer = 0;
    for (const ProbeReport* rep : {&rep_sem, &rep_full})
        for (const ProbeCell& c : rep->cells) max_layer = std::max(max_layer, c.layer);
    std::string dir = prepare_run_dir(cfg, "compare");
    std::string path = dir + "/compare.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "layer,r2_semantic_only,r2_full\n";
    for (int layer = 0; layer <= max_layer; ++layer) {
        const ProbeCell* cs = rep_sem.cell(layer, ProbeStream::Ap);
        const ProbeCell* cf = rep_full.cell(layer, ProbeStream::Ap);
        out << layer << "," << (cs ? fmt_r2(cs->r2_mean) : "") << ","
            << (cf ? fmt_r2(cf->r2_mean) : "") << "\n";
        std::printf("layer %d  semantic_only %s  full %s\n", layer,
                    cs ? fmt_r2(cs->r2_mean).c_str() : "-",
                    cf ? fmt_r2(cf->r2_mean).c_str() : "-");
    }
    out.close();
    note_artifact(path);
    return 0;
}

int run_cli(int argc, const char* const* argv) {
    ParsedArgs parsed;
    std::unique_ptr<CLI::App> app = build_app(parsed);
    try {
        app->parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app->exit(e);
    }
    try {
        RunConfig cfg;
        if (!parsed.inv.config_path.empty()) parse_config_file(parsed.inv.config_path, cfg);
        for (const auto& [key, value] : parsed.overrides) apply_override(cfg, key, value);
        if (parsed.command == "train") return cmd_train(cfg, parsed.inv);
        if (parsed.command == "probe") return cmd_probe(cfg, parsed.inv);
        if (parsed.command == "heads") return cmd_heads(cfg, parsed.inv);
        if (parsed.command == "spectrum") return cmd_spectrum(cfg, parsed.inv);
        if (parsed.command == "attn") return cmd_attn(cfg, parsed.inv);
        if (parsed.command == "hidden-pca") return cmd_hidden_pca(cfg, parsed.inv);
        if (parsed.command == "compare") return cmd_compare(cfg, parsed.inv);
        throw std::runtime_error("no command selected");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

} // namespace dstg::cli
