// Microbenchmarks for the training and analysis hot paths. Sizes match the
// desk-scale defaults so regressions map directly onto wall-clock changes in
// the 300-step training criterion.
#include "dstg/analysis.hpp"
#include "dstg/corpus.hpp"
#include "dstg/graph.hpp"
#include "dstg/model.hpp"
#include "dstg/positional.hpp"
#include "dstg/probes.hpp"
#include "dstg/rng.hpp"
#include "dstg/train.hpp"

#include <benchmark/benchmark.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace dstg;

const Vocab& vocab() {
    static Vocab v = load_vocab(std::string(DSTG_DATA_DIR) + "/vocab.txt");
    return v;
}

const std::vector<Document>& corpus() {
    static std::vector<Document> docs = build_corpus(DSTG_DATA_DIR, vocab(), 128, true);
    return docs;
}

ModelConfig desk_config(Variant variant) {
    ModelConfig mc;
    mc.vocab_size = vocab().size();
    mc.variant = variant;
    if (variant != Variant::DSTG) mc.d_ap = 0;
    return mc;
}

const Model& desk_model(Variant variant) {
    static Model models[4] = {
        init_model(desk_config(Variant::DSTG), 7),
        init_model(desk_config(Variant::AP), 7),
        init_model(desk_config(Variant::RP), 7),
        init_model(desk_config(Variant::RoPE), 7),
    };
    return models[int(variant)];
}

void bm_tokenize(benchmark::State& state) {
    // retokenize the raw text behind the bundled corpus
    std::ifstream in(std::string(DSTG_DATA_DIR) + "/corpus/part0.txt", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string raw = ss.str();
    int64_t tokens = 0;
    for (auto _ : state) {
        Document doc = tokenize(raw, vocab(), 512);
        tokens = doc.length();
        benchmark::DoNotOptimize(doc);
    }
    state.counters["tokens"] = double(tokens);
    state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(raw.size()));
}
BENCHMARK(bm_tokenize)->Unit(benchmark::kMillisecond);

void forward_only(benchmark::State& state, Variant variant) {
    const Model& model = desk_model(variant);
    const Document& doc = corpus().front();
    const std::vector<int> specials = anchor_positions(doc, vocab());
    const std::vector<int> positions = make_positions(doc.length(), 0);
    for (auto _ : state) {
        Graph g(false);
        EncoderTrace trace = encoder_forward(g, model, doc.ids, positions, specials);
        benchmark::DoNotOptimize(trace);
    }
}
void bm_forward_dstg(benchmark::State& s) { forward_only(s, Variant::DSTG); }
void bm_forward_rope(benchmark::State& s) { forward_only(s, Variant::RoPE); }
BENCHMARK(bm_forward_dstg)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_forward_rope)->Unit(benchmark::kMillisecond);

void bm_train_step(benchmark::State& state) {
    ModelConfig mc = desk_config(Variant::DSTG);
    TrainConfig tc;
    tc.steps = 1 << 20; // schedule horizon only; we drive steps manually
    Model model = init_model(mc, 7);
    AdamW opt(model, tc);
    Rng rng(11);
    int step = 0;
    for (auto _ : state) {
        const Document& doc = corpus()[size_t(step) % corpus().size()];
        Graph g(true);
        MaskedDoc masked = mask_tokens(doc, vocab(), rng.derive(uint64_t(step)), tc.mask);
        EncoderTrace trace =
            encoder_forward(g, model, masked.ids, make_positions(doc.length(), 0),
                            anchor_positions(doc, vocab()));
        Tensor loss = mlm_loss_rows(g, model, trace, masked.rows, masked.row_labels);
        g.backward(loss);
        opt.step(model, g, 1e-3);
        benchmark::DoNotOptimize(loss.item());
        ++step;
    }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

void bm_dct(benchmark::State& state) {
    std::vector<double> series(128);
    Rng rng(3);
    for (double& x : series) x = rng.normal();
    for (auto _ : state) {
        std::vector<double> out = dct_type2(series);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(bm_dct);

void bm_spectrum(benchmark::State& state) {
    const Model& model = desk_model(Variant::DSTG);
    for (auto _ : state) {
        SpectrumReport rep = embedding_spectrum(model.ap_table);
        benchmark::DoNotOptimize(rep);
    }
}
BENCHMARK(bm_spectrum)->Unit(benchmark::kMicrosecond);

void bm_head_influence(benchmark::State& state) {
    const Model& model = desk_model(Variant::DSTG);
    std::vector<Document> docs(corpus().begin(), corpus().begin() + 4);
    for (auto _ : state) {
        std::vector<HeadInfluence> heads = all_head_influences(model, docs, vocab());
        benchmark::DoNotOptimize(heads);
    }
}
BENCHMARK(bm_head_influence)->Unit(benchmark::kMillisecond);

void bm_ridge_fit(benchmark::State& state) {
    Rng rng(5);
    const int n = 3000, d = 64;
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) x[size_t(i)][size_t(j)] = rng.normal();
        y[size_t(i)] = rng.normal();
    }
    for (auto _ : state) {
        Ridge fit = ridge_fit(x, y, 1.0);
        benchmark::DoNotOptimize(fit);
    }
}
BENCHMARK(bm_ridge_fit)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
