// Structural probes: positional targets, ridge regression, R^2, and the
// per-layer/per-stream probe suite.
#include "dstg/probes.hpp"

#include "dstg/corpus.hpp"
#include "dstg/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

using namespace dstg;

namespace {

Vocab make_vocab() {
    Vocab v;
    v.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ".", "!",
                "a",     "b",     "c",     "d",     "e",      "f", "g",
                "h",     "i",     "j",     "k",     "l",      "m"};
    for (size_t i = 0; i < v.tokens.size(); ++i) v.id_of[v.tokens[i]] = int(i);
    v.pad = 0;
    v.unk = 1;
    v.cls = 2;
    v.sep = 3;
    v.mask = 4;
    return v;
}

Document doc_of(std::vector<int> ids) {
    Document d;
    d.offsets.assign(ids.size(), -1);
    d.ids = std::move(ids);
    return d;
}

ModelConfig tiny_cfg(Variant var = Variant::DSTG, int layers = 2) {
    ModelConfig c;
    c.layers = layers;
    c.n_heads = 2;
    c.d_ap = var == Variant::DSTG ? 4 : 0;
    c.d_sem = 8;
    c.max_positions = 16;
    c.vocab_size = 20;
    c.variant = var;
    return c;
}

std::vector<Document> tiny_corpus(int n_docs) {
    // varied lengths and segmentations; ids 7..13 are plain word tokens, 5 is '.'
    std::vector<Document> docs;
    for (int k = 0; k < n_docs; ++k) {
        std::vector<int> ids = {2};
        int body = 6 + k % 5;
        for (int i = 0; i < body; ++i) {
            ids.push_back(7 + (i + k) % 7);
            if (i % 3 == 2) ids.push_back(5);
        }
        ids.push_back(3);
        docs.push_back(doc_of(std::move(ids)));
    }
    return docs;
}

// Independent ridge oracle: augmented design [X 1] solved by Gaussian
// elimination on the normal equations, with the penalty applied to the weight
// block only. Deliberately avoids the centering formulation under test.
std::pair<std::vector<double>, double> ridge_oracle(const std::vector<std::vector<double>>& x,
                                                    const std::vector<double>& y,
                                                    double lambda) {
    const size_t n = x.size(), d = x[0].size(), m = d + 1;
    std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> row = x[i];
        row.push_back(1.0);
        for (size_t p = 0; p < m; ++p) {
            for (size_t q = 0; q < m; ++q) a[p][q] += row[p] * row[q];
            a[p][m] += row[p] * y[i];
        }
    }
    for (size_t p = 0; p < d; ++p) a[p][p] += lambda;
    for (size_t col = 0; col < m; ++col) { // partial-pivot elimination
        size_t piv = col;
        for (size_t r = col + 1; r < m; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        for (size_t r = 0; r < m; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            for (size_t q = col; q <= m; ++q) a[r][q] -= f * a[col][q];
        }
    }
    std::vector<double> w(d);
    for (size_t p = 0; p < d; ++p) w[p] = a[p][m] / a[p][p];
    return {w, a[d][m] / a[d][d]};
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() /
                ("dstg_probes_" + std::to_string(uintptr_t(this)) + "_" + name))
                   .string();
    }
    ~TempFile() { std::filesystem::remove(path); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("token-level target is the normalized global index") {
    Document doc = doc_of({2, 7, 8, 9, 10, 11, 12, 13, 3});
    std::vector<double> y = target_token_ap(doc, 16);
    REQUIRE(y.size() == 9);
    CHECK(y[0] == 0.0);
    CHECK(y[8] == doctest::Approx(0.5)); // position m/2 with m = 16
    for (size_t i = 1; i < y.size(); ++i) CHECK(y[i] > y[i - 1]);
    CHECK_THROWS_AS(target_token_ap(doc, 0), std::invalid_argument);
}

TEST_CASE("segment-level target is the segment id as a real value") {
    Vocab v = make_vocab();
    Document one = doc_of({2, 7, 8, 9, 3});
    std::vector<double> y1 = target_segment_ap(one, v);
    for (int i = 1; i <= 3; ++i) CHECK(y1[size_t(i)] == 0.0);
    CHECK(y1[0] == -1.0);
    CHECK(y1[4] == -1.0);

    Document three = doc_of({2, 7, 5, 8, 5, 9, 5, 3}); // a. b. c.
    std::vector<double> y3 = target_segment_ap(three, v);
    CHECK(y3[1] == 0.0);
    CHECK(y3[2] == 0.0);
    CHECK(y3[3] == 1.0);
    CHECK(y3[4] == 1.0);
    CHECK(y3[5] == 2.0);
    CHECK(y3[6] == 2.0);
    double prev = 0.0;
    for (int i = 1; i <= 6; ++i) {
        CHECK(y3[size_t(i)] >= prev);
        prev = y3[size_t(i)];
    }
}

TEST_CASE("intra-segment target tracks progress from 0 to 1") {
    Vocab v = make_vocab();
    Document doc = doc_of({2, 7, 8, 5, 9, 3}); // segment [a b .], segment [c]
    std::vector<double> y = target_intra_segment(doc, v);
    CHECK(y[1] == 0.0);                  // segment start
    CHECK(y[2] == doctest::Approx(0.5)); // middle of a 3-token segment
    CHECK(y[3] == 1.0);                  // boundary token
    CHECK(y[4] == 0.0);                  // singleton segment
    CHECK(y[0] == -1.0);
    CHECK(y[5] == -1.0);
}

TEST_CASE("ridge recovers a noiseless affine relation") {
    Rng rng(3);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 50; ++i) {
        double v = rng.normal();
        x.push_back({v});
        y.push_back(2.0 * v + 1.0);
    }
    Ridge fit = ridge_fit(x, y, 1e-8);
    CHECK(fit.w[0] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(fit.b == doctest::Approx(1.0).epsilon(1e-4));
    std::vector<double> pred = ridge_predict(fit, x);
    CHECK(r2(pred, y) >= 0.999);
}

TEST_CASE("a huge penalty drives the weights to zero and the intercept to the mean") {
    Rng rng(5);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    double mean = 0.0;
    for (int i = 0; i < 40; ++i) {
        x.push_back({rng.normal(), rng.normal()});
        y.push_back(3.0 + rng.normal());
        mean += y.back();
    }
    mean /= 40.0;
    Ridge fit = ridge_fit(x, y, 1e9);
    CHECK(std::abs(fit.w[0]) < 1e-6);
    CHECK(std::abs(fit.w[1]) < 1e-6);
    CHECK(fit.b == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("ridge matches an independently solved augmented system") {
    Rng rng(7);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 30; ++i) {
        std::vector<double> row = {rng.normal(), rng.normal(), rng.normal()};
        y.push_back(0.5 * row[0] - 1.25 * row[1] + 2.0 * row[2] + 0.75 + 0.01 * rng.normal());
        x.push_back(std::move(row));
    }
    // At lambda -> 0 the centered formulation and the raw augmented system are
    // mathematically identical; compare them there.
    Ridge fit0 = ridge_fit(x, y, 1e-8);
    auto [w_ref, b_ref] = ridge_oracle(x, y, 1e-8);
    for (size_t i = 0; i < w_ref.size(); ++i)
        CHECK(fit0.w[i] == doctest::Approx(w_ref[i]).epsilon(1e-5));
    CHECK(fit0.b == doctest::Approx(b_ref).epsilon(1e-5));
    // Increasing the penalty must monotonically shrink the weight norm.
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-8, 1.0, 100.0, 1e4}) {
        Ridge fit = ridge_fit(x, y, lambda);
        double norm = 0.0;
        for (double w : fit.w) norm += w * w;
        CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("ridge and r2 validate their inputs") {
    std::vector<std::vector<double>> x = {{1.0}, {2.0}};
    std::vector<double> y = {1.0, 2.0};
    CHECK_THROWS_AS(ridge_fit({}, {}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ridge_fit(x, {1.0}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ridge_fit(x, y, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(ridge_fit({{1.0}, {std::nan("")}}, y, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ridge_fit({{1.0}, {2.0, 3.0}}, y, 1.0), std::invalid_argument);
    Ridge fit = ridge_fit(x, y, 1e-8);
    CHECK_THROWS_AS(ridge_predict(fit, {{1.0, 2.0}}), std::invalid_argument);

    CHECK(r2({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 1.0);
    CHECK(r2({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}) == 0.0);
    CHECK(r2({1.0, 2.0, 4.0}, {1.0, 2.0, 3.0}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(r2({1.0}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(r2({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(r2({1.0, 2.0}, {3.0, 3.0}), std::invalid_argument);
}

TEST_CASE("planted linear signal reaches near-perfect held-out R2") {
    Rng rng(11);
    std::vector<std::vector<double>> xtr, xte;
    std::vector<double> ytr, yte;
    for (int i = 0; i < 200; ++i) {
        double y = rng.uniform();
        std::vector<double> row = {y + 0.01 * rng.normal(), y + 0.01 * rng.normal(),
                                   y + 0.01 * rng.normal()};
        if (i % 5 == 4) {
            xte.push_back(std::move(row));
            yte.push_back(y);
        } else {
            xtr.push_back(std::move(row));
            ytr.push_back(y);
        }
    }
    Ridge fit = ridge_fit(xtr, ytr, 1e-6);
    CHECK(r2(ridge_predict(fit, xte), yte) >= 0.99);
}

TEST_CASE("pure-noise features score near zero held-out across seeds") {
    double total = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        std::vector<std::vector<double>> xtr, xte;
        std::vector<double> ytr, yte;
        for (int i = 0; i < 300; ++i) {
            std::vector<double> row = {rng.normal(), rng.normal(), rng.normal(),
                                       rng.normal()};
            double y = rng.uniform();
            if (i % 5 == 4) {
                xte.push_back(std::move(row));
                yte.push_back(y);
            } else {
                xtr.push_back(std::move(row));
                ytr.push_back(y);
            }
        }
        Ridge fit = ridge_fit(xtr, ytr, 1.0);
        total += r2(ridge_predict(fit, xte), yte);
    }
    CHECK(std::abs(total / 5.0) <= 0.05);
}

TEST_CASE("feature extraction shapes, ordering, and validation") {
    Vocab v = make_vocab();
    Model model = init_model(tiny_cfg(), 13);
    std::vector<Document> docs = {doc_of({v.cls, 7, 8, 5, v.sep}),
                                  doc_of({v.cls, 9, 10, 11, 12, v.sep})};
    FeatureSet ap = extract_features(model, docs, v, 1, ProbeStream::Ap);
    CHECK(ap.x.dim(0) == 3 + 4); // non-special tokens only
    CHECK(ap.x.dim(1) == 4);
    FeatureSet sem = extract_features(model, docs, v, 1, ProbeStream::Sem);
    CHECK(sem.x.dim(1) == 8);
    FeatureSet cat = extract_features(model, docs, v, 1, ProbeStream::Concat);
    CHECK(cat.x.dim(1) == 12);
    FeatureSet full = extract_features(model, docs, v, 1, ProbeStream::Full);
    REQUIRE(full.x.size() == cat.x.size());
    CHECK(std::memcmp(full.x.data(), cat.x.data(), cat.x.size() * sizeof(real)) == 0);
    std::vector<int> expect_doc = {0, 0, 0, 1, 1, 1, 1};
    CHECK(ap.doc_of_row == expect_doc);
    // concat rows are [ap | sem]
    for (int r = 0; r < cat.x.dim(0); ++r) {
        for (int c = 0; c < 4; ++c)
            CHECK(cat.x.data()[size_t(r) * 12 + size_t(c)] ==
                  ap.x.data()[size_t(r) * 4 + size_t(c)]);
        for (int c = 0; c < 8; ++c)
            CHECK(cat.x.data()[size_t(r) * 12 + 4 + size_t(c)] ==
                  sem.x.data()[size_t(r) * 8 + size_t(c)]);
    }

    Model rope = init_model(tiny_cfg(Variant::RoPE), 13);
    CHECK_THROWS_AS(extract_features(rope, docs, v, 0, ProbeStream::Ap),
                    std::invalid_argument);
    CHECK_NOTHROW(extract_features(rope, docs, v, 0, ProbeStream::Full));
    CHECK_THROWS_AS(extract_features(model, docs, v, 3, ProbeStream::Ap), std::out_of_range);
    CHECK_THROWS_AS(extract_features(model, {}, v, 0, ProbeStream::Ap),
                    std::invalid_argument);
    std::vector<Document> no_tokens = {doc_of({v.cls, v.sep})};
    CHECK_THROWS_AS(extract_features(model, no_tokens, v, 0, ProbeStream::Ap),
                    std::invalid_argument);

    std::vector<double> y = stack_targets(docs, v, ProbeTarget::TokenAp, 16);
    REQUIRE(y.size() == 7);
    CHECK(y[0] == doctest::Approx(1.0 / 16));
    CHECK(y[3] == doctest::Approx(1.0 / 16));
}

TEST_CASE("probe suite reports every layer and stream with the last AP cell absent") {
    Vocab v = make_vocab();
    Model model = init_model(tiny_cfg(), 17);
    std::vector<Document> corpus = tiny_corpus(10);
    ProbeOptions opts;
    opts.seeds = 3;
    std::vector<ProbeReport> reports = run_probes(
        model, corpus, v,
        {ProbeTarget::TokenAp, ProbeTarget::SegmentAp, ProbeTarget::IntraSegment}, opts);
    REQUIRE(reports.size() == 3);
    for (const ProbeReport& rep : reports) {
        CHECK(rep.model_label == "dstg");
        CHECK(rep.n_train_docs == 8);
        CHECK(rep.n_test_docs == 2);
        CHECK(rep.seeds == 3);
        // layers 0..2; ap absent at layer 2 -> 3*3 - 1 cells
        CHECK(rep.cells.size() == 8);
        CHECK(rep.cell(2, ProbeStream::Ap) == nullptr);
        CHECK(rep.cell(1, ProbeStream::Ap) != nullptr);
        CHECK(rep.cell(2, ProbeStream::Sem) != nullptr);
        CHECK(rep.cell(2, ProbeStream::Concat) != nullptr);
        for (const ProbeCell& c : rep.cells) {
            CHECK(c.r2_mean <= 1.0);
            CHECK(c.r2_std >= 0.0);
            CHECK(std::isfinite(c.r2_mean));
        }
    }

    // full-scope model keeps the last AP cell
    ModelConfig full_cfg = tiny_cfg();
    full_cfg.mlm_scope = MlmScope::full;
    Model full = init_model(full_cfg, 17);
    ProbeReport rep = run_probe(full, corpus, v, ProbeTarget::TokenAp, opts);
    CHECK(rep.model_label == "dstg-full");
    CHECK(rep.cells.size() == 9);
    CHECK(rep.cell(2, ProbeStream::Ap) != nullptr);

    // baselines probe the single full stream
    Model rope = init_model(tiny_cfg(Variant::RoPE), 17);
    ProbeReport rope_rep = run_probe(rope, corpus, v, ProbeTarget::TokenAp, opts);
    CHECK(rope_rep.model_label == "rope");
    CHECK(rope_rep.cells.size() == 3);
    for (const ProbeCell& c : rope_rep.cells) CHECK(c.stream == ProbeStream::Full);
}

TEST_CASE("probe suite is deterministic and the concat stream dominates") {
    Vocab v = make_vocab();
    Model model = init_model(tiny_cfg(), 19);
    std::vector<Document> corpus = tiny_corpus(12);
    ProbeOptions opts;
    opts.seeds = 5;
    ProbeReport a = run_probe(model, corpus, v, ProbeTarget::TokenAp, opts);
    ProbeReport b = run_probe(model, corpus, v, ProbeTarget::TokenAp, opts);
    REQUIRE(a.cells.size() == b.cells.size());
    for (size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].r2_mean == b.cells[i].r2_mean);
        CHECK(a.cells[i].r2_std == b.cells[i].r2_std);
    }
    for (int layer = 0; layer <= 2; ++layer) {
        const ProbeCell* cat = a.cell(layer, ProbeStream::Concat);
        const ProbeCell* sem = a.cell(layer, ProbeStream::Sem);
        const ProbeCell* ap = a.cell(layer, ProbeStream::Ap);
        REQUIRE(cat != nullptr);
        REQUIRE(sem != nullptr);
        double best = sem->r2_mean;
        if (ap) best = std::max(best, ap->r2_mean);
        CHECK(cat->r2_mean >= best - 0.02);
    }
}

TEST_CASE("probe options are validated and the layer-zero flag relabels") {
    Vocab v = make_vocab();
    Model model = init_model(tiny_cfg(), 23);
    std::vector<Document> corpus = tiny_corpus(8);
    ProbeOptions bad;
    bad.seeds = 0;
    CHECK_THROWS_AS(run_probe(model, corpus, v, ProbeTarget::TokenAp, bad),
                    std::invalid_argument);
    bad = ProbeOptions{};
    bad.test_fraction = 1.0;
    CHECK_THROWS_AS(run_probe(model, corpus, v, ProbeTarget::TokenAp, bad),
                    std::invalid_argument);
    bad = ProbeOptions{};
    bad.lambda = -2.0;
    CHECK_THROWS_AS(run_probe(model, corpus, v, ProbeTarget::TokenAp, bad),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_probes(model, corpus, v, {}, ProbeOptions{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        run_probe(model, {corpus[0]}, v, ProbeTarget::TokenAp, ProbeOptions{}),
        std::invalid_argument);

    ProbeOptions post;
    post.seeds = 2;
    post.layer0_embeddings = false;
    ProbeReport rep = run_probe(model, corpus, v, ProbeTarget::TokenAp, post);
    // states 1..2 relabeled as layers 0..1; ap absent at the final state
    CHECK(rep.cells.size() == 5);
    int max_layer = 0;
    for (const ProbeCell& c : rep.cells) max_layer = std::max(max_layer, c.layer);
    CHECK(max_layer == 1);
    CHECK(rep.cell(1, ProbeStream::Ap) == nullptr);
}

TEST_CASE("probe csv uses the pinned header and one row per cell") {
    Vocab v = make_vocab();
    Model model = init_model(tiny_cfg(Variant::RP), 29);
    std::vector<Document> corpus = tiny_corpus(6);
    ProbeOptions opts;
    opts.seeds = 2;
    ProbeReport rep = run_probe(model, corpus, v, ProbeTarget::SegmentAp, opts);
    TempFile f("probes.csv");
    write_probe_csv(f.path, rep);
    std::string text = slurp(f.path);
    CHECK(text.rfind("layer,stream,r2_mean,r2_std,n_train_docs,n_test_docs,lambda,seeds\n",
                     0) == 0);
    CHECK(size_t(std::count(text.begin(), text.end(), '\n')) == 1 + rep.cells.size());
    CHECK(text.find(",full,") != std::string::npos);

    CHECK(target_name(ProbeTarget::TokenAp) == std::string("token_ap"));
    CHECK(target_name(ProbeTarget::SegmentAp) == std::string("segment_ap"));
    CHECK(target_name(ProbeTarget::IntraSegment) == std::string("intra_segment"));
    CHECK(target_from_name("token_ap") == ProbeTarget::TokenAp);
    CHECK_THROWS_AS(target_from_name("nope"), std::invalid_argument);
    CHECK(probe_stream_name(ProbeStream::Concat) == std::string("concat"));
}
