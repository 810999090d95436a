#include "dstg/probes.hpp"

#include "dstg/graph.hpp"
#include "dstg/positional.hpp"
#include "dstg/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dstg {

const char* target_name(ProbeTarget t) {
    switch (t) {
    case ProbeTarget::TokenAp: return "token_ap";
    case ProbeTarget::SegmentAp: return "segment_ap";
    case ProbeTarget::IntraSegment: return "intra_segment";
    }
    return "?";
}

ProbeTarget target_from_name(const std::string& name) {
    if (name == "token_ap") return ProbeTarget::TokenAp;
    if (name == "segment_ap") return ProbeTarget::SegmentAp;
    if (name == "intra_segment") return ProbeTarget::IntraSegment;
    throw std::invalid_argument("unknown probe target: " + name);
}

const char* probe_stream_name(ProbeStream s) {
    switch (s) {
    case ProbeStream::Full: return "full";
    case ProbeStream::Ap: return "ap";
    case ProbeStream::Sem: return "sem";
    case ProbeStream::Concat: return "concat";
    }
    return "?";
}

std::vector<ProbeStream> streams_for(const ModelConfig& cfg) {
    if (cfg.has_ap_stream())
        return {ProbeStream::Ap, ProbeStream::Sem, ProbeStream::Concat};
    return {ProbeStream::Full};
}

std::vector<double> target_token_ap(const Document& doc, int max_positions) {
    if (max_positions < 1) throw std::invalid_argument("max_positions must be positive");
    std::vector<double> y(size_t(doc.length()));
    for (int i = 0; i < doc.length(); ++i) y[size_t(i)] = double(i) / double(max_positions);
    return y;
}

std::vector<double> target_segment_ap(const Document& doc, const Vocab& vocab) {
    SegmentLabels labels = segment_labels(doc, vocab);
    std::vector<double> y(size_t(doc.length()));
    for (int i = 0; i < doc.length(); ++i) y[size_t(i)] = double(labels.seg[size_t(i)]);
    return y;
}

std::vector<double> target_intra_segment(const Document& doc, const Vocab& vocab) {
    SegmentLabels labels = segment_labels(doc, vocab);
    std::vector<double> y(size_t(doc.length()));
    for (int i = 0; i < doc.length(); ++i) y[size_t(i)] = labels.frac[size_t(i)];
    return y;
}

namespace {

void check_stream(const ModelConfig& cfg, ProbeStream stream) {
    if (stream != ProbeStream::Full && !cfg.has_ap_stream())
        throw std::invalid_argument(std::string("stream '") + probe_stream_name(stream) +
                                    "' requires a model with an AP stream");
}

// Copies the requested stream's row into out.
void stream_row(const EncoderTrace& trace, int layer, ProbeStream stream, int row,
                real* out) {
    const Tensor& ap = trace.x_ap[size_t(layer)];
    const Tensor& sem = trace.x_sem[size_t(layer)];
    const int da = ap.defined() ? ap.dim(1) : 0;
    const int ds = sem.dim(1);
    const real* ap_v = da > 0 ? ap.data() + size_t(row) * size_t(da) : nullptr;
    const real* sem_v = sem.data() + size_t(row) * size_t(ds);
    switch (stream) {
    case ProbeStream::Ap:
        std::copy(ap_v, ap_v + da, out);
        break;
    case ProbeStream::Sem:
        std::copy(sem_v, sem_v + ds, out);
        break;
    case ProbeStream::Full:
    case ProbeStream::Concat:
        if (da > 0) std::copy(ap_v, ap_v + da, out);
        std::copy(sem_v, sem_v + ds, out + da);
        break;
    }
}

int stream_dim(const ModelConfig& cfg, ProbeStream stream) {
    switch (stream) {
    case ProbeStream::Ap: return cfg.d_ap;
    case ProbeStream::Sem: return cfg.d_sem;
    case ProbeStream::Full:
    case ProbeStream::Concat: return cfg.d_model();
    }
    return 0;
}

Eigen::MatrixXd rows_to_eigen(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("ridge: empty design matrix");
    const size_t cols = rows[0].size();
    if (cols == 0) throw std::invalid_argument("ridge: zero-width design matrix");
    Eigen::MatrixXd m(long(rows.size()), long(cols));
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols)
            throw std::invalid_argument("ridge: ragged design matrix");
        for (size_t c = 0; c < cols; ++c) m(long(r), long(c)) = rows[r][c];
    }
    return m;
}

Ridge ridge_fit_eigen(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
    if (!x.allFinite() || !y.allFinite())
        throw std::invalid_argument("ridge: non-finite inputs");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("ridge: lambda must be a finite nonnegative value");
    Eigen::RowVectorXd x_mean = x.colwise().mean();
    const double y_mean = y.mean();
    Eigen::MatrixXd xc = x.rowwise() - x_mean;
    Eigen::VectorXd yc = y.array() - y_mean;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    Eigen::VectorXd w = gram.ldlt().solve(xc.transpose() * yc);
    Ridge out;
    out.w.assign(w.data(), w.data() + w.size());
    out.b = y_mean - x_mean * w;
    return out;
}

double r2_eigen(const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
    const double mean = y.mean();
    const double ss_tot = (y.array() - mean).square().sum();
    if (ss_tot <= 0.0) throw std::invalid_argument("r2: constant target");
    const double ss_res = (y - pred).array().square().sum();
    return 1.0 - ss_res / ss_tot;
}

} // namespace

FeatureSet extract_features(const Model& model, const std::vector<Document>& docs,
                            const Vocab& vocab, int layer, ProbeStream stream) {
    check_stream(model.cfg, stream);
    if (layer < 0 || layer > model.cfg.layers) throw std::out_of_range("layer out of range");
    if (docs.empty()) throw std::invalid_argument("no documents");
    const int dim = stream_dim(model.cfg, stream);

    std::vector<real> values;
    std::vector<int> doc_of_row;
    for (size_t d = 0; d < docs.size(); ++d) {
        const Document& doc = docs[d];
        Graph g(false);
        EncoderTrace trace = encoder_forward(g, model, doc.ids,
                                             make_positions(doc.length(), 0),
                                             anchor_positions(doc, vocab));
        std::vector<real> row(static_cast<size_t>(dim));
        for (int i = 0; i < doc.length(); ++i) {
            if (vocab.is_special(doc.ids[size_t(i)])) continue;
            stream_row(trace, layer, stream, i, row.data());
            values.insert(values.end(), row.begin(), row.end());
            doc_of_row.push_back(int(d));
        }
    }
    if (doc_of_row.empty())
        throw std::invalid_argument("documents contain no probe-able tokens");
    FeatureSet out;
    out.x = Tensor({int(doc_of_row.size()), dim}, std::move(values));
    out.doc_of_row = std::move(doc_of_row);
    return out;
}

std::vector<double> stack_targets(const std::vector<Document>& docs, const Vocab& vocab,
                                  ProbeTarget target, int max_positions) {
    std::vector<double> out;
    for (const Document& doc : docs) {
        std::vector<double> y;
        switch (target) {
        case ProbeTarget::TokenAp: y = target_token_ap(doc, max_positions); break;
        case ProbeTarget::SegmentAp: y = target_segment_ap(doc, vocab); break;
        case ProbeTarget::IntraSegment: y = target_intra_segment(doc, vocab); break;
        }
        for (int i = 0; i < doc.length(); ++i)
            if (!vocab.is_special(doc.ids[size_t(i)])) out.push_back(y[size_t(i)]);
    }
    return out;
}

Ridge ridge_fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                double lambda) {
    Eigen::MatrixXd xm = rows_to_eigen(x);
    if (size_t(xm.rows()) != y.size())
        throw std::invalid_argument("ridge: row count does not match target length");
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), long(y.size()));
    return ridge_fit_eigen(xm, yv, lambda);
}

std::vector<double> ridge_predict(const Ridge& model,
                                  const std::vector<std::vector<double>>& x) {
    std::vector<double> out;
    out.reserve(x.size());
    for (const std::vector<double>& row : x) {
        if (row.size() != model.w.size())
            throw std::invalid_argument("ridge: feature width does not match the fit");
        double acc = model.b;
        for (size_t i = 0; i < row.size(); ++i) acc += model.w[i] * row[i];
        out.push_back(acc);
    }
    return out;
}

double r2(const std::vector<double>& pred, const std::vector<double>& y) {
    if (pred.size() != y.size()) throw std::invalid_argument("r2: length mismatch");
    if (y.empty()) throw std::invalid_argument("r2: empty target");
    Eigen::Map<const Eigen::VectorXd> pv(pred.data(), long(pred.size()));
    Eigen::Map<const Eigen::VectorXd> yv(y.data(), long(y.size()));
    return r2_eigen(pv, yv);
}

void ProbeOptions::validate() const {
    if (seeds < 1) throw std::invalid_argument("probe seeds must be >= 1");
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
        throw std::invalid_argument("test_fraction must lie in (0, 1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("lambda must be a finite nonnegative value");
}

std::string model_label(const ModelConfig& cfg) {
    std::string label = variant_name(cfg.variant);
    if (cfg.mlm_scope == MlmScope::full) label += "-full";
    return label;
}

const ProbeCell* ProbeReport::cell(int layer, ProbeStream stream) const {
    for (const ProbeCell& c : cells)
        if (c.layer == layer && c.stream == stream) return &c;
    return nullptr;
}

std::vector<ProbeReport> run_probes(const Model& model, const std::vector<Document>& corpus,
                                    const Vocab& vocab,
                                    const std::vector<ProbeTarget>& targets,
                                    const ProbeOptions& opts) {
    opts.validate();
    if (targets.empty()) throw std::invalid_argument("no probe targets requested");
    if (corpus.size() < 2)
        throw std::invalid_argument("probing needs at least two documents to split");
    const ModelConfig& cfg = model.cfg;
    const int L = cfg.layers;
    const int first_state = opts.layer0_embeddings ? 0 : 1;
    const std::vector<ProbeStream> streams = streams_for(cfg);

    // Seeded 80/20 document splits, shared by every cell and target.
    const int n_docs = int(corpus.size());
    int n_test = std::max(1, int(std::lround(opts.test_fraction * n_docs)));
    if (n_test >= n_docs) n_test = n_docs - 1;
    std::vector<std::vector<uint8_t>> doc_in_test(size_t(opts.seeds),
                                                  std::vector<uint8_t>(size_t(n_docs), 0));
    for (int s = 0; s < opts.seeds; ++s) {
        std::vector<int> order(static_cast<size_t>(n_docs));
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng(opts.seed).derive("split").derive(uint64_t(s));
        for (int i = n_docs - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[size_t(rng.below(uint32_t(i + 1)))]);
        for (int i = 0; i < n_test; ++i) doc_in_test[size_t(s)][size_t(order[size_t(i)])] = 1;
    }

    std::vector<std::vector<double>> target_rows;
    for (ProbeTarget t : targets)
        target_rows.push_back(stack_targets(corpus, vocab, t, cfg.max_positions));

    std::vector<ProbeReport> reports(targets.size());
    for (size_t t = 0; t < targets.size(); ++t) {
        reports[t].model_label = model_label(cfg);
        reports[t].target = targets[t];
        reports[t].n_train_docs = n_docs - n_test;
        reports[t].n_test_docs = n_test;
        reports[t].lambda = opts.lambda;
        reports[t].seeds = opts.seeds;
    }

    for (int state = first_state; state <= L; ++state) {
        const int layer_label = state - first_state;
        for (ProbeStream stream : streams) {
            // The final AP state of a semantic-only model receives no training
            // signal; that cell is reported as absent.
            if (stream == ProbeStream::Ap && state == L &&
                cfg.mlm_scope == MlmScope::semantic_only)
                continue;
            FeatureSet features = extract_features(model, corpus, vocab, state, stream);
            const int n_rows = features.x.dim(0);
            const int dim = features.x.dim(1);
            Eigen::MatrixXd x(n_rows, dim);
            const real* v = features.x.data();
            for (int r = 0; r < n_rows; ++r)
                for (int c = 0; c < dim; ++c)
                    x(r, c) = double(v[size_t(r) * size_t(dim) + size_t(c)]);

            for (size_t t = 0; t < targets.size(); ++t) {
                Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
                    target_rows[t].data(), long(target_rows[t].size()));
                std::vector<double> scores;
                scores.reserve(size_t(opts.seeds));
                for (int s = 0; s < opts.seeds; ++s) {
                    std::vector<int> train_rows, test_rows;
                    for (int r = 0; r < n_rows; ++r) {
                        const int d = features.doc_of_row[size_t(r)];
                        (doc_in_test[size_t(s)][size_t(d)] ? test_rows : train_rows)
                            .push_back(r);
                    }
                    Eigen::MatrixXd xtr(long(train_rows.size()), dim);
                    Eigen::VectorXd ytr(long(train_rows.size()));
                    for (size_t r = 0; r < train_rows.size(); ++r) {
                        xtr.row(long(r)) = x.row(train_rows[r]);
                        ytr[long(r)] = y[train_rows[r]];
                    }
                    Ridge fit = ridge_fit_eigen(xtr, ytr, opts.lambda);
                    Eigen::Map<const Eigen::VectorXd> w(fit.w.data(), long(fit.w.size()));
                    Eigen::VectorXd pred(long(test_rows.size()));
                    Eigen::VectorXd yte(long(test_rows.size()));
                    for (size_t r = 0; r < test_rows.size(); ++r) {
                        pred[long(r)] = x.row(test_rows[r]) * w + fit.b;
                        yte[long(r)] = y[test_rows[r]];
                    }
                    scores.push_back(r2_eigen(pred, yte));
                }
                double mean = 0.0;
                for (double r2s : scores) mean += r2s;
                mean /= double(scores.size());
                double var = 0.0;
                for (double r2s : scores) var += (r2s - mean) * (r2s - mean);
                // sample standard deviation over seeds
                double stdev = scores.size() > 1
                                   ? std::sqrt(var / double(scores.size() - 1))
                                   : 0.0;
                ProbeCell cell;
                cell.layer = layer_label;
                cell.stream = stream;
                cell.r2_mean = mean;
                cell.r2_std = stdev;
                reports[t].cells.push_back(cell);
            }
        }
    }
    return reports;
}

ProbeReport run_probe(const Model& model, const std::vector<Document>& corpus,
                      const Vocab& vocab, ProbeTarget target, const ProbeOptions& opts) {
    return run_probes(model, corpus, vocab, {target}, opts)[0];
}

void write_probe_csv(const std::string& path, const ProbeReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "layer,stream,r2_mean,r2_std,n_train_docs,n_test_docs,lambda,seeds\n";
    char line[256];
    for (const ProbeCell& c : report.cells) {
        std::snprintf(line, sizeof line, "%d,%s,%.9g,%.9g,%d,%d,%.9g,%d\n", c.layer,
                      probe_stream_name(c.stream), c.r2_mean, c.r2_std, report.n_train_docs,
                      report.n_test_docs, report.lambda, report.seeds);
        out << line;
    }
}

} // namespace dstg
