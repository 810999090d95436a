#include "dstg/analysis.hpp"

#include "dstg/graph.hpp"
#include "dstg/positional.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dstg {

namespace {

constexpr double kPi = 3.14159265358979323846;

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("matrix has no rows");
    const size_t cols = rows[0].size();
    if (cols == 0) throw std::invalid_argument("matrix has no columns");
    Eigen::MatrixXd m(long(rows.size()), long(cols));
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols)
            throw std::invalid_argument("matrix rows have unequal lengths");
        for (size_t c = 0; c < cols; ++c) m(long(r), long(c)) = rows[r][c];
    }
    return m;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
    if (!t.defined() || t.ndim() != 2)
        throw std::invalid_argument("expected a 2-D tensor");
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    const real* v = t.data();
    for (int r = 0; r < t.dim(0); ++r)
        for (int c = 0; c < t.dim(1); ++c) m(r, c) = double(v[size_t(r) * size_t(t.dim(1)) + size_t(c)]);
    return m;
}

// Centered PCA scores and variance ratios via SVD. Returns scores (rows x k)
// with columns ordered by decreasing singular value.
struct PcaResult {
    Eigen::MatrixXd scores;
    std::vector<double> variance_ratio;
    double total_variance = 0.0;
};

PcaResult pca_of(const Eigen::MatrixXd& e) {
    Eigen::MatrixXd centered = e.rowwise() - e.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered,
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    PcaResult out;
    double total = 0.0;
    for (long i = 0; i < sv.size(); ++i) total += sv[i] * sv[i];
    out.total_variance = total;
    out.variance_ratio.resize(size_t(sv.size()), 0.0);
    if (total > 0.0)
        for (long i = 0; i < sv.size(); ++i)
            out.variance_ratio[size_t(i)] = sv[i] * sv[i] / total;
    out.scores = svd.matrixU() * sv.asDiagonal();
    return out;
}

void ensure_disentangled(const Model& model, const char* what) {
    if (!model.cfg.has_ap_stream() || !model.cfg.has_rp_bias())
        throw std::invalid_argument(std::string(what) +
                                    " requires the disentangled variant with an AP stream");
}

EncoderTrace captured_forward(Graph& g, const Model& model, const Document& doc,
                              const Vocab& vocab) {
    ForwardOptions opts;
    opts.capture_heads = true;
    return encoder_forward(g, model, doc.ids, make_positions(doc.length(), 0),
                           anchor_positions(doc, vocab), opts);
}

// Row-stochastic distribution from one logit row, computed in double.
void softmax_row(const std::vector<double>& logits, std::vector<double>& probs) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    probs.resize(logits.size());
    for (size_t j = 0; j < logits.size(); ++j) {
        probs[j] = std::exp(logits[j] - mx);
        sum += probs[j];
    }
    for (double& p : probs) p /= sum;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

} // namespace

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
    double kl = 0.0;
    for (size_t j = 0; j < p.size(); ++j)
        if (p[j] > 0.0) kl += p[j] * std::log(p[j] / q[j]);
    return std::max(kl, 0.0); // clamp tiny negative rounding residue
}

std::vector<double> dct_type2(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("dct_type2: empty signal");
    const size_t m = x.size();
    std::vector<double> out(m, 0.0);
    for (size_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (size_t n = 0; n < m; ++n)
            acc += x[n] * std::cos(kPi * (double(n) + 0.5) * double(k) / double(m));
        out[k] = acc;
    }
    return out;
}

static SpectrumReport spectrum_of(const Eigen::MatrixXd& e) {
    PcaResult pca = pca_of(e);
    SpectrumReport report;
    report.variance_ratio = pca.variance_ratio;
    report.total_variance = pca.total_variance;
    const long n_pc = pca.scores.cols();
    report.dct_power.reserve(size_t(n_pc));
    report.lowfreq_share.reserve(size_t(n_pc));
    for (long i = 0; i < n_pc; ++i) {
        std::vector<double> series(size_t(pca.scores.rows()));
        for (long r = 0; r < pca.scores.rows(); ++r) series[size_t(r)] = pca.scores(r, i);
        std::vector<double> bins = dct_type2(series);
        double total = 0.0, low = 0.0;
        for (size_t k = 0; k < bins.size(); ++k) {
            bins[k] *= bins[k];
            total += bins[k];
            if (k < 4) low += bins[k];
        }
        report.lowfreq_share.push_back(total > 0.0 ? low / total : 0.0);
        report.dct_power.push_back(std::move(bins));
    }
    return report;
}

SpectrumReport embedding_spectrum(const std::vector<std::vector<double>>& e) {
    return spectrum_of(to_eigen(e));
}

SpectrumReport embedding_spectrum(const Tensor& e) { return spectrum_of(to_eigen(e)); }

void write_spectrum_csv(const std::string& path, const SpectrumReport& report) {
    std::ofstream out = open_out(path);
    out << "pc,variance_ratio,lowfreq_share\n";
    char line[128];
    for (size_t i = 0; i < report.variance_ratio.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", i, report.variance_ratio[i],
                      report.lowfreq_share[i]);
        out << line;
    }
}

std::vector<std::vector<double>> read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            size_t used = 0;
            double value = 0.0;
            try {
                value = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": non-numeric cell '" + cell + "'");
            }
            if (used != cell.size())
                throw std::runtime_error(path + ": non-numeric cell '" + cell + "'");
            row.push_back(value);
        }
        if (!rows.empty() && row.size() != rows[0].size())
            throw std::runtime_error(path + ": rows have unequal lengths");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

// Accumulates, for one captured forward, the per-row KL of each component
// removal into sums[layer][head][comp] and bumps the row counter.
void accumulate_kl(const EncoderTrace& trace, const std::vector<int>& specials,
                   bool include_special_rows,
                   std::vector<std::vector<std::array<double, 3>>>& sums, double& n_rows) {
    const int n = trace.x_sem[0].dim(0);
    std::vector<uint8_t> is_special(size_t(n), 0);
    for (int s : specials) is_special[size_t(s)] = 1;

    std::vector<double> l_true(static_cast<size_t>(n)), l_ablate(static_cast<size_t>(n));
    std::vector<double> p(static_cast<size_t>(n)), q(static_cast<size_t>(n));
    double rows_this_doc = 0.0;
    bool counted = false;
    for (size_t l = 0; l < trace.heads.size(); ++l) {
        for (size_t h = 0; h < trace.heads[l].size(); ++h) {
            const HeadTrace& ht = trace.heads[l][h];
            const real* wsem = ht.w_sem.data();
            const real* wap = ht.w_ap_used.data();
            const real* bias = ht.b.data();
            for (int i = 0; i < n; ++i) {
                if (!include_special_rows && is_special[size_t(i)]) continue;
                const size_t base = size_t(i) * size_t(n);
                for (int j = 0; j < n; ++j) {
                    l_true[size_t(j)] = double(wsem[base + size_t(j)]) +
                                        double(wap[base + size_t(j)]) +
                                        double(bias[base + size_t(j)]);
                }
                softmax_row(l_true, p);
                for (int comp = 0; comp < 3; ++comp) {
                    for (int j = 0; j < n; ++j) {
                        const size_t q_idx = base + size_t(j);
                        double v = l_true[size_t(j)];
                        if (comp == 0) v -= double(wsem[q_idx]);
                        if (comp == 1) v -= double(wap[q_idx]);
                        if (comp == 2) v -= double(bias[q_idx]);
                        l_ablate[size_t(j)] = v;
                    }
                    softmax_row(l_ablate, q);
                    sums[l][h][size_t(comp)] += kl_divergence(p, q);
                }
                if (!counted) rows_this_doc += 1.0;
            }
            counted = true; // row count is identical for every head
        }
    }
    n_rows += rows_this_doc;
}

} // namespace

std::vector<HeadInfluence> all_head_influences(const Model& model,
                                               const std::vector<Document>& docs,
                                               const Vocab& vocab,
                                               const HeadInfluenceOptions& opts) {
    ensure_disentangled(model, "head influence");
    if (docs.empty()) throw std::invalid_argument("head influence: no documents");
    const int L = model.cfg.layers;
    const int H = model.cfg.n_heads;
    std::vector<std::vector<std::array<double, 3>>> sums(
        size_t(L), std::vector<std::array<double, 3>>(size_t(H), {0.0, 0.0, 0.0}));
    double n_rows = 0.0;
    for (const Document& doc : docs) {
        Graph g(false);
        EncoderTrace trace = captured_forward(g, model, doc, vocab);
        accumulate_kl(trace, anchor_positions(doc, vocab), opts.include_special_rows, sums,
                      n_rows);
    }
    if (n_rows == 0.0)
        throw std::invalid_argument("head influence: no query rows to average over");
    std::vector<HeadInfluence> out;
    out.reserve(size_t(L * H));
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            HeadInfluence hi;
            hi.layer = l;
            hi.head = h;
            double total = 0.0;
            for (int c = 0; c < 3; ++c) {
                hi.raw[size_t(c)] = sums[size_t(l)][size_t(h)][size_t(c)] / n_rows;
                total += hi.raw[size_t(c)];
            }
            if (total > 0.0)
                for (int c = 0; c < 3; ++c) hi.normalized[size_t(c)] = hi.raw[size_t(c)] / total;
            out.push_back(hi);
        }
    }
    return out;
}

HeadInfluence head_influence(const Model& model, const std::vector<Document>& docs,
                             const Vocab& vocab, int layer, int head,
                             const HeadInfluenceOptions& opts) {
    if (layer < 0 || layer >= model.cfg.layers) throw std::out_of_range("layer out of range");
    if (head < 0 || head >= model.cfg.n_heads) throw std::out_of_range("head out of range");
    std::vector<HeadInfluence> all = all_head_influences(model, docs, vocab, opts);
    return all[size_t(layer * model.cfg.n_heads + head)];
}

void write_heads_csv(const std::string& path, const std::vector<HeadInfluence>& heads) {
    std::ofstream out = open_out(path);
    out << "layer,head,score_sem,score_ap,score_rp,norm_sem,norm_ap,norm_rp\n";
    char line[256];
    for (const HeadInfluence& h : heads) {
        std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", h.layer,
                      h.head, h.raw[0], h.raw[1], h.raw[2], h.normalized[0], h.normalized[1],
                      h.normalized[2]);
        out << line;
    }
}

// ---------------------------------------------------------------------------

AttentionMapSet attention_maps(const Model& model, const Document& doc, const Vocab& vocab,
                               int layer) {
    ensure_disentangled(model, "attention maps");
    if (layer < 0 || layer >= model.cfg.layers) throw std::out_of_range("layer out of range");
    Graph g(false);
    EncoderTrace trace = captured_forward(g, model, doc, vocab);
    AttentionMapSet maps;
    maps.layer = layer;
    for (int h = 0; h < model.cfg.n_heads; ++h) {
        const HeadTrace& ht = trace.heads[size_t(layer)][size_t(h)];
        maps.sem.push_back(g.softmax_rows(ht.w_sem));
        maps.ap.push_back(g.softmax_rows(ht.w_ap_used));
        maps.rp.push_back(g.softmax_rows(ht.b));
        maps.combined.push_back(ht.attn);
    }
    return maps;
}

void write_matrix_csv(const std::string& path, const Tensor& mat) {
    if (!mat.defined() || mat.ndim() != 2)
        throw std::invalid_argument("write_matrix_csv: expected a 2-D tensor");
    std::ofstream out = open_out(path);
    char cell[64];
    const real* v = mat.data();
    for (int r = 0; r < mat.dim(0); ++r) {
        for (int c = 0; c < mat.dim(1); ++c) {
            std::snprintf(cell, sizeof cell, "%.9g", double(v[size_t(r) * size_t(mat.dim(1)) + size_t(c)]));
            out << (c ? "," : "") << cell;
        }
        out << '\n';
    }
}

void write_heatmap_svg(const std::string& path, const Tensor& mat) {
    if (!mat.defined() || mat.ndim() != 2)
        throw std::invalid_argument("write_heatmap_svg: expected a 2-D tensor");
    const int rows = mat.dim(0), cols = mat.dim(1);
    const real* v = mat.data();
    real lo = v[0], hi = v[0];
    for (size_t i = 0; i < mat.size(); ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    const double span = double(hi) - double(lo);
    const int cell = std::max(1, 512 / std::max(rows, cols));
    std::ofstream out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * cell
        << "\" height=\"" << rows * cell << "\">\n";
    char buf[160];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double x = double(v[size_t(r) * size_t(cols) + size_t(c)]);
            const double t = span > 0.0 ? (x - double(lo)) / span : 0.0;
            // monotone ramp: white (0) -> deep blue (1)
            const int red = int(std::lround(255.0 * (1.0 - t)));
            const int green = int(std::lround(255.0 * (1.0 - 0.75 * t)));
            const int blue = int(std::lround(255.0 - 115.0 * t));
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"rgb(%d,%d,%d)\"/>\n",
                          c * cell, r * cell, cell, cell, red, green, blue);
            out << buf;
        }
    }
    out << "</svg>\n";
}

// ---------------------------------------------------------------------------

const char* stream_name(Stream s) { return s == Stream::AP ? "ap" : "sem"; }

Pca2d pca_2d(const std::vector<std::vector<double>>& rows) {
    PcaResult pca = pca_of(to_eigen(rows));
    Pca2d out;
    out.variance_ratio = pca.variance_ratio;
    out.coords.resize(rows.size(), {0.0, 0.0});
    for (long r = 0; r < pca.scores.rows(); ++r) {
        out.coords[size_t(r)][0] = pca.scores(r, 0);
        if (pca.scores.cols() > 1) out.coords[size_t(r)][1] = pca.scores(r, 1);
    }
    return out;
}

HiddenPcaResult hidden_pca(const Model& model, const Document& doc, const Vocab& vocab,
                           int layer, Stream stream) {
    const int L = model.cfg.layers;
    if (layer < 0 || layer > L) throw std::out_of_range("layer out of range");
    if (stream == Stream::AP) {
        if (!model.cfg.has_ap_stream())
            throw std::invalid_argument("hidden-state PCA: this model has no AP stream");
        if (model.cfg.mlm_scope == MlmScope::semantic_only && layer == L)
            throw std::invalid_argument(
                "hidden-state PCA: the final AP state of a semantic-only model is "
                "unconstrained by training and is not analyzed");
    }
    Graph g(false);
    EncoderTrace trace = encoder_forward(g, model, doc.ids, make_positions(doc.length(), 0),
                                         anchor_positions(doc, vocab));
    const Tensor& state =
        stream == Stream::AP ? trace.x_ap[size_t(layer)] : trace.x_sem[size_t(layer)];
    const int n = state.dim(0), d = state.dim(1);
    std::vector<std::vector<double>> rows(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(d)));
    const real* v = state.data();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) rows[size_t(r)][size_t(c)] = double(v[size_t(r) * size_t(d) + size_t(c)]);
    Pca2d pca = pca_2d(rows);
    HiddenPcaResult out;
    out.coords = std::move(pca.coords);
    out.variance_ratio = std::move(pca.variance_ratio);
    out.segment = segment_labels(doc, vocab).seg;
    return out;
}

void write_hidden_pca_csv(const std::string& path, const HiddenPcaResult& result) {
    std::ofstream out = open_out(path);
    out << "token_index,pc1,pc2,segment_id\n";
    char line[160];
    for (size_t i = 0; i < result.coords.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%d\n", i, result.coords[i][0],
                      result.coords[i][1], result.segment[i]);
        out << line;
    }
}

// ---------------------------------------------------------------------------

double inter_model_regression(const Tensor& src, const Tensor& dst, double lambda,
                              const std::vector<int>& train_rows,
                              const std::vector<int>& test_rows) {
    if (!src.defined() || !dst.defined() || src.ndim() != 2 || dst.ndim() != 2)
        throw std::invalid_argument("inter-model regression: expected 2-D tensors");
    if (src.dim(0) != dst.dim(0))
        throw std::invalid_argument("inter-model regression: token counts differ");
    if (train_rows.empty() || test_rows.empty())
        throw std::invalid_argument("inter-model regression: empty split");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("inter-model regression: bad lambda");
    const int n = src.dim(0);
    for (int r : train_rows)
        if (r < 0 || r >= n) throw std::out_of_range("train row out of range");
    for (int r : test_rows)
        if (r < 0 || r >= n) throw std::out_of_range("test row out of range");

    Eigen::MatrixXd x = to_eigen(src), y = to_eigen(dst);
    auto take = [](const Eigen::MatrixXd& m, const std::vector<int>& rows) {
        Eigen::MatrixXd out(long(rows.size()), m.cols());
        for (size_t i = 0; i < rows.size(); ++i) out.row(long(i)) = m.row(rows[i]);
        return out;
    };
    Eigen::MatrixXd xtr = take(x, train_rows), ytr = take(y, train_rows);
    Eigen::MatrixXd xte = take(x, test_rows), yte = take(y, test_rows);
    if (!xtr.allFinite() || !ytr.allFinite())
        throw std::invalid_argument("inter-model regression: non-finite inputs");

    Eigen::RowVectorXd x_mean = xtr.colwise().mean();
    Eigen::RowVectorXd y_mean = ytr.colwise().mean();
    Eigen::MatrixXd xc = xtr.rowwise() - x_mean;
    Eigen::MatrixXd yc = ytr.rowwise() - y_mean;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    Eigen::MatrixXd w = gram.ldlt().solve(xc.transpose() * yc);
    Eigen::MatrixXd pred =
        ((xte.rowwise() - x_mean) * w).rowwise() + y_mean;

    Eigen::RowVectorXd yte_mean = yte.colwise().mean();
    double r2_sum = 0.0;
    long r2_count = 0;
    for (long d = 0; d < yte.cols(); ++d) {
        const double ss_tot = (yte.col(d).array() - yte_mean[d]).square().sum();
        if (ss_tot <= 0.0) continue; // degenerate target dimension
        const double ss_res = (yte.col(d) - pred.col(d)).array().square().sum();
        r2_sum += 1.0 - ss_res / ss_tot;
        ++r2_count;
    }
    if (r2_count == 0)
        throw std::invalid_argument(
            "inter-model regression: every target dimension is constant on the held-out rows");
    return r2_sum / double(r2_count);
}

} // namespace dstg
