#include "dstg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dstg {

namespace {

void expect_matrix(const Tensor& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
    if (t.ndim() > 2)
        throw std::invalid_argument(std::string(op) + ": expected vector or matrix, got " +
                                    shape_str(t.shape()));
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

} // namespace

real stable_sigmoid(real x) {
    if (x >= real(0)) {
        return real(1) / (real(1) + real(std::exp(-double(x))));
    }
    double e = std::exp(double(x));
    return real(e / (1.0 + e));
}

void gemm_nn_acc(real* c, const real* a, const real* b, int m, int k, int n) {
    if (accum_f64()) {
        std::vector<double> acc(size_t(n), 0.0);
        for (int i = 0; i < m; ++i) {
            real* crow = c + size_t(i) * n;
            for (int j = 0; j < n; ++j) acc[size_t(j)] = double(crow[j]);
            const real* arow = a + size_t(i) * k;
            for (int t = 0; t < k; ++t) {
                double av = double(arow[t]);
                const real* brow = b + size_t(t) * n;
                for (int j = 0; j < n; ++j) acc[size_t(j)] += av * double(brow[j]);
            }
            for (int j = 0; j < n; ++j) crow[j] = real(acc[size_t(j)]);
        }
        return;
    }
    for (int i = 0; i < m; ++i) {
        real* crow = c + size_t(i) * n;
        const real* arow = a + size_t(i) * k;
        for (int t = 0; t < k; ++t) {
            real av = arow[t];
            const real* brow = b + size_t(t) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b^T, where b is [n x k]
void gemm_nt_acc(real* c, const real* a, const real* b, int m, int k, int n) {
    if (accum_f64()) {
        for (int i = 0; i < m; ++i) {
            const real* arow = a + size_t(i) * k;
            real* crow = c + size_t(i) * n;
            for (int j = 0; j < n; ++j) {
                const real* brow = b + size_t(j) * k;
                double acc = 0.0;
                for (int t = 0; t < k; ++t) acc += double(arow[t]) * double(brow[t]);
                crow[j] = real(double(crow[j]) + acc);
            }
        }
        return;
    }
    for (int i = 0; i < m; ++i) {
        const real* arow = a + size_t(i) * k;
        real* crow = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* brow = b + size_t(j) * k;
            real acc = real(0);
            for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
            crow[j] += acc;
        }
    }
}

// c[k x n] += a^T * b, where a is [m x k], b is [m x n]
void gemm_tn_acc(real* c, const real* a, const real* b, int m, int k, int n) {
    if (accum_f64()) {
        std::vector<double> acc(size_t(k) * size_t(n));
        for (size_t q = 0; q < acc.size(); ++q) acc[q] = double(c[q]);
        for (int i = 0; i < m; ++i) {
            const real* arow = a + size_t(i) * k;
            const real* brow = b + size_t(i) * n;
            for (int t = 0; t < k; ++t) {
                double av = double(arow[t]);
                double* crow = acc.data() + size_t(t) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * double(brow[j]);
            }
        }
        for (size_t q = 0; q < acc.size(); ++q) c[q] = real(acc[q]);
        return;
    }
    for (int i = 0; i < m; ++i) {
        const real* arow = a + size_t(i) * k;
        const real* brow = b + size_t(i) * n;
        for (int t = 0; t < k; ++t) {
            real av = arow[t];
            real* crow = c + size_t(t) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<real>& Graph::gbuf(const Tensor& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end())
        it = grads_.emplace(t.id(), std::vector<real>(t.size(), real(0))).first;
    return it->second;
}

const std::vector<real>* Graph::gout(const Tensor& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
}

void Graph::record(std::function<void()> back) { tape_.push_back(std::move(back)); }

std::vector<real> Graph::grad(const Tensor& t) const {
    const std::vector<real>* g = gout(t);
    if (!g) return std::vector<real>(t.size(), real(0));
    return *g;
}

const std::vector<real>* Graph::grad_if(const Tensor& t) const { return gout(t); }

void Graph::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::logic_error("backward target must be a scalar, got shape " +
                               shape_str(loss.shape()));
    if (did_backward_) throw std::logic_error("backward already ran on this graph");
    did_backward_ = true;
    grads_[loss.id()] = {real(1)};
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    expect_matrix(a, "matmul");
    expect_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    gemm_nn_acc(out.data(), a.data(), b.data(), m, k, n);
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out, m, k, n] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            if (a.requires_grad()) gemm_nt_acc(gbuf(a).data(), g->data(), b.data(), m, n, k);
            if (b.requires_grad()) gemm_tn_acc(gbuf(b).data(), a.data(), g->data(), m, k, n);
        });
    }
    return out;
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
    expect_matrix(a, "matmul_nt");
    expect_matrix(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt shape mismatch: " + shape_str(a.shape()) +
                                    " x transpose of " + shape_str(b.shape()));
    int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out({m, n});
    gemm_nt_acc(out.data(), a.data(), b.data(), m, k, n);
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out, m, k, n] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            // out = a b^T: da += g b ; db += g^T a
            if (a.requires_grad()) gemm_nn_acc(gbuf(a).data(), g->data(), b.data(), m, n, k);
            if (b.requires_grad()) gemm_tn_acc(gbuf(b).data(), g->data(), a.data(), m, n, k);
        });
    }
    return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    expect_matrix(a, "add");
    expect_matrix(b, "add");
    expect_same_shape(a, b, "add");
    Tensor out(a.shape());
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            if (a.requires_grad()) {
                auto& ga = gbuf(a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
            }
            if (b.requires_grad()) {
                auto& gb = gbuf(b);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i];
            }
        });
    }
    return out;
}

Tensor Graph::add_masked(const Tensor& a, const Tensor& b, const MaskMat& mask) {
    expect_matrix(a, "add_masked");
    expect_matrix(b, "add_masked");
    expect_same_shape(a, b, "add_masked");
    if (mask.rows != a.rows() || mask.cols != a.cols())
        throw std::invalid_argument("add_masked mask shape [" + std::to_string(mask.rows) + "," +
                                    std::to_string(mask.cols) + "] does not match " +
                                    shape_str(a.shape()));
    Tensor out(a.shape());
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    // where the mask is off, the output bits are a's bits, untouched
    for (size_t i = 0; i < out.size(); ++i) po[i] = mask.v[i] ? pa[i] + pb[i] : pa[i];
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out, mask] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            if (a.requires_grad()) {
                auto& ga = gbuf(a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
            }
            if (b.requires_grad()) {
                auto& gb = gbuf(b);
                for (size_t i = 0; i < gb.size(); ++i)
                    if (mask.v[i]) gb[i] += (*g)[i];
            }
        });
    }
    return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    expect_matrix(a, "mul");
    expect_matrix(b, "mul");
    expect_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            if (a.requires_grad()) {
                auto& ga = gbuf(a);
                const real* pb2 = b.data();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * pb2[i];
            }
            if (b.requires_grad()) {
                auto& gb = gbuf(b);
                const real* pa2 = a.data();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i] * pa2[i];
            }
        });
    }
    return out;
}

Tensor Graph::scale(const Tensor& a, real s) {
    expect_matrix(a, "scale");
    Tensor out(a.shape());
    const real* pa = a.data();
    real* po = out.data();
    for (size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * s;
    bool rg = recording_ && a.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, out, s] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& ga = gbuf(a);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * s;
        });
    }
    return out;
}

Tensor Graph::rmsnorm(const Tensor& x, const Tensor& gain, real eps) {
    expect_matrix(x, "rmsnorm");
    expect_matrix(gain, "rmsnorm");
    int n = x.rows(), d = x.cols();
    if (gain.rows() != 1 || gain.cols() != d)
        throw std::invalid_argument("rmsnorm gain shape " + shape_str(gain.shape()) +
                                    " does not match feature width " + std::to_string(d));
    if (d == 0) throw std::invalid_argument("rmsnorm on zero-width input");
    Tensor out(x.shape());
    std::vector<real> inv_r(size_t(n), real(0));
    const real* px = x.data();
    const real* pg = gain.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        const real* row = px + size_t(i) * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += double(row[j]) * double(row[j]);
        ms /= double(d);
        real ir = real(1.0 / std::sqrt(ms + double(eps)));
        inv_r[size_t(i)] = ir;
        real* orow = po + size_t(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = pg[j] * row[j] * ir;
    }
    bool rg = recording_ && (x.requires_grad() || gain.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, x, gain, out, inv_r = std::move(inv_r), n, d] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            const real* px2 = x.data();
            const real* pg2 = gain.data();
            for (int i = 0; i < n; ++i) {
                const real* row = px2 + size_t(i) * d;
                const real* grow = g->data() + size_t(i) * d;
                double ir = double(inv_r[size_t(i)]);
                if (x.requires_grad()) {
                    double s = 0.0;
                    for (int j = 0; j < d; ++j)
                        s += double(pg2[j]) * double(grow[j]) * double(row[j]);
                    s *= ir * ir * ir / double(d);
                    auto& gx = gbuf(x);
                    real* gxrow = gx.data() + size_t(i) * d;
                    for (int j = 0; j < d; ++j)
                        gxrow[j] += real(double(pg2[j]) * double(grow[j]) * ir -
                                         double(row[j]) * s);
                }
                if (gain.requires_grad()) {
                    auto& gg = gbuf(gain);
                    for (int j = 0; j < d; ++j)
                        gg[size_t(j)] += real(double(grow[j]) * double(row[j]) * ir);
                }
            }
        });
    }
    return out;
}

Tensor Graph::swish(const Tensor& x) {
    expect_matrix(x, "swish");
    Tensor out(x.shape());
    const real* px = x.data();
    real* po = out.data();
    for (size_t i = 0; i < out.size(); ++i) po[i] = px[i] * stable_sigmoid(px[i]);
    bool rg = recording_ && x.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, x, out] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gx = gbuf(x);
            const real* px2 = x.data();
            for (size_t i = 0; i < gx.size(); ++i) {
                real sg = stable_sigmoid(px2[i]);
                gx[i] += (*g)[i] * sg * (real(1) + px2[i] * (real(1) - sg));
            }
        });
    }
    return out;
}

Tensor Graph::softmax_rows(const Tensor& logits, const std::vector<uint8_t>* key_mask) {
    expect_matrix(logits, "softmax_rows");
    int n = logits.rows(), c = logits.cols();
    if (key_mask && int(key_mask->size()) != c)
        throw std::invalid_argument("softmax_rows key mask length " +
                                    std::to_string(key_mask->size()) +
                                    " does not match column count " + std::to_string(c));
    bool any_valid = false;
    if (key_mask) {
        for (uint8_t m : *key_mask) any_valid = any_valid || (m != 0);
    } else {
        any_valid = c > 0;
    }
    if (!any_valid) throw std::domain_error("softmax_rows: every key is masked out");
    Tensor out(logits.shape());
    const real* pl = logits.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        const real* row = pl + size_t(i) * c;
        real* orow = po + size_t(i) * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            if (!key_mask || (*key_mask)[size_t(j)])
                mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (int j = 0; j < c; ++j)
            if (!key_mask || (*key_mask)[size_t(j)])
                z += std::exp(double(row[j]) - mx);
        for (int j = 0; j < c; ++j) {
            if (!key_mask || (*key_mask)[size_t(j)])
                orow[j] = real(std::exp(double(row[j]) - mx) / z);
            else
                orow[j] = real(0);
        }
    }
    bool rg = recording_ && logits.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, logits, out, n, c] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gl = gbuf(logits);
            const real* pa = out.data();
            for (int i = 0; i < n; ++i) {
                const real* arow = pa + size_t(i) * c;
                const real* grow = g->data() + size_t(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += double(grow[j]) * double(arow[j]);
                real* glrow = gl.data() + size_t(i) * c;
                for (int j = 0; j < c; ++j)
                    glrow[j] += real(double(arow[j]) * (double(grow[j]) - dot));
            }
        });
    }
    return out;
}

Tensor Graph::cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    expect_matrix(logits, "cross_entropy");
    int n = logits.rows(), vdim = logits.cols();
    if (int(labels.size()) != n)
        throw std::invalid_argument("cross_entropy label count " + std::to_string(labels.size()) +
                                    " does not match row count " + std::to_string(n));
    const real* pl = logits.data();
    std::vector<double> lse(size_t(n), 0.0);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        int lab = labels[size_t(i)];
        if (lab < 0) continue;
        if (lab >= vdim)
            throw std::invalid_argument("cross_entropy label " + std::to_string(lab) +
                                        " out of range for " + std::to_string(vdim) + " classes");
        const real* row = pl + size_t(i) * vdim;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < vdim; ++j) mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (int j = 0; j < vdim; ++j) z += std::exp(double(row[j]) - mx);
        lse[size_t(i)] = mx + std::log(z);
        total += lse[size_t(i)] - double(row[lab]);
        ++count;
    }
    if (count == 0) throw std::domain_error("cross_entropy: every row is ignored");
    Tensor out({1}, std::vector<real>{real(total / double(count))});
    bool rg = recording_ && logits.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, logits, out, labels, lse = std::move(lse), n, vdim, count] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            double gs = double((*g)[0]) / double(count);
            auto& gl = gbuf(logits);
            const real* pl2 = logits.data();
            for (int i = 0; i < n; ++i) {
                int lab = labels[size_t(i)];
                if (lab < 0) continue;
                const real* row = pl2 + size_t(i) * vdim;
                real* grow = gl.data() + size_t(i) * vdim;
                for (int j = 0; j < vdim; ++j) {
                    double p = std::exp(double(row[j]) - lse[size_t(i)]);
                    grow[j] += real(gs * (p - (j == lab ? 1.0 : 0.0)));
                }
            }
        });
    }
    return out;
}

Tensor Graph::row_gather(const Tensor& table, const std::vector<int>& ids) {
    expect_matrix(table, "row_gather");
    int r = table.rows(), c = table.cols();
    int n = int(ids.size());
    for (int id : ids)
        if (id < 0 || id >= r)
            throw std::invalid_argument("row_gather id " + std::to_string(id) +
                                        " out of range for " + std::to_string(r) + " rows");
    Tensor out({n, c});
    const real* pt = table.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        const real* src = pt + size_t(ids[size_t(i)]) * c;
        real* dst = po + size_t(i) * c;
        for (int j = 0; j < c; ++j) dst[j] = src[j];
    }
    bool rg = recording_ && table.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, table, out, ids, n, c] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gt = gbuf(table);
            for (int i = 0; i < n; ++i) {
                const real* grow = g->data() + size_t(i) * c;
                real* dst = gt.data() + size_t(ids[size_t(i)]) * c;
                for (int j = 0; j < c; ++j) dst[j] += grow[j];
            }
        });
    }
    return out;
}

Tensor Graph::bias_gather(const Tensor& params, const IntMat& index) {
    expect_matrix(params, "bias_gather");
    if (params.rows() != 1)
        throw std::invalid_argument("bias_gather expects a parameter vector, got " +
                                    shape_str(params.shape()));
    int k = params.cols();
    for (int e : index.v)
        if (e < 0 || e >= k)
            throw std::invalid_argument("bias_gather index " + std::to_string(e) +
                                        " out of range for " + std::to_string(k) + " entries");
    Tensor out({index.rows, index.cols});
    const real* pp = params.data();
    real* po = out.data();
    for (size_t q = 0; q < out.size(); ++q) po[q] = pp[size_t(index.v[q])];
    bool rg = recording_ && params.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, params, out, index] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gp = gbuf(params);
            for (size_t q = 0; q < g->size(); ++q) gp[size_t(index.v[q])] += (*g)[q];
        });
    }
    return out;
}

Tensor Graph::concat_cols(const Tensor& a, const Tensor& b) {
    expect_matrix(a, "concat_cols");
    expect_matrix(b, "concat_cols");
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat_cols row mismatch: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    int n = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out({n, ca + cb});
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        real* dst = po + size_t(i) * (ca + cb);
        const real* sa = pa + size_t(i) * ca;
        for (int j = 0; j < ca; ++j) dst[j] = sa[j];
        const real* sb = pb + size_t(i) * cb;
        for (int j = 0; j < cb; ++j) dst[ca + j] = sb[j];
    }
    bool rg = recording_ && (a.requires_grad() || b.requires_grad());
    out.set_requires_grad(rg);
    if (rg) {
        record([this, a, b, out, n, ca, cb] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            for (int i = 0; i < n; ++i) {
                const real* grow = g->data() + size_t(i) * (ca + cb);
                if (a.requires_grad()) {
                    real* da = gbuf(a).data() + size_t(i) * ca;
                    for (int j = 0; j < ca; ++j) da[j] += grow[j];
                }
                if (b.requires_grad()) {
                    real* db = gbuf(b).data() + size_t(i) * cb;
                    for (int j = 0; j < cb; ++j) db[j] += grow[ca + j];
                }
            }
        });
    }
    return out;
}

Tensor Graph::slice_cols(const Tensor& x, int from, int width) {
    expect_matrix(x, "slice_cols");
    int n = x.rows(), c = x.cols();
    if (from < 0 || width < 0 || from + width > c)
        throw std::invalid_argument("slice_cols [" + std::to_string(from) + "," +
                                    std::to_string(from + width) + ") out of range for " +
                                    std::to_string(c) + " columns");
    Tensor out({n, width});
    const real* px = x.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        const real* src = px + size_t(i) * c + from;
        real* dst = po + size_t(i) * width;
        for (int j = 0; j < width; ++j) dst[j] = src[j];
    }
    bool rg = recording_ && x.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, x, out, from, width, n, c] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gx = gbuf(x);
            for (int i = 0; i < n; ++i) {
                const real* grow = g->data() + size_t(i) * width;
                real* dst = gx.data() + size_t(i) * c + from;
                for (int j = 0; j < width; ++j) dst[j] += grow[j];
            }
        });
    }
    return out;
}

Tensor Graph::rope(const Tensor& x, const std::vector<int>& positions, real base) {
    expect_matrix(x, "rope");
    int n = x.rows(), d = x.cols();
    if (d % 2 != 0)
        throw std::invalid_argument("rope needs an even feature width, got " + std::to_string(d));
    if (int(positions.size()) != n)
        throw std::invalid_argument("rope position count " + std::to_string(positions.size()) +
                                    " does not match row count " + std::to_string(n));
    int half = d / 2;
    std::vector<double> inv_freq(size_t(half), 0.0);
    for (int t = 0; t < half; ++t)
        inv_freq[size_t(t)] = std::pow(double(base), -2.0 * double(t) / double(d));
    Tensor out(x.shape());
    const real* px = x.data();
    real* po = out.data();
    for (int i = 0; i < n; ++i) {
        double p = double(positions[size_t(i)]);
        const real* row = px + size_t(i) * d;
        real* orow = po + size_t(i) * d;
        for (int t = 0; t < half; ++t) {
            double ang = p * inv_freq[size_t(t)];
            double cs = std::cos(ang), sn = std::sin(ang);
            double x0 = double(row[2 * t]), x1 = double(row[2 * t + 1]);
            orow[2 * t] = real(cs * x0 - sn * x1);
            orow[2 * t + 1] = real(sn * x0 + cs * x1);
        }
    }
    bool rg = recording_ && x.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, x, out, positions, inv_freq = std::move(inv_freq), n, d, half] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gx = gbuf(x);
            for (int i = 0; i < n; ++i) {
                double p = double(positions[size_t(i)]);
                const real* grow = g->data() + size_t(i) * d;
                real* dst = gx.data() + size_t(i) * d;
                for (int t = 0; t < half; ++t) {
                    double ang = p * inv_freq[size_t(t)];
                    double cs = std::cos(ang), sn = std::sin(ang);
                    double g0 = double(grow[2 * t]), g1 = double(grow[2 * t + 1]);
                    dst[2 * t] += real(cs * g0 + sn * g1);
                    dst[2 * t + 1] += real(-sn * g0 + cs * g1);
                }
            }
        });
    }
    return out;
}

Tensor Graph::sum(const Tensor& x) {
    expect_matrix(x, "sum");
    const real* px = x.data();
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += double(px[i]);
    Tensor out({1}, std::vector<real>{real(acc)});
    bool rg = recording_ && x.requires_grad();
    out.set_requires_grad(rg);
    if (rg) {
        record([this, x, out] {
            const std::vector<real>* g = gout(out);
            if (!g) return;
            auto& gx = gbuf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[0];
        });
    }
    return out;
}

} // namespace dstg
