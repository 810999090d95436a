#include "dstg/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dstg {

const char* variant_name(Variant v) {
    switch (v) {
    case Variant::DSTG: return "dstg";
    case Variant::AP: return "ap";
    case Variant::RP: return "rp";
    case Variant::RoPE: return "rope";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "dstg") return Variant::DSTG;
    if (name == "ap") return Variant::AP;
    if (name == "rp") return Variant::RP;
    if (name == "rope") return Variant::RoPE;
    throw std::invalid_argument("unknown variant '" + name + "' (expected dstg|ap|rp|rope)");
}

const char* scope_name(MlmScope s) {
    return s == MlmScope::semantic_only ? "semantic_only" : "full";
}

MlmScope scope_from_name(const std::string& name) {
    if (name == "semantic_only") return MlmScope::semantic_only;
    if (name == "full") return MlmScope::full;
    throw std::invalid_argument("unknown mlm head scope '" + name +
                                "' (expected semantic_only|full)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (layers < 0) fail("layers must be >= 0");
    if (n_heads < 1) fail("n_heads must be >= 1");
    if (d_sem <= 0) fail("d_sem must be positive");
    if (d_ap < 0) fail("d_ap must be >= 0");
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (max_positions < 1) fail("max_positions must be >= 1");
    if (d_sem % n_heads != 0) fail("d_sem must be a multiple of n_heads");
    if (d_ap % n_heads != 0) fail("d_ap must be a multiple of n_heads");
    if (d_model() % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (variant != Variant::DSTG && d_ap != 0)
        fail("non-disentangled variants must have d_ap == 0");
    if (uses_rope() && d_head() % 2 != 0) fail("rotary encoding requires an even head width");
    if (has_rp_bias()) {
        if (num_buckets < 4 || num_buckets % 2 != 0) fail("num_buckets must be even and >= 4");
        if (max_distance <= num_buckets / 4) fail("max_distance too small for bucket layout");
    }
    if (!(norm_eps > 0)) fail("norm_eps must be positive");
}

namespace {

std::string layer_key(int l, const char* field) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "layer%d.%s", l, field);
    return buf;
}

Tensor init_randn(std::vector<int> shape, const Rng& base, const std::string& name) {
    return Tensor::randn(std::move(shape), real(0.02), base.derive(name), true);
}

} // namespace

Model init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng base = Rng(seed).derive("init");
    const int da = cfg.d_ap, ds = cfg.d_sem, dm = cfg.d_model(), di = cfg.d_inter();

    m.tok_emb = init_randn({cfg.vocab_size, ds}, base, "tok_emb");
    if (cfg.has_ap_table()) {
        int w = cfg.has_ap_stream() ? da : dm;
        m.ap_table = init_randn({cfg.max_positions, w}, base, "ap_table");
    }
    for (int l = 0; l < cfg.layers; ++l) {
        LayerParams p;
        if (cfg.has_ap_stream()) {
            p.gain_ap_attn = Tensor::full({1, da}, real(1), true);
            p.gain_ap_ffn = Tensor::full({1, da}, real(1), true);
            p.wq_ap = init_randn({da, dm}, base, layer_key(l, "attn.wq_ap"));
            p.wk_ap = init_randn({da, dm}, base, layer_key(l, "attn.wk_ap"));
            p.wv_ap = init_randn({da, da}, base, layer_key(l, "attn.wv_ap"));
            p.wo_ap = init_randn({da, da}, base, layer_key(l, "attn.wo_ap"));
            p.w_down_ap = init_randn({4 * da, da}, base, layer_key(l, "ffn.w_down_ap"));
        }
        p.gain_sem_attn = Tensor::full({1, ds}, real(1), true);
        p.gain_sem_ffn = Tensor::full({1, ds}, real(1), true);
        p.wq_sem = init_randn({ds, dm}, base, layer_key(l, "attn.wq_sem"));
        p.wk_sem = init_randn({ds, dm}, base, layer_key(l, "attn.wk_sem"));
        p.wv_sem = init_randn({ds, ds}, base, layer_key(l, "attn.wv_sem"));
        p.wo_sem = init_randn({ds, ds}, base, layer_key(l, "attn.wo_sem"));
        if (cfg.has_rp_bias()) p.rp = make_rp_table(cfg.n_heads, cfg.num_buckets, cfg.max_distance);
        p.w_gate = init_randn({dm, di}, base, layer_key(l, "ffn.w_gate"));
        p.w_up = init_randn({dm, di}, base, layer_key(l, "ffn.w_up"));
        p.w_down_sem = init_randn({4 * ds, ds}, base, layer_key(l, "ffn.w_down_sem"));
        m.layers.push_back(std::move(p));
    }
    int head_in = cfg.mlm_scope == MlmScope::full ? dm : ds;
    m.mlm_head = init_randn({head_in, cfg.vocab_size}, base, "mlm_head");
    return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb);
    if (cfg.has_ap_table()) out.emplace_back("ap_table", ap_table);
    for (int l = 0; l < int(layers.size()); ++l) {
        const LayerParams& p = layers[size_t(l)];
        bool ap = cfg.has_ap_stream();
        if (ap) out.emplace_back(layer_key(l, "attn.gain_ap"), p.gain_ap_attn);
        out.emplace_back(layer_key(l, "attn.gain_sem"), p.gain_sem_attn);
        out.emplace_back(layer_key(l, "attn.wq_sem"), p.wq_sem);
        out.emplace_back(layer_key(l, "attn.wk_sem"), p.wk_sem);
        if (ap) {
            out.emplace_back(layer_key(l, "attn.wq_ap"), p.wq_ap);
            out.emplace_back(layer_key(l, "attn.wk_ap"), p.wk_ap);
        }
        out.emplace_back(layer_key(l, "attn.wv_sem"), p.wv_sem);
        out.emplace_back(layer_key(l, "attn.wo_sem"), p.wo_sem);
        if (ap) {
            out.emplace_back(layer_key(l, "attn.wv_ap"), p.wv_ap);
            out.emplace_back(layer_key(l, "attn.wo_ap"), p.wo_ap);
        }
        if (cfg.has_rp_bias()) out.emplace_back(layer_key(l, "attn.rp"), p.rp.params);
        if (ap) out.emplace_back(layer_key(l, "ffn.gain_ap"), p.gain_ap_ffn);
        out.emplace_back(layer_key(l, "ffn.gain_sem"), p.gain_sem_ffn);
        out.emplace_back(layer_key(l, "ffn.w_gate"), p.w_gate);
        out.emplace_back(layer_key(l, "ffn.w_up"), p.w_up);
        if (ap) out.emplace_back(layer_key(l, "ffn.w_down_ap"), p.w_down_ap);
        out.emplace_back(layer_key(l, "ffn.w_down_sem"), p.w_down_sem);
    }
    out.emplace_back("mlm_head", mlm_head);
    return out;
}

Tensor Model::param(const std::string& name) const {
    for (const auto& [k, t] : named_params())
        if (k == name) return t;
    throw std::invalid_argument("no parameter named '" + name + "'");
}

size_t Model::param_count() const {
    size_t n = 0;
    for (const auto& [k, t] : named_params()) n += t.size();
    return n;
}

size_t expected_param_count(const ModelConfig& cfg) {
    const size_t da = size_t(cfg.d_ap), ds = size_t(cfg.d_sem);
    const size_t dm = size_t(cfg.d_model()), V = size_t(cfg.vocab_size);
    size_t n = V * ds;
    if (cfg.has_ap_table()) n += size_t(cfg.max_positions) * (cfg.has_ap_stream() ? da : dm);
    size_t per_layer = 0;
    per_layer += 2 * ds;                // sem gains
    per_layer += 2 * ds * dm + 2 * ds * ds; // sem q,k + v,o
    if (cfg.has_ap_stream())
        per_layer += 2 * da + 2 * da * dm + 2 * da * da + 4 * da * da;
    if (cfg.has_rp_bias()) per_layer += size_t(cfg.n_heads) * size_t(cfg.num_buckets + 3);
    per_layer += 2 * dm * 4 * dm;  // gate + up
    per_layer += 4 * ds * ds;      // sem down
    n += size_t(cfg.layers) * per_layer;
    n += (cfg.mlm_scope == MlmScope::full ? dm : ds) * V;
    return n;
}

namespace {

void check_forward_inputs(const Model& model, const std::vector<int>& ids,
                          const std::vector<int>& positions, const std::vector<int>& specials) {
    const ModelConfig& cfg = model.cfg;
    int n = int(ids.size());
    if (n == 0) throw std::invalid_argument("encoder_forward: empty token sequence");
    if (int(positions.size()) != n)
        throw std::invalid_argument("encoder_forward: positions length " +
                                    std::to_string(positions.size()) + " != sequence length " +
                                    std::to_string(n));
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::invalid_argument("encoder_forward: token id " + std::to_string(id) +
                                        " outside vocabulary of " +
                                        std::to_string(cfg.vocab_size));
    if (cfg.has_ap_table())
        for (int p : positions)
            if (p < 0 || p >= cfg.max_positions)
                throw std::invalid_argument("encoder_forward: position " + std::to_string(p) +
                                            " outside table of " +
                                            std::to_string(cfg.max_positions) + " slots");
    if (cfg.uses_rope())
        for (int p : positions)
            if (p < 0) throw std::invalid_argument("encoder_forward: negative rotary position");
    for (int s : specials)
        if (s < 0 || s >= n)
            throw std::invalid_argument("encoder_forward: special index " + std::to_string(s) +
                                        " outside sequence of length " + std::to_string(n));
}

// mask[i][j] = 1 iff neither i nor j is a special anchor
MaskMat non_special_mask(int n, const std::vector<int>& specials) {
    MaskMat m(n, n, 1);
    for (int s : specials) {
        for (int j = 0; j < n; ++j) {
            m.at(s, j) = 0;
            m.at(j, s) = 0;
        }
    }
    return m;
}

} // namespace

EncoderTrace encoder_forward(Graph& g, const Model& model, const std::vector<int>& ids,
                             const std::vector<int>& positions,
                             const std::vector<int>& specials, const ForwardOptions& opts) {
    const ModelConfig& cfg = model.cfg;
    cfg.validate();
    check_forward_inputs(model, ids, positions, specials);
    const int n = int(ids.size());
    const int nh = cfg.n_heads, dh = cfg.d_head();
    const int da = cfg.d_ap, ds = cfg.d_sem;
    const bool ap_stream = cfg.has_ap_stream();
    const real inv_sqrt_dh = real(1.0 / std::sqrt(double(dh)));

    EncoderTrace trace;
    Tensor x_sem = g.row_gather(model.tok_emb, ids);
    if (cfg.variant == Variant::AP)
        x_sem = g.add(x_sem, g.row_gather(model.ap_table, positions));
    Tensor x_ap = ap_stream ? g.row_gather(model.ap_table, positions) : Tensor({n, 0});
    trace.x_ap.push_back(x_ap);
    trace.x_sem.push_back(x_sem);

    IntMat rp_codes(0, 0);
    MaskMat sp_mask(0, 0);
    if (cfg.has_rp_bias()) rp_codes = rp_bias_index(n, specials, cfg.num_buckets, cfg.max_distance);
    if (ap_stream) sp_mask = non_special_mask(n, specials);

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerParams& p = model.layers[size_t(l)];
        std::vector<HeadTrace> layer_heads;

        // --- attention sublayer ---
        Tensor nsem = g.rmsnorm(x_sem, p.gain_sem_attn, cfg.norm_eps);
        Tensor q_sem = g.matmul(nsem, p.wq_sem); // [n × nh·dh]
        Tensor k_sem = g.matmul(nsem, p.wk_sem);
        Tensor v_sem = g.matmul(nsem, p.wv_sem); // [n × ds]
        Tensor nap, q_ap, k_ap, v_ap;
        if (ap_stream) {
            nap = g.rmsnorm(x_ap, p.gain_ap_attn, cfg.norm_eps);
            q_ap = g.matmul(nap, p.wq_ap);
            k_ap = g.matmul(nap, p.wk_ap);
            v_ap = g.matmul(nap, p.wv_ap); // [n × da]
        }

        Tensor ctx_sem, ctx_ap;
        const int dv_sem = ds / nh, dv_ap = da / nh;
        for (int h = 0; h < nh; ++h) {
            Tensor qh = g.slice_cols(q_sem, h * dh, dh);
            Tensor kh = g.slice_cols(k_sem, h * dh, dh);
            if (cfg.uses_rope()) {
                qh = g.rope(qh, positions, real(kRopeBase));
                kh = g.rope(kh, positions, real(kRopeBase));
            }
            Tensor w_sem = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);

            Tensor logits = w_sem;
            Tensor bias, w_ap_raw, w_ap_used;
            if (cfg.has_rp_bias()) {
                IntMat idx(n, n);
                const int off = h * p.rp.entries_per_head();
                for (size_t q = 0; q < rp_codes.v.size(); ++q) idx.v[q] = rp_codes.v[q] + off;
                bias = g.bias_gather(p.rp.params, idx);
                logits = g.add(bias, logits);
            }
            if (ap_stream) {
                Tensor qa = g.slice_cols(q_ap, h * dh, dh);
                Tensor ka = g.slice_cols(k_ap, h * dh, dh);
                w_ap_raw = g.scale(g.matmul_nt(qa, ka), inv_sqrt_dh);
                if (opts.capture_heads) {
                    w_ap_used = Tensor({n, n});
                    const real* raw = w_ap_raw.data();
                    real* used = w_ap_used.data();
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) {
                            size_t q = size_t(i) * n + j;
                            used[q] = sp_mask.at(i, j) ? raw[q] : real(0);
                        }
                }
                logits = g.add_masked(logits, w_ap_raw, sp_mask);
            }

            Tensor attn = g.softmax_rows(logits);
            if (opts.inject_attn) {
                auto it = opts.inject_attn->find({l, h});
                if (it != opts.inject_attn->end()) {
                    const Tensor& forced = it->second;
                    if (forced.rows() != n || forced.cols() != n)
                        throw std::invalid_argument("injected attention must be [n × n]");
                    attn = forced;
                }
            }
            if (opts.capture_heads)
                layer_heads.push_back({w_sem, w_ap_raw, w_ap_used, bias, logits, attn});

            Tensor vh = g.slice_cols(v_sem, h * dv_sem, dv_sem);
            Tensor ch = g.matmul(attn, vh);
            ctx_sem = (h == 0) ? ch : g.concat_cols(ctx_sem, ch);
            if (ap_stream) {
                Tensor vah = g.slice_cols(v_ap, h * dv_ap, dv_ap);
                Tensor cah = g.matmul(attn, vah);
                ctx_ap = (h == 0) ? cah : g.concat_cols(ctx_ap, cah);
            }
        }
        x_sem = g.add(x_sem, g.matmul(ctx_sem, p.wo_sem));
        if (ap_stream) x_ap = g.add(x_ap, g.matmul(ctx_ap, p.wo_ap));
        trace.x_ap_attn.push_back(x_ap);
        trace.x_sem_attn.push_back(x_sem);

        // --- SwiGLU sublayer: the only channel where the streams mix ---
        Tensor fsem = g.rmsnorm(x_sem, p.gain_sem_ffn, cfg.norm_eps);
        Tensor fap = ap_stream ? g.rmsnorm(x_ap, p.gain_ap_ffn, cfg.norm_eps) : x_ap;
        Tensor cat = g.concat_cols(fap, fsem); // AP block first
        Tensor hidden = g.mul(g.swish(g.matmul(cat, p.w_gate)), g.matmul(cat, p.w_up));
        if (ap_stream)
            x_ap = g.add(x_ap, g.matmul(g.slice_cols(hidden, 0, 4 * da), p.w_down_ap));
        x_sem = g.add(x_sem, g.matmul(g.slice_cols(hidden, 4 * da, 4 * ds), p.w_down_sem));

        trace.x_ap.push_back(x_ap);
        trace.x_sem.push_back(x_sem);
        if (opts.capture_heads) trace.heads.push_back(std::move(layer_heads));
    }
    return trace;
}

Tensor mlm_logits(Graph& g, const Model& model, const EncoderTrace& trace) {
    if (model.cfg.mlm_scope == MlmScope::full) {
        Tensor state = g.concat_cols(trace.final_ap(), trace.final_sem());
        return g.matmul(state, model.mlm_head);
    }
    return g.matmul(trace.final_sem(), model.mlm_head);
}

Tensor mlm_loss_rows(Graph& g, const Model& model, const EncoderTrace& trace,
                     const std::vector<int>& rows, const std::vector<int>& labels) {
    if (rows.empty()) throw std::invalid_argument("mlm_loss_rows: no prediction rows");
    if (rows.size() != labels.size())
        throw std::invalid_argument("mlm_loss_rows: rows/labels length mismatch");
    Tensor state = model.cfg.mlm_scope == MlmScope::full
                       ? g.concat_cols(trace.final_ap(), trace.final_sem())
                       : trace.final_sem();
    int n = state.rows();
    for (int r : rows)
        if (r < 0 || r >= n)
            throw std::invalid_argument("mlm_loss_rows: row " + std::to_string(r) +
                                        " outside sequence of length " + std::to_string(n));
    Tensor picked = g.row_gather(state, rows);
    Tensor logits = g.matmul(picked, model.mlm_head);
    return g.cross_entropy(logits, labels);
}

} // namespace dstg
