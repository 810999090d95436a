#include "dstg/train.hpp"

#include "dstg/positional.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace dstg {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void MaskPolicy::validate() const {
    if (!(rate > 0.0) || rate > 1.0)
        throw std::invalid_argument("mask rate must be in (0, 1]");
    if (p_mask < 0 || p_random < 0 || p_keep < 0 ||
        std::abs(p_mask + p_random + p_keep - 1.0) > 1e-9)
        throw std::invalid_argument("mask corruption split must be nonnegative and sum to 1");
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (warmup < 0 || warmup > steps)
        throw std::invalid_argument("warmup must lie in [0, steps]");
    if (!(peak_lr > 0)) throw std::invalid_argument("peak_lr must be positive");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
        throw std::invalid_argument("betas must lie in [0, 1)");
    if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
    mask.validate();
    if (!(mask.rate < 1.0))
        throw std::invalid_argument("training mask rate must be in (0, 1)");
}

MaskedDoc mask_tokens(const Document& doc, const Vocab& vocab, Rng rng,
                      const MaskPolicy& policy) {
    policy.validate();
    const int n = int(doc.ids.size());
    std::vector<int> maskable;
    for (int i = 0; i < n; ++i)
        if (!vocab.is_special(doc.ids[size_t(i)])) maskable.push_back(i);
    if (maskable.empty())
        throw std::invalid_argument("mask_tokens: document has no maskable tokens");

    MaskedDoc out;
    out.ids = doc.ids;
    out.labels.assign(size_t(n), -1);

    auto corrupt = [&](int pos) {
        int orig = doc.ids[size_t(pos)];
        out.labels[size_t(pos)] = orig;
        double u = rng.uniform();
        if (u < policy.p_mask) {
            out.ids[size_t(pos)] = vocab.mask;
        } else if (u < policy.p_mask + policy.p_random) {
            int id = int(rng.below(uint32_t(vocab.size())));
            while (vocab.is_special(id)) id = int(rng.below(uint32_t(vocab.size())));
            out.ids[size_t(pos)] = id;
        } // else: keep the original token
    };

    for (int pos : maskable)
        if (rng.uniform() < policy.rate) corrupt(pos);

    bool any = false;
    for (int l : out.labels) any = any || l >= 0;
    if (!any) corrupt(maskable[rng.below(uint32_t(maskable.size()))]);

    for (int i = 0; i < n; ++i)
        if (out.labels[size_t(i)] >= 0) {
            out.rows.push_back(i);
            out.row_labels.push_back(out.labels[size_t(i)]);
        }
    return out;
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.steps)
        throw std::invalid_argument("lr_at: step outside [0, steps]");
    if (cfg.warmup > 0 && step < cfg.warmup)
        return cfg.peak_lr * double(step) / double(cfg.warmup);
    if (step >= cfg.steps) return 0.0;
    double denom = double(cfg.steps - cfg.warmup);
    double progress = denom > 0 ? double(step - cfg.warmup) / denom : 1.0;
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(progress * kPi));
}

void adamw_update(real* p, const real* g, real* m, real* v, size_t n, double lr,
                  const TrainConfig& cfg, int t) {
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, double(t));
    const double c2 = 1.0 - std::pow(b2, double(t));
    for (size_t i = 0; i < n; ++i) {
        double gi = double(g[i]);
        double mi = b1 * double(m[i]) + (1.0 - b1) * gi;
        double vi = b2 * double(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = real(mi);
        v[i] = real(vi);
        double update = (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
        p[i] = real(double(p[i]) - lr * update - lr * cfg.weight_decay * double(p[i]));
    }
}

AdamW::AdamW(const Model& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& [name, t] : model.named_params()) {
        m_.emplace_back(name, std::vector<real>(t.size(), real(0)));
        v_.emplace_back(name, std::vector<real>(t.size(), real(0)));
    }
}

void AdamW::step(Model& model, const Graph& g, double lr) {
    ++t_;
    auto params = model.named_params();
    if (params.size() != m_.size())
        throw std::invalid_argument("optimizer state does not match the model's parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        if (m_[i].second.size() != t.size())
            throw std::invalid_argument("optimizer moment shape mismatch for " + params[i].first);
        std::vector<real> grad = g.grad(t); // zeros when the loss never reached it
        adamw_update(t.data(), grad.data(), m_[i].second.data(), v_[i].second.data(), t.size(),
                     lr, cfg_, t_);
    }
}

namespace {

constexpr int kCheckpointVersion = 1;

ordered_json model_cfg_json(const ModelConfig& c) {
    return {{"layers", c.layers},
            {"n_heads", c.n_heads},
            {"d_ap", c.d_ap},
            {"d_sem", c.d_sem},
            {"max_positions", c.max_positions},
            {"vocab_size", c.vocab_size},
            {"variant", variant_name(c.variant)},
            {"mlm_scope", scope_name(c.mlm_scope)},
            {"num_buckets", c.num_buckets},
            {"max_distance", c.max_distance},
            {"norm_eps", double(c.norm_eps)}};
}

ModelConfig model_cfg_from_json(const ordered_json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ap = j.at("d_ap").get<int>();
    c.d_sem = j.at("d_sem").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.mlm_scope = scope_from_name(j.at("mlm_scope").get<std::string>());
    c.num_buckets = j.at("num_buckets").get<int>();
    c.max_distance = j.at("max_distance").get<int>();
    c.norm_eps = real(j.at("norm_eps").get<double>());
    return c;
}

ordered_json train_cfg_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"warmup", c.warmup},
            {"peak_lr", c.peak_lr},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"mask_rate", c.mask.rate},
            {"p_mask", c.mask.p_mask},
            {"p_random", c.mask.p_random},
            {"p_keep", c.mask.p_keep},
            {"seed", c.seed}};
}

TrainConfig train_cfg_from_json(const ordered_json& j) {
    TrainConfig c;
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.warmup = j.at("warmup").get<int>();
    c.peak_lr = j.at("peak_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.mask.rate = j.at("mask_rate").get<double>();
    c.mask.p_mask = j.at("p_mask").get<double>();
    c.mask.p_random = j.at("p_random").get<double>();
    c.mask.p_keep = j.at("p_keep").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void append_f32(std::vector<char>& buf, const real* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        float f = float(data[i]);
        char b[4];
        std::memcpy(b, &f, 4);
        buf.insert(buf.end(), b, b + 4);
    }
}

void read_f32(const std::vector<char>& buf, size_t offset, real* out, size_t n,
              const std::string& name) {
    if (offset + 4 * n > buf.size())
        throw std::runtime_error("checkpoint tensors.bin truncated at " + name);
    for (size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, buf.data() + offset + 4 * i, 4);
        out[i] = real(f);
    }
}

} // namespace

void save_checkpoint(const std::string& dir, const Model& model, const AdamW& opt,
                     const TrainConfig& tc, int step) {
    fs::create_directories(dir);
    std::vector<char> bin;
    ordered_json tensors = ordered_json::array();
    auto push = [&](const std::string& name, const std::vector<int>& shape, const real* data,
                    size_t n) {
        tensors.push_back({{"name", name},
                           {"shape", shape},
                           {"dtype", "f32"},
                           {"offset", bin.size()},
                           {"nbytes", 4 * n}});
        append_f32(bin, data, n);
    };
    for (const auto& [name, t] : model.named_params()) push(name, t.shape(), t.data(), t.size());
    for (const auto& [name, m] : opt.first_moments())
        push("adam_m/" + name, {int(m.size())}, m.data(), m.size());
    for (const auto& [name, v] : opt.second_moments())
        push("adam_v/" + name, {int(v.size())}, v.data(), v.size());

    ordered_json manifest = {{"format_version", kCheckpointVersion},
                             {"step", step},
                             {"model", model_cfg_json(model.cfg)},
                             {"train", train_cfg_json(tc)},
                             {"rng", {{"seed", tc.seed}, {"step", step}}},
                             {"tensors", tensors}};
    {
        std::ofstream f(dir + "/manifest.json");
        if (!f) throw std::runtime_error("cannot write " + dir + "/manifest.json");
        f << manifest.dump(2) << "\n";
    }
    {
        std::ofstream f(dir + "/tensors.bin", std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + dir + "/tensors.bin");
        f.write(bin.data(), std::streamsize(bin.size()));
    }
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("checkpoint manifest not found in " + dir);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(mf);
    } catch (const std::exception& e) {
        throw std::runtime_error("corrupt checkpoint manifest in " + dir + ": " + e.what());
    }
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint format version");

    Checkpoint ck;
    ck.model_cfg = model_cfg_from_json(manifest.at("model"));
    ck.train_cfg = train_cfg_from_json(manifest.at("train"));
    ck.step = manifest.at("step").get<int>();
    ck.model = init_model(ck.model_cfg, ck.train_cfg.seed);
    ck.opt = AdamW(ck.model, ck.train_cfg);
    ck.opt.set_t(ck.step);

    std::ifstream bf(dir + "/tensors.bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint tensors.bin not found in " + dir);
    std::vector<char> bin((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    std::map<std::string, std::pair<size_t, std::vector<int>>> entries;
    for (const auto& e : manifest.at("tensors")) {
        if (e.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("unsupported tensor dtype in checkpoint");
        entries[e.at("name").get<std::string>()] = {e.at("offset").get<size_t>(),
                                                    e.at("shape").get<std::vector<int>>()};
    }
    auto fetch = [&](const std::string& name, real* out, size_t n,
                     const std::vector<int>* expect_shape) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error("checkpoint is missing tensor " + name);
        size_t count = 1;
        for (int d : it->second.second) count *= size_t(d);
        if (count != n || (expect_shape && it->second.second != *expect_shape))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        read_f32(bin, it->second.first, out, n, name);
    };
    for (const auto& [name, t] : ck.model.named_params()) {
        Tensor tt = t;
        std::vector<int> shape = t.shape();
        fetch(name, tt.data(), tt.size(), &shape);
    }
    for (auto& [name, m] : ck.opt.first_moments()) fetch("adam_m/" + name, m.data(), m.size(), nullptr);
    for (auto& [name, v] : ck.opt.second_moments()) fetch("adam_v/" + name, v.data(), v.size(), nullptr);
    return ck;
}

TrainResult train(const ModelConfig& mc, const TrainConfig& tc,
                  const std::vector<Document>& corpus, const Vocab& vocab,
                  const std::string& out_dir, const std::string& resume, int stop_after) {
    mc.validate();
    tc.validate();
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    if (vocab.size() != mc.vocab_size)
        throw std::invalid_argument("train: model vocab_size does not match the vocabulary");

    Model model;
    AdamW opt;
    TrainConfig cfg = tc;
    ModelConfig model_cfg = mc;
    int start_step = 0;
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        model_cfg = ck.model_cfg;
        cfg = ck.train_cfg;
        model = ck.model;
        opt = ck.opt;
        start_step = ck.step;
    } else {
        model = init_model(mc, tc.seed);
        opt = AdamW(model, tc);
    }

    fs::create_directories(out_dir);
    std::ofstream csv(out_dir + "/loss.csv",
                      resume.empty() ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write " + out_dir + "/loss.csv");
    if (resume.empty()) csv << "step,lr,loss\n";

    const Rng run_rng = Rng(cfg.seed).derive("train");
    const bool shifts = model_cfg.has_ap_table();
    const bool check_isolation =
        model_cfg.mlm_scope == MlmScope::semantic_only && model_cfg.has_ap_stream();

    TrainResult res;
    int executed = 0;
    int step = start_step;
    for (; step < cfg.steps; ++step) {
        if (stop_after >= 0 && executed >= stop_after) break;
        Rng step_rng = run_rng.derive(uint64_t(step));
        Graph g;
        Tensor batch_loss;
        std::vector<Tensor> final_aps;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Document& doc = corpus[step_rng.below(uint32_t(corpus.size()))];
            Rng doc_rng = step_rng.derive("doc").derive(uint64_t(b));
            MaskedDoc masked = mask_tokens(doc, vocab, doc_rng.derive("mask"), cfg.mask);
            int n = int(doc.ids.size());
            int shift = 0;
            if (shifts) {
                Rng sr = doc_rng.derive("shift");
                shift = sample_ap_shift(n, model_cfg.max_positions, sr);
            }
            EncoderTrace tr = encoder_forward(g, model, masked.ids, make_positions(n, shift),
                                              anchor_positions(doc, vocab));
            Tensor loss = mlm_loss_rows(g, model, tr, masked.rows, masked.row_labels);
            batch_loss = b == 0 ? loss : g.add(batch_loss, loss);
            if (check_isolation && step % 50 == 0) final_aps.push_back(tr.final_ap());
        }
        Tensor loss = g.scale(batch_loss, real(1.0 / cfg.batch_size));
        g.backward(loss);
        if (!final_aps.empty()) {
            for (const Tensor& fa : final_aps) {
                const auto* ga = g.grad_if(fa);
                if (ga)
                    for (real v : *ga)
                        if (v != real(0))
                            throw std::logic_error(
                                "stream isolation violated: AP state received gradient "
                                "under the semantic-only head");
            }
        }
        double lr = lr_at(step, cfg);
        opt.step(model, g, lr);

        real loss_val = loss.item();
        char line[96];
        std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", step, lr, double(loss_val));
        csv << line;
        res.losses.push_back(loss_val);
        res.lrs.push_back(lr);
        ++executed;
    }
    csv.flush();
    save_checkpoint(out_dir + "/checkpoint", model, opt, cfg, step);
    res.model = model;
    res.final_step = step;
    return res;
}

} // namespace dstg
