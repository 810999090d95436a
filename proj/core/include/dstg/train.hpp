#pragma once

#include "dstg/corpus.hpp"
#include "dstg/model.hpp"

#include <string>
#include <vector>

namespace dstg {

struct MaskPolicy {
    double rate = 0.15;   // fraction of non-special positions selected
    double p_mask = 0.8;  // of selected: replaced with [MASK]
    double p_random = 0.1; // of selected: replaced with a random id
    double p_keep = 0.1;  // of selected: left unchanged

    void validate() const; // rate ∈ (0,1], split sums to 1
};

struct TrainConfig {
    int steps = 300;
    int batch_size = 8;
    int warmup = 30;
    double peak_lr = 1e-2;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    MaskPolicy mask;
    uint64_t seed = 42;

    void validate() const; // warmup ≤ steps, positive sizes, rate ∈ (0,1)
};

struct MaskedDoc {
    std::vector<int> ids;    // corrupted sequence
    std::vector<int> labels; // original ids at selected positions, -1 elsewhere
    std::vector<int> rows;   // selected positions, ascending
    std::vector<int> row_labels;
};

// MLM corruption. Every non-special position is selected independently at
// policy.rate; if the draw selects nothing, one maskable position is
// forced so the document always contributes loss rows. Random
// replacements avoid the reserved special ids.
MaskedDoc mask_tokens(const Document& doc, const Vocab& vocab, Rng rng,
                      const MaskPolicy& policy);

// Linear warmup to peak_lr at step == warmup, then cosine decay to zero
// at step == steps. Defined for step ∈ [0, steps].
double lr_at(int step, const TrainConfig& cfg);

// One AdamW coordinate-wise update with decoupled weight decay, applied
// in place. t is the 1-based step count used for bias correction.
void adamw_update(real* p, const real* g, real* m, real* v, size_t n, double lr,
                  const TrainConfig& cfg, int t);

class AdamW {
public:
    AdamW() = default;
    AdamW(const Model& model, const TrainConfig& cfg);

    // applies gradients accumulated in g (zeros for parameters g never saw)
    void step(Model& model, const Graph& g, double lr);

    int t() const { return t_; }
    void set_t(int t) { t_ = t; }
    std::vector<std::pair<std::string, std::vector<real>>>& first_moments() { return m_; }
    std::vector<std::pair<std::string, std::vector<real>>>& second_moments() { return v_; }
    const std::vector<std::pair<std::string, std::vector<real>>>& first_moments() const {
        return m_;
    }
    const std::vector<std::pair<std::string, std::vector<real>>>& second_moments() const {
        return v_;
    }

private:
    TrainConfig cfg_;
    std::vector<std::pair<std::string, std::vector<real>>> m_, v_;
    int t_ = 0;
};

struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    int step = 0;
    Model model;
    AdamW opt;
};

// Writes dir/manifest.json and dir/tensors.bin (raw little-endian f32 in
// manifest order: parameters, then first and second moments).
void save_checkpoint(const std::string& dir, const Model& model, const AdamW& opt,
                     const TrainConfig& tc, int step);
Checkpoint load_checkpoint(const std::string& dir);

struct TrainResult {
    Model model;
    std::vector<real> losses;  // one entry per executed step
    std::vector<double> lrs;
    int final_step = 0;
};

// Deterministic MLM training. Writes out_dir/loss.csv and a final
// checkpoint under out_dir/checkpoint. When `resume` points at a
// checkpoint directory, training continues from its step with its
// configuration, appending to the existing loss trace. stop_after halts
// after that many additional executed steps (testing hook; -1 runs to
// completion). Loss is the mean over the batch of per-document mean
// masked cross-entropies.
TrainResult train(const ModelConfig& mc, const TrainConfig& tc,
                  const std::vector<Document>& corpus, const Vocab& vocab,
                  const std::string& out_dir, const std::string& resume = "",
                  int stop_after = -1);

} // namespace dstg
