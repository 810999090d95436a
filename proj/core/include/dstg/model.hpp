#pragma once

#include "dstg/graph.hpp"
#include "dstg/positional.hpp"
#include "dstg/tensor.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dstg {

enum class Variant { DSTG, AP, RP, RoPE };
enum class MlmScope { semantic_only, full };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
const char* scope_name(MlmScope s);
MlmScope scope_from_name(const std::string& name);

struct ModelConfig {
    int layers = 2;
    int n_heads = 4;
    int d_ap = 8;
    int d_sem = 56;
    int max_positions = 128; // m
    int vocab_size = 0;      // V
    Variant variant = Variant::DSTG;
    MlmScope mlm_scope = MlmScope::semantic_only;
    int num_buckets = 32;
    int max_distance = 128;
    real norm_eps = real(1e-6);

    int d_model() const { return d_ap + d_sem; }
    int d_head() const { return d_model() / n_heads; }
    int d_inter() const { return 4 * d_model(); }

    bool has_ap_stream() const { return variant == Variant::DSTG && d_ap > 0; }
    bool has_ap_table() const { return has_ap_stream() || variant == Variant::AP; }
    bool has_rp_bias() const { return variant == Variant::DSTG || variant == Variant::RP; }
    bool uses_rope() const { return variant == Variant::RoPE; }

    void validate() const; // throws std::invalid_argument on violations
};

// One encoder layer's parameters. AP-specific tensors exist only when the
// config carries an AP stream; they are then full members of the registry.
struct LayerParams {
    Tensor gain_ap_attn, gain_sem_attn; // RMSNorm gains before attention
    Tensor wq_sem, wk_sem;              // [d_sem × d_model]: per-head width d_head
    Tensor wq_ap, wk_ap;                // [d_ap × d_model]: same per-head width
    Tensor wv_sem, wo_sem;              // [d_sem × d_sem]
    Tensor wv_ap, wo_ap;                // [d_ap × d_ap]
    RPBiasTable rp;                     // per-layer relative bias
    Tensor gain_ap_ffn, gain_sem_ffn;   // RMSNorm gains before the SwiGLU
    Tensor w_gate, w_up;                // [d_model × 4·d_model]
    Tensor w_down_ap;                   // [4·d_ap × d_ap]
    Tensor w_down_sem;                  // [4·d_sem × d_sem]
};

struct Model {
    ModelConfig cfg;
    Tensor tok_emb;  // [V × d_sem]
    Tensor ap_table; // [m × d_ap] (DSTG) or [m × d_model] (AP variant)
    std::vector<LayerParams> layers;
    Tensor mlm_head; // [d_sem × V] or [d_model × V] by scope

    // stable name → tensor registry; iteration order is the declaration
    // order above and is the checkpoint and optimizer order
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    Tensor param(const std::string& name) const;
    size_t param_count() const;
};

Model init_model(const ModelConfig& cfg, uint64_t seed);

// per-head attention internals retained when capture is requested
struct HeadTrace {
    Tensor w_sem;      // [n×n] scaled semantic logits
    Tensor w_ap;       // [n×n] scaled AP logits before masking (empty if unused)
    Tensor w_ap_used;  // [n×n] contribution actually added (zero at special pairs)
    Tensor b;          // [n×n] relative bias (empty if unused)
    Tensor logits;     // [n×n] summed pre-softmax logits
    Tensor attn;       // [n×n] post-softmax probabilities
};

struct EncoderTrace {
    // states[0] is the embedding state; states[l] the output of layer l.
    // x_ap entries are zero-width tensors for variants without the stream.
    std::vector<Tensor> x_ap;
    std::vector<Tensor> x_sem;
    // attention-sublayer outputs (before the SwiGLU) per layer; the AP entry
    // is the last point in a block where the streams are provably separate
    std::vector<Tensor> x_ap_attn;
    std::vector<Tensor> x_sem_attn;
    std::vector<std::vector<HeadTrace>> heads; // [layer][head], if captured

    const Tensor& final_ap() const { return x_ap.back(); }
    const Tensor& final_sem() const { return x_sem.back(); }
};

struct ForwardOptions {
    bool capture_heads = false;
    // forced attention probabilities per (layer, head); overrides softmax
    const std::map<std::pair<int, int>, Tensor>* inject_attn = nullptr;
};

// Full encoder pass. positions are absolute ids (shift included); specials
// lists the token indices treated as anchors by Eq. 1/Eq. 2. Gradients flow
// through g when it is recording.
EncoderTrace encoder_forward(Graph& g, const Model& model, const std::vector<int>& ids,
                             const std::vector<int>& positions,
                             const std::vector<int>& specials,
                             const ForwardOptions& opts = {});

// [n × V] prediction logits from the final state under the config's scope
Tensor mlm_logits(Graph& g, const Model& model, const EncoderTrace& trace);

// Loss on a subset of rows: logits are built only for those rows. Labels
// align with rows (no ignore entries expected here).
Tensor mlm_loss_rows(Graph& g, const Model& model, const EncoderTrace& trace,
                     const std::vector<int>& rows, const std::vector<int>& labels);

// analytic parameter count for the config, against which the live model
// registry is regression-tested
size_t expected_param_count(const ModelConfig& cfg);

} // namespace dstg
