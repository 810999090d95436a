#pragma once

#include "dstg/corpus.hpp"
#include "dstg/model.hpp"

#include <array>
#include <string>
#include <vector>

namespace dstg {

// ---------------------------------------------------------------------------
// Embedding spectrum: PCA of a position-embedding matrix plus a DCT-II
// frequency profile of each principal component's position series.
// ---------------------------------------------------------------------------

struct SpectrumReport {
    // One entry per principal component, strongest first.
    std::vector<double> variance_ratio;          // >= 0; sums to 1 unless the
                                                 // matrix is degenerate
    std::vector<std::vector<double>> dct_power;  // per-PC squared DCT-II bins
    std::vector<double> lowfreq_share;           // bins 0..3 power / total, per PC
    double total_variance = 0.0;                 // trace of the covariance
};

// Plain O(m^2) evaluation of X_k = sum_n x_n cos(pi (n + 1/2) k / m).
std::vector<double> dct_type2(const std::vector<double>& x);

// e: m x d matrix, row p = embedding of position p. Rows are mean-centered
// over positions before the SVD. A matrix with zero variance (all rows equal)
// yields total_variance 0 and all-zero ratios instead of an error.
SpectrumReport embedding_spectrum(const std::vector<std::vector<double>>& e);
SpectrumReport embedding_spectrum(const Tensor& e);

void write_spectrum_csv(const std::string& path, const SpectrumReport& report);

// Reads a numeric CSV (no header) as a dense row-major matrix; used to run
// the spectrum analysis on an embedding matrix exported from elsewhere.
std::vector<std::vector<double>> read_matrix_csv(const std::string& path);

// ---------------------------------------------------------------------------
// KL head taxonomy: per-head influence of the semantic, AP, and RP logit
// components, measured as D_KL(A || A_without_component) with the component
// removed before the softmax, averaged over query rows and documents.
// ---------------------------------------------------------------------------

struct HeadInfluence {
    int layer = 0;
    int head = 0;
    std::array<double, 3> raw{};         // [sem, ap, rp], each >= 0
    std::array<double, 3> normalized{};  // raw / L1(raw); zeros if raw is zero
};

// D_KL(p || q) over two discrete distributions of equal support; tiny negative
// rounding residue is clamped to zero.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct HeadInfluenceOptions {
    // Special-token query rows carry semantic and RP signal (their AP term is
    // structurally zero), so they are averaged in by default.
    bool include_special_rows = true;
};

// Requires a model with all three logit components (the disentangled variant).
std::vector<HeadInfluence> all_head_influences(const Model& model,
                                               const std::vector<Document>& docs,
                                               const Vocab& vocab,
                                               const HeadInfluenceOptions& opts = {});

HeadInfluence head_influence(const Model& model, const std::vector<Document>& docs,
                             const Vocab& vocab, int layer, int head,
                             const HeadInfluenceOptions& opts = {});

// Header: layer,head,score_sem,score_ap,score_rp,norm_sem,norm_ap,norm_rp
void write_heads_csv(const std::string& path, const std::vector<HeadInfluence>& heads);

// ---------------------------------------------------------------------------
// Per-component attention maps: softmax applied independently to each logit
// component of one layer, alongside the model's combined attention.
// ---------------------------------------------------------------------------

struct AttentionMapSet {
    int layer = 0;
    // One n x n row-stochastic map per head and component.
    std::vector<Tensor> sem, ap, rp, combined;
};

// Requires the disentangled variant. combined is the live attention tensor of
// the forward pass, bit-identical to what the model used.
AttentionMapSet attention_maps(const Model& model, const Document& doc,
                               const Vocab& vocab, int layer);

void write_matrix_csv(const std::string& path, const Tensor& mat);

// Monochrome heatmap, per-map min/max normalization.
void write_heatmap_svg(const std::string& path, const Tensor& mat);

// ---------------------------------------------------------------------------
// Hidden-state PCA: 2-D projection of one stream's hidden states for a single
// document, with segment labels for coloring.
// ---------------------------------------------------------------------------

enum class Stream { AP, Sem };

const char* stream_name(Stream s);

struct Pca2d {
    std::vector<std::array<double, 2>> coords;  // one row per input row
    std::vector<double> variance_ratio;         // all PCs, descending
};

Pca2d pca_2d(const std::vector<std::vector<double>>& rows);

struct HiddenPcaResult {
    std::vector<std::array<double, 2>> coords;  // per token
    std::vector<int> segment;                   // segment id, -1 on specials
    std::vector<double> variance_ratio;
};

// layer is a state index in [0, L]; 0 is the embedding output. The final AP
// state of a semantic-only model is unconstrained by training and is refused.
HiddenPcaResult hidden_pca(const Model& model, const Document& doc,
                           const Vocab& vocab, int layer, Stream stream);

// Header: token_index,pc1,pc2,segment_id
void write_hidden_pca_csv(const std::string& path, const HiddenPcaResult& result);

// ---------------------------------------------------------------------------
// Inter-model regression: ridge-map rows of src onto rows of dst, scored by
// R^2 averaged over target dimensions on held-out rows.
// ---------------------------------------------------------------------------

// src and dst must have the same row count (same tokens). Target dimensions
// with zero variance on the held-out rows are skipped; if every dimension is
// degenerate the call fails.
double inter_model_regression(const Tensor& src, const Tensor& dst, double lambda,
                              const std::vector<int>& train_rows,
                              const std::vector<int>& test_rows);

} // namespace dstg
