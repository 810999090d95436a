#pragma once

#include "dstg/corpus.hpp"
#include "dstg/model.hpp"

#include <string>
#include <vector>

namespace dstg {

// ---------------------------------------------------------------------------
// Structural probe targets. Each returns one value per token of the document;
// rows at special tokens carry sentinels and are excluded from every dataset.
// ---------------------------------------------------------------------------

enum class ProbeTarget { TokenAp, SegmentAp, IntraSegment };

const char* target_name(ProbeTarget t);       // token_ap / segment_ap / intra_segment
ProbeTarget target_from_name(const std::string& name);

// Global position as a fraction of the model's position budget: i / max_positions.
std::vector<double> target_token_ap(const Document& doc, int max_positions);

// Discrete segment id regressed as a real value; -1 at specials.
std::vector<double> target_segment_ap(const Document& doc, const Vocab& vocab);

// Progress within the segment: 0.0 at the first token, 1.0 at the boundary
// token, 0.0 for a singleton segment; -1 at specials.
std::vector<double> target_intra_segment(const Document& doc, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Feature extraction: hidden states of one layer and stream, stacked over the
// non-special tokens of a document list in document order.
// ---------------------------------------------------------------------------

// Full is the entire hidden state and applies to every variant (for the
// disentangled model it equals Concat). Ap / Sem / Concat require an AP stream.
enum class ProbeStream { Full, Ap, Sem, Concat };

const char* probe_stream_name(ProbeStream s); // full / ap / sem / concat

// The streams reported for a model: baselines probe Full; the disentangled
// model probes Ap, Sem, and Concat.
std::vector<ProbeStream> streams_for(const ModelConfig& cfg);

struct FeatureSet {
    Tensor x;                     // [tokens x dim]
    std::vector<int> doc_of_row;  // source document index per row
};

// layer is a state index in [0, L]; 0 is the embedding output.
FeatureSet extract_features(const Model& model, const std::vector<Document>& docs,
                            const Vocab& vocab, int layer, ProbeStream stream);

// Target values aligned with extract_features rows (specials dropped).
std::vector<double> stack_targets(const std::vector<Document>& docs, const Vocab& vocab,
                                  ProbeTarget target, int max_positions);

// ---------------------------------------------------------------------------
// Ridge regression with an unpenalized intercept, solved by centered normal
// equations, and the R^2 score.
// ---------------------------------------------------------------------------

struct Ridge {
    std::vector<double> w;
    double b = 0.0;
};

Ridge ridge_fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                double lambda);

std::vector<double> ridge_predict(const Ridge& model,
                                  const std::vector<std::vector<double>>& x);

// 1 - SS_res / SS_tot; a constant target is refused.
double r2(const std::vector<double>& pred, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// The probe suite: per layer and stream, R^2 mean and std over seeded 80/20
// document splits.
// ---------------------------------------------------------------------------

struct ProbeOptions {
    int seeds = 5;
    double lambda = 1.0;
    double test_fraction = 0.2;
    uint64_t seed = 123;            // base seed for the document splits
    bool layer0_embeddings = true;  // false drops the embedding state and
                                    // relabels layers to start at the first
                                    // block's output
    void validate() const;
};

struct ProbeCell {
    int layer = 0;
    ProbeStream stream = ProbeStream::Full;
    double r2_mean = 0.0;
    double r2_std = 0.0;
};

struct ProbeReport {
    std::string model_label;  // variant name, "-full" suffix for full-scope MLM
    ProbeTarget target = ProbeTarget::TokenAp;
    std::vector<ProbeCell> cells;
    int n_train_docs = 0;
    int n_test_docs = 0;
    double lambda = 1.0;
    int seeds = 0;

    // nullptr when the cell is absent (the unconstrained final AP state of a
    // semantic-only model is not probed)
    const ProbeCell* cell(int layer, ProbeStream stream) const;
};

std::string model_label(const ModelConfig& cfg);

// One report per requested target; hidden states are extracted once.
std::vector<ProbeReport> run_probes(const Model& model, const std::vector<Document>& corpus,
                                    const Vocab& vocab,
                                    const std::vector<ProbeTarget>& targets,
                                    const ProbeOptions& opts = {});

ProbeReport run_probe(const Model& model, const std::vector<Document>& corpus,
                      const Vocab& vocab, ProbeTarget target, const ProbeOptions& opts = {});

// Header: layer,stream,r2_mean,r2_std,n_train_docs,n_test_docs,lambda,seeds
void write_probe_csv(const std::string& path, const ProbeReport& report);

} // namespace dstg
