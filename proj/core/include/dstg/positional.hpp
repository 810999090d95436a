#pragma once

#include "dstg/graph.hpp"
#include "dstg/tensor.hpp"

#include <vector>

namespace dstg {

// Bidirectional T5-style bucket for a signed relative offset i-j: half the
// buckets per sign, exact near zero, logarithmically widening out to
// max_distance, one overflow bucket per side beyond that.
int t5_bucket(int rel, int num_buckets = 32, int max_distance = 128);

// Learned relative-position bias. Per head: num_buckets distance buckets
// plus three distance-agnostic scalars for pairs involving the anchor
// tokens — both-special, key-special, query-special. All parameters live
// in one row tensor of n_heads blocks so the differentiable gather can
// address any head's entry by a flat code.
struct RPBiasTable {
    int n_heads = 0;
    int num_buckets = 32;
    int max_distance = 128;
    Tensor params; // [1 × n_heads·(num_buckets+3)], initialized to zero

    int entries_per_head() const { return num_buckets + 3; }
    int code_both() const { return num_buckets; }
    int code_key_special() const { return num_buckets + 1; }
    int code_query_special() const { return num_buckets + 2; }
    int flat(int head, int code) const { return head * entries_per_head() + code; }
};

RPBiasTable make_rp_table(int n_heads, int num_buckets = 32, int max_distance = 128);

// Head-independent code matrix for an n-token document: entry (i,j) is the
// bucket of i-j, or one of the three special codes. The case order checks
// both-special first, then key-special, then query-special.
IntMat rp_bias_index(int n, const std::vector<int>& special_indices, int num_buckets = 32,
                     int max_distance = 128);

// Dense bias matrix for one head, resolved outside any graph (analysis and
// tests); the model gathers the same entries differentiably instead.
Tensor rp_bias_matrix(int n, const std::vector<int>& special_indices, int head,
                      const RPBiasTable& table);

constexpr real kRopeBase = real(10000);

// rotary rotation of per-head queries/keys; thin wrapper fixing the base
Tensor apply_rope(Graph& g, const Tensor& x, const std::vector<int>& positions);

// uniform draw of the absolute-position offset k on the inclusive range
// [0, m-n]; the document then occupies positions k..k+n-1
int sample_ap_shift(int n, int m, Rng& rng);

std::vector<int> make_positions(int n, int k);

// differentiable row lookup into an absolute-position embedding table
Tensor ap_lookup(Graph& g, const Tensor& table, const std::vector<int>& positions);

} // namespace dstg
