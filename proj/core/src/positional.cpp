#include "dstg/positional.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dstg {

int t5_bucket(int rel, int num_buckets, int max_distance) {
    if (num_buckets < 4 || num_buckets % 2 != 0)
        throw std::invalid_argument("t5_bucket needs an even bucket count >= 4, got " +
                                    std::to_string(num_buckets));
    int half = num_buckets / 2;
    int max_exact = half / 2;
    if (max_distance <= max_exact)
        throw std::invalid_argument("t5_bucket max_distance must exceed " +
                                    std::to_string(max_exact));
    int ret = rel > 0 ? half : 0;
    int n = std::abs(rel);
    if (n < max_exact) return ret + n;
    double v = double(max_exact) + std::log(double(n) / double(max_exact)) /
                                       std::log(double(max_distance) / double(max_exact)) *
                                       double(half - max_exact);
    return ret + std::min(int(v), half - 1);
}

RPBiasTable make_rp_table(int n_heads, int num_buckets, int max_distance) {
    if (n_heads < 1) throw std::invalid_argument("rp table needs at least one head");
    RPBiasTable t;
    t.n_heads = n_heads;
    t.num_buckets = num_buckets;
    t.max_distance = max_distance;
    t.params = Tensor::zeros({1, n_heads * (num_buckets + 3)}, true);
    // validate the bucket arguments once up front
    t5_bucket(0, num_buckets, max_distance);
    return t;
}

IntMat rp_bias_index(int n, const std::vector<int>& special_indices, int num_buckets,
                     int max_distance) {
    std::vector<uint8_t> special(size_t(n), 0);
    for (int s : special_indices) {
        if (s < 0 || s >= n)
            throw std::invalid_argument("special index " + std::to_string(s) +
                                        " out of range for " + std::to_string(n) + " tokens");
        special[size_t(s)] = 1;
    }
    IntMat idx(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            int code;
            if (special[size_t(i)] && special[size_t(j)])
                code = num_buckets; // both-special, checked first
            else if (special[size_t(j)])
                code = num_buckets + 1; // key-special
            else if (special[size_t(i)])
                code = num_buckets + 2; // query-special
            else
                code = t5_bucket(i - j, num_buckets, max_distance);
            idx.at(i, j) = code;
        }
    return idx;
}

Tensor rp_bias_matrix(int n, const std::vector<int>& special_indices, int head,
                      const RPBiasTable& table) {
    if (head < 0 || head >= table.n_heads)
        throw std::invalid_argument("head " + std::to_string(head) + " out of range for " +
                                    std::to_string(table.n_heads) + " heads");
    IntMat idx = rp_bias_index(n, special_indices, table.num_buckets, table.max_distance);
    Tensor out({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.data()[size_t(i) * n + j] =
                table.params.data()[size_t(table.flat(head, idx.at(i, j)))];
    return out;
}

Tensor apply_rope(Graph& g, const Tensor& x, const std::vector<int>& positions) {
    return g.rope(x, positions, kRopeBase);
}

int sample_ap_shift(int n, int m, Rng& rng) {
    if (n > m)
        throw std::invalid_argument("document length " + std::to_string(n) +
                                    " exceeds max positions " + std::to_string(m));
    return int(rng.below(uint32_t(m - n + 1)));
}

std::vector<int> make_positions(int n, int k) {
    std::vector<int> p(size_t(n), 0);
    for (int i = 0; i < n; ++i) p[size_t(i)] = k + i;
    return p;
}

Tensor ap_lookup(Graph& g, const Tensor& table, const std::vector<int>& positions) {
    return g.row_gather(table, positions);
}

} // namespace dstg
