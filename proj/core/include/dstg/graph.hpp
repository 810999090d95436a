#pragma once

#include "dstg/tensor.hpp"

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

namespace dstg {

struct IntMat {
    int rows = 0;
    int cols = 0;
    std::vector<int> v;

    IntMat() = default;
    IntMat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), 0) {}
    int& at(int i, int j) { return v[size_t(i) * cols + j]; }
    int at(int i, int j) const { return v[size_t(i) * cols + j]; }
};

struct MaskMat {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> v;

    MaskMat() = default;
    MaskMat(int r, int c, uint8_t fill = 1) : rows(r), cols(c), v(size_t(r) * size_t(c), fill) {}
    uint8_t& at(int i, int j) { return v[size_t(i) * cols + j]; }
    uint8_t at(int i, int j) const { return v[size_t(i) * cols + j]; }
};

// Reverse-mode tape. Ops append one record each; backward() replays the
// tape once in reverse, so a node's gradient is complete (the sum over
// all its consumers) by the time its own rule fires. Gradients are keyed
// by storage identity and owned by the graph, never by the tensors.
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor matmul_nt(const Tensor& a, const Tensor& b); // a * b^T
    Tensor add(const Tensor& a, const Tensor& b);
    // out = mask ? a + b : a (untouched bits where masked out)
    Tensor add_masked(const Tensor& a, const Tensor& b, const MaskMat& mask);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, real s);
    Tensor rmsnorm(const Tensor& x, const Tensor& gain, real eps);
    Tensor swish(const Tensor& x);
    // key_mask: per-column validity shared by all rows; nullptr = all valid
    Tensor softmax_rows(const Tensor& logits, const std::vector<uint8_t>* key_mask = nullptr);
    // labels: one per row, negative = ignored; mean NLL over non-ignored rows
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
    Tensor row_gather(const Tensor& table, const std::vector<int>& ids);
    Tensor bias_gather(const Tensor& params, const IntMat& index);
    Tensor concat_cols(const Tensor& a, const Tensor& b);
    Tensor slice_cols(const Tensor& x, int from, int width);
    Tensor rope(const Tensor& x, const std::vector<int>& positions, real base);
    Tensor sum(const Tensor& x);

    void backward(const Tensor& loss);

    bool has_grad(const Tensor& t) const { return grads_.count(t.id()) > 0; }
    // accumulated gradient; zeros if the tensor never received one
    std::vector<real> grad(const Tensor& t) const;
    const std::vector<real>* grad_if(const Tensor& t) const;

private:
    std::vector<real>& gbuf(const Tensor& t);
    const std::vector<real>* gout(const Tensor& t) const;
    void record(std::function<void()> back);

    bool recording_;
    bool did_backward_ = false;
    std::vector<std::function<void()>> tape_;
    std::unordered_map<const detail::TensorData*, std::vector<real>> grads_;
};

// raw accumulate kernels, honor the f64 accumulation toggle
void gemm_nn_acc(real* c, const real* a, const real* b, int m, int k, int n);
void gemm_nt_acc(real* c, const real* a, const real* b, int m, int k, int n);
void gemm_tn_acc(real* c, const real* a, const real* b, int m, int k, int n);

real stable_sigmoid(real x);

} // namespace dstg
