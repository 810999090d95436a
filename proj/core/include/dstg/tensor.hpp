#pragma once

#include "dstg/rng.hpp"
#include "dstg/scalar.hpp"

#include <memory>
#include <string>
#include <vector>

namespace dstg {

namespace detail {
struct TensorData {
    std::vector<int> shape;
    std::vector<real> v;
    bool requires_grad = false;
};
} // namespace detail

std::string shape_str(const std::vector<int>& shape);

// Row-major dense tensor. A Tensor is a cheap handle onto shared storage;
// forward values are immutable once an op has produced them. Gradients are
// not stored here: they live in the Graph that recorded the ops, keyed by
// storage identity, so independent graphs over shared parameters do not
// contend.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false);
    Tensor(std::vector<int> shape, std::vector<real> values, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, real value, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, real stddev, Rng rng, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int ndim() const { return int(d_->shape.size()); }
    int dim(int i) const { return d_->shape[size_t(i)]; }
    // 2-D convenience; a vector counts as a single row
    int rows() const { return ndim() == 1 ? 1 : d_->shape[0]; }
    int cols() const { return ndim() == 1 ? d_->shape[0] : d_->shape[1]; }
    size_t size() const { return d_->v.size(); }

    real* data() { return d_->v.data(); }
    const real* data() const { return d_->v.data(); }
    std::vector<real>& values() { return d_->v; }
    const std::vector<real>& values() const { return d_->v; }
    real item() const;

    bool requires_grad() const { return d_ && d_->requires_grad; }
    void set_requires_grad(bool on) { d_->requires_grad = on; }

    const detail::TensorData* id() const { return d_.get(); }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    bool all_finite() const;

private:
    std::shared_ptr<detail::TensorData> d_;
};

} // namespace dstg
