#include "dstg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dstg {

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

namespace {
size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor needs at least one dimension");
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= size_t(d);
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
    size_t n = checked_size(shape);
    d_ = std::make_shared<detail::TensorData>();
    d_->shape = std::move(shape);
    d_->v.assign(n, real(0));
    d_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
    size_t n = checked_size(shape);
    if (values.size() != n)
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not fill shape " + shape_str(shape));
    d_ = std::make_shared<detail::TensorData>();
    d_->shape = std::move(shape);
    d_->v = std::move(values);
    d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& x : t.d_->v) x = value;
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, real stddev, Rng rng, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& x : t.d_->v) x = real(rng.normal() * double(stddev));
    return t;
}

real Tensor::item() const {
    if (size() != 1)
        throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return d_->v[0];
}

bool Tensor::all_finite() const {
    for (real x : d_->v)
        if (!std::isfinite(double(x))) return false;
    return true;
}

} // namespace dstg
