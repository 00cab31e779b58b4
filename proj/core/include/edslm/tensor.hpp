// Dense row-major tensor with an optional gradient buffer.
//
// The scalar type is a template parameter: float is the training default,
// double exists so gradient checks and numeric property tests can run at
// higher precision against the same code.
#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edslm {

template <typename S>
struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<S> value;
    std::vector<S> grad;  // sized like value iff requires_grad
    bool requires_grad = false;
    std::string name;
};

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has negative dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename S>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = std::move(shape);
        t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), S(0));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static TensorT full(std::vector<int64_t> shape, S fill, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (S& v : t.n_->value) v = fill;
        return t;
    }

    static TensorT from(std::vector<int64_t> shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
        TensorT t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int64_t>& shape() const { return node().shape; }
    int64_t numel() const { return static_cast<int64_t>(node().value.size()); }
    int64_t dim(size_t i) const { return node().shape.at(i); }
    bool requires_grad() const { return node().requires_grad; }

    void set_requires_grad(bool rg) const {
        node().requires_grad = rg;
        if (rg)
            node().grad.assign(node().value.size(), S(0));
        else
            node().grad.clear();
    }

    // A TensorT is a shared handle: like shared_ptr, a const handle still
    // reaches mutable storage.  Backward closures rely on this.
    std::span<S> values() const { return {node().value.data(), node().value.size()}; }
    std::span<S> grad() const {
        if (!node().requires_grad) throw std::runtime_error("tensor '" + node().name + "' has no grad buffer");
        return {node().grad.data(), node().grad.size()};
    }

    void zero_grad() const {
        if (node().requires_grad) std::fill(node().grad.begin(), node().grad.end(), S(0));
    }

    // 2-D accessors; most graph primitives operate on row-major matrices.
    S& at(int64_t r, int64_t c) const {
        check_2d(r, c);
        return node().value[static_cast<size_t>(r * node().shape[1] + c)];
    }
    S& at(int64_t i) const { return node().value.at(static_cast<size_t>(i)); }

    const TensorT& set_name(std::string name) const {
        node().name = std::move(name);
        return *this;
    }
    const std::string& name() const { return node().name; }

    // Deep value copy detached from the graph (no grad, no shared storage).
    TensorT detached_copy() const {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = node().shape;
        t.n_->value = node().value;
        return t;
    }

    const std::shared_ptr<TensorNode<S>>& handle() const { return n_; }

  private:
    TensorNode<S>& node() const {
        if (!n_) throw std::runtime_error("use of undefined tensor");
        return *n_;
    }
    void check_2d(int64_t r, int64_t c) const {
        const auto& sh = node().shape;
        if (sh.size() != 2) throw std::invalid_argument("2-d access on tensor of shape " + shape_str(sh));
        if (r < 0 || r >= sh[0] || c < 0 || c >= sh[1])
            throw std::out_of_range("tensor index out of range");
    }

    std::shared_ptr<TensorNode<S>> n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace edslm
