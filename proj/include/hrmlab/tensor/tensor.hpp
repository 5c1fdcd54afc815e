#pragma once

#include "hrmlab/common.hpp"

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

namespace hrmlab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

enum class DType { F32, F64 };

template <class S> struct dtype_of;
template <> struct dtype_of<float> { static constexpr DType value = DType::F32; };
template <> struct dtype_of<double> { static constexpr DType value = DType::F64; };

template <class S>
struct TensorData {
    Shape shape;
    std::vector<S> values;
    bool requires_grad = false;
    std::vector<S> grad; // empty until first accumulation
};

// Dense row-major tensor handle. Copies share storage; values are treated as
// immutable once a tensor has entered a graph, except for grad accumulation
// and explicit parameter updates between steps.
template <class S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<S>>();
        int64_t n = shape_numel(shape);
        t.d_->shape = std::move(shape);
        t.d_->values.assign(static_cast<size_t>(n), S(0));
        return t;
    }

    static Tensor constant(Shape shape, S v) {
        Tensor t = zeros(std::move(shape));
        for (S& x : t.d_->values) x = v;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<S> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError(strcat("tensor: ", values.size(), " values do not fill shape ", shape_str(shape)));
        Tensor t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = std::move(shape);
        t.d_->values = std::move(values);
        return t;
    }

    static Tensor scalar(S v) { return from_values({1}, {v}); }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
    constexpr DType dtype() const { return dtype_of<S>::value; }

    std::span<S> data() { return d_->values; }
    std::span<const S> data() const { return d_->values; }
    S* ptr() { return d_->values.data(); }
    const S* ptr() const { return d_->values.data(); }

    S item() const {
        if (numel() != 1) throw ShapeError(strcat("item() on non-scalar tensor of shape ", shape_str(shape())));
        return d_->values[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        d_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    // Zero-filled view when no gradient has been accumulated yet.
    std::vector<S> grad_or_zero() const {
        if (has_grad()) return d_->grad;
        return std::vector<S>(d_->values.size(), S(0));
    }
    std::span<S> grad() {
        ensure_grad();
        return d_->grad;
    }
    void zero_grad() { d_->grad.clear(); }

    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
    }

    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        return t;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    std::shared_ptr<TensorData<S>> raw() const { return d_; }

private:
    std::shared_ptr<TensorData<S>> d_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace hrmlab
