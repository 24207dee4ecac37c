// Dense row-major tensor of doubles plus the elementwise/matvec primitives
// the rest of the library is built on. Innermost axis is the fastest-moving
// (width for image-shaped tensors). Operations are pure: inputs are never
// modified, results are returned by value.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace stdnet {

using i64 = std::int64_t;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<i64> shape);
    Tensor(std::vector<i64> shape, double fill);
    Tensor(std::vector<i64> shape, std::vector<double> data);

    static Tensor zeros(std::vector<i64> shape) { return Tensor(std::move(shape)); }
    static Tensor ones(std::vector<i64> shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor full(std::vector<i64> shape, double v) { return Tensor(std::move(shape), v); }

    i64 rank() const { return static_cast<i64>(shape_.size()); }
    i64 dim(i64 axis) const;
    i64 numel() const { return static_cast<i64>(data_.size()); }
    const std::vector<i64>& shape() const { return shape_; }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](i64 flat) { return data_[static_cast<std::size_t>(flat)]; }
    double operator[](i64 flat) const { return data_[static_cast<std::size_t>(flat)]; }

    // Checked multi-index access; slow path meant for tests and setup code.
    double& at(std::initializer_list<i64> idx);
    double at(std::initializer_list<i64> idx) const;

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<i64> new_shape) const;

    double sum() const;
    double abs_sum() const;
    double max() const;
    bool all_finite() const;

    std::string shape_str() const;

private:
    i64 flat_index(std::initializer_list<i64> idx) const;

    std::vector<i64> shape_;
    std::vector<double> data_;
};

// Elementwise ops. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Gradient of relu(x) given upstream: passes where x > 0, zero elsewhere
// (subgradient at 0 is taken as 0).
Tensor relu_backward(const Tensor& x, const Tensor& upstream);
// Gradient of sigmoid given its *output* y: upstream * y * (1 - y).
Tensor sigmoid_backward(const Tensor& y, const Tensor& upstream);

// Single-dispatch surface over the ops above. `scale` takes the scalar in s;
// relu/sigmoid ignore b and s; binary ops ignore s.
enum class EwOp { add, sub, mul, scale, relu, sigmoid };
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr, double s = 0.0);

// W [m,n] times v [n] -> [m].
Tensor matvec(const Tensor& w, const Tensor& v);
// Gradients of matvec: d/dW = upstream outer v, d/dv = W^T upstream.
Tensor matvec_backward_w(const Tensor& upstream, const Tensor& v);
Tensor matvec_backward_v(const Tensor& w, const Tensor& upstream);

// Value + analytic-gradient pair carried through block-level backward paths.
struct GradPair {
    Tensor value;
    Tensor grad;
};

// Throws std::invalid_argument when cond is false. Contract checks only.
void require(bool cond, const std::string& message);

}  // namespace stdnet
