#include "stdnet/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stdnet {

void require(bool cond, const std::string& message) {
    if (!cond) throw std::invalid_argument(message);
}

namespace {

i64 checked_numel(const std::vector<i64>& shape) {
    require(!shape.empty(), "tensor shape must have at least one axis");
    i64 n = 1;
    for (i64 d : shape) {
        require(d > 0, "tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<i64> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<i64> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), fill);
}

Tensor::Tensor(std::vector<i64> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    require(checked_numel(shape_) == static_cast<i64>(data_.size()),
            "tensor data length does not match shape");
}

i64 Tensor::dim(i64 axis) const {
    require(axis >= 0 && axis < rank(), "tensor axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

i64 Tensor::flat_index(std::initializer_list<i64> idx) const {
    require(static_cast<i64>(idx.size()) == rank(), "index rank mismatch: " + shape_str());
    i64 flat = 0;
    i64 axis = 0;
    for (i64 i : idx) {
        const i64 d = shape_[static_cast<std::size_t>(axis)];
        require(i >= 0 && i < d, "index out of bounds on axis " + std::to_string(axis));
        flat = flat * d + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<i64> idx) {
    return data_[static_cast<std::size_t>(flat_index(idx))];
}

double Tensor::at(std::initializer_list<i64> idx) const {
    return data_[static_cast<std::size_t>(flat_index(idx))];
}

Tensor Tensor::reshaped(std::vector<i64> new_shape) const {
    require(checked_numel(new_shape) == numel(),
            "reshape must preserve element count: " + shape_str());
    return Tensor(std::move(new_shape), data_);
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::abs_sum() const {
    double s = 0.0;
    for (double v : data_) s += std::abs(v);
    return s;
}

double Tensor::max() const {
    require(!data_.empty(), "max of empty tensor");
    double m = data_[0];
    for (double v : data_) m = v > m ? v : m;
    return m;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.same_shape(b), std::string(op) + " shape mismatch: " + a.shape_str() +
                                 " vs " + b.shape_str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    require_same_shape(x, upstream, "relu_backward");
    Tensor out(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return out;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& upstream) {
    require_same_shape(y, upstream, "sigmoid_backward");
    Tensor out(y.shape());
    for (i64 i = 0; i < y.numel(); ++i) out[i] = upstream[i] * y[i] * (1.0 - y[i]);
    return out;
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b, double s) {
    switch (op) {
        case EwOp::add:
            require(b != nullptr, "add needs a second operand");
            return add(a, *b);
        case EwOp::sub:
            require(b != nullptr, "sub needs a second operand");
            return sub(a, *b);
        case EwOp::mul:
            require(b != nullptr, "mul needs a second operand");
            return mul(a, *b);
        case EwOp::scale:
            return scale(a, s);
        case EwOp::relu:
            return relu(a);
        case EwOp::sigmoid:
            return sigmoid(a);
    }
    throw std::invalid_argument("unknown elementwise op");
}

Tensor matvec(const Tensor& w, const Tensor& v) {
    require(w.rank() == 2, "matvec: W must be rank 2, got " + w.shape_str());
    require(v.rank() == 1, "matvec: v must be rank 1, got " + v.shape_str());
    const i64 m = w.dim(0), n = w.dim(1);
    require(v.dim(0) == n, "matvec: inner dimensions differ: " + w.shape_str() + " vs " + v.shape_str());
    Tensor out({m});
    const double* wp = w.data();
    const double* vp = v.data();
    for (i64 i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = wp + i * n;
        for (i64 j = 0; j < n; ++j) acc += row[j] * vp[j];
        out[i] = acc;
    }
    return out;
}

Tensor matvec_backward_w(const Tensor& upstream, const Tensor& v) {
    require(upstream.rank() == 1 && v.rank() == 1, "matvec_backward_w: rank-1 operands required");
    const i64 m = upstream.dim(0), n = v.dim(0);
    Tensor out({m, n});
    for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j) out[i * n + j] = upstream[i] * v[j];
    return out;
}

Tensor matvec_backward_v(const Tensor& w, const Tensor& upstream) {
    require(w.rank() == 2 && upstream.rank() == 1, "matvec_backward_v: bad ranks");
    const i64 m = w.dim(0), n = w.dim(1);
    require(upstream.dim(0) == m, "matvec_backward_v: upstream length mismatch");
    Tensor out({n});
    const double* wp = w.data();
    for (i64 i = 0; i < m; ++i) {
        const double* row = wp + i * n;
        const double u = upstream[i];
        for (i64 j = 0; j < n; ++j) out[j] += row[j] * u;
    }
    return out;
}

}  // namespace stdnet
