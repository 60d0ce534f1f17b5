#include "pslstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace pslstm {

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("shape " + to_string(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
        if (row.size() != n) throw ShapeError("ragged rows in Tensor::from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    const double* pa = a.raw();
    const double* pb = b.raw();
    double* pc = c.raw();
    // i-p-j order keeps the inner loop contiguous in both b and c.
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
    return t;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    // log(sigmoid(x)) = -softplus(-x)
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

namespace {

double apply_unary(UnaryOp op, double x) {
    switch (op) {
        case UnaryOp::tanh: return std::tanh(x);
        case UnaryOp::sigmoid: return sigmoid(x);
        case UnaryOp::exp: return std::exp(x);
        case UnaryOp::log: return std::log(x);
    }
    return x;
}

double apply_binary(BinaryOp op, double x, double y, ArithmeticMode mode) {
    switch (op) {
        case BinaryOp::add: return x + y;
        case BinaryOp::sub: return x - y;
        case BinaryOp::mul: return x * y;
        case BinaryOp::div:
            if (y == 0.0 && mode == ArithmeticMode::checked) throw NumericError("division by zero");
            return x / y;
        case BinaryOp::max: return std::max(x, y);
    }
    return x;
}

}  // namespace

Tensor elementwise(UnaryOp op, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = apply_unary(op, v);
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b, ArithmeticMode mode) {
    if (b.size() == 1 && b.rank() <= 1 && a.size() != 1) return elementwise(op, a, b[0], mode);
    if (a.shape() != b.shape()) {
        throw ShapeError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = apply_binary(op, od[i], bd[i], mode);
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, double scalar, ArithmeticMode mode) {
    Tensor out = a;
    for (auto& v : out.data()) v = apply_binary(op, v, scalar, mode);
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

double mean(const Tensor& a) {
    if (a.empty()) throw ShapeError("mean of an empty tensor");
    return sum(a) / static_cast<double>(a.size());
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double l2_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    double m = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
    return m;
}

}  // namespace pslstm
