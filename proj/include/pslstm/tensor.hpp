#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pslstm {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles with an explicit shape.
///
/// There are no views or strides: reshape() and transpose() return copies.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
    static Tensor identity(std::size_t n);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    Tensor reshape(Shape shape) const;
    void fill(double value);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

enum class UnaryOp { tanh, sigmoid, exp, log };
enum class BinaryOp { add, sub, mul, div, max };

/// checked: division by an exact zero throws NumericError.
/// ieee: division follows IEEE-754 (inf/nan), used by raw-mode probes.
enum class ArithmeticMode { checked, ieee };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor elementwise(UnaryOp op, const Tensor& a);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b,
                   ArithmeticMode mode = ArithmeticMode::checked);
Tensor elementwise(BinaryOp op, const Tensor& a, double scalar,
                   ArithmeticMode mode = ArithmeticMode::checked);

double sum(const Tensor& a);
double mean(const Tensor& a);
double max_abs(const Tensor& a);
double l2_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Scalar activations, numerically safe at large |x|.
double sigmoid(double x);
double log_sigmoid(double x);

}  // namespace pslstm
