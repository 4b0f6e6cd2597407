#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cseg {

using Shape = std::vector<std::int64_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string to_string(const Shape& shape);
std::int64_t element_count(const Shape& shape);

// Dense row-major array of doubles with up to four axes. Value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor from_matrix(const RowMatrix& m);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::int64_t i, std::int64_t j) { return data_[i * shape_.back() + j]; }
    double at(std::int64_t i, std::int64_t j) const { return data_[i * shape_.back() + j]; }
    double item() const;

    // 2-D view: rows = product of leading axes, cols = last axis.
    std::int64_t rows() const;
    std::int64_t cols() const;
    Eigen::Map<RowMatrix> mat();
    Eigen::Map<const RowMatrix> mat() const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;
    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    // Aligned so vectorised Eigen reductions peel the same way for every
    // buffer; otherwise sums depend on where the heap put the data.
    std::vector<double, Eigen::aligned_allocator<double>> data_;
};

}  // namespace cseg
