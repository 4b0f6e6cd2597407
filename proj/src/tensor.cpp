#include "cseg/tensor.hpp"

#include "cseg/errors.hpp"

#include <cmath>

namespace cseg {

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::int64_t element_count(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    if (shape_.size() > 4) throw ShapeError("tensors have at most 4 axes, got " + to_string(shape_));
    data_.assign(static_cast<std::size_t>(element_count(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (shape_.size() > 4) throw ShapeError("tensors have at most 4 axes, got " + to_string(shape_));
    if (static_cast<std::int64_t>(data_.size()) != element_count(shape_)) {
        throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
    Tensor t({m.rows(), m.cols()});
    t.mat() = m;
    return t;
}

std::int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + to_string(shape_));
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

std::int64_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

std::int64_t Tensor::rows() const {
    const auto c = cols();
    return c == 0 ? 0 : static_cast<std::int64_t>(data_.size()) / c;
}

Eigen::Map<RowMatrix> Tensor::mat() { return {data_.data(), rows(), cols()}; }
Eigen::Map<const RowMatrix> Tensor::mat() const { return {data_.data(), rows(), cols()}; }

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace cseg
