#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "distillseg/error.hpp"

namespace distillseg {

using Index = Eigen::Index;

/// Row-major extents of a dense array, last axis fastest.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<Index> dims) : dims_(dims) {}
    explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

    std::size_t rank() const { return dims_.size(); }
    Index operator[](std::size_t axis) const { return dims_[axis]; }
    Index& operator[](std::size_t axis) { return dims_[axis]; }
    const std::vector<Index>& dims() const { return dims_; }

    Index numel() const {
        return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
    }

    /// Product of the extents from `axis` to the end.
    Index stride(std::size_t axis) const {
        return std::accumulate(dims_.begin() + static_cast<std::ptrdiff_t>(axis) + 1, dims_.end(),
                               Index{1}, std::multiplies<>());
    }

    bool operator==(const Shape& other) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
        os << ')';
        return os.str();
    }

private:
    std::vector<Index> dims_;
};

/// Dense N-d array stored contiguously in an Eigen column vector.
template <typename Scalar>
class Tensor {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MapType = Eigen::Map<Storage>;
    using ConstMapType = Eigen::Map<const Storage>;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel()) { data_.setZero(); }
    Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(shape_.numel()) { data_.setConstant(fill); }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const { return shape_; }
    Index dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t rank() const { return shape_.rank(); }
    Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    Scalar* begin() { return data_.data(); }
    Scalar* end() { return data_.data() + data_.size(); }
    const Scalar* begin() const { return data_.data(); }
    const Scalar* end() const { return data_.data() + data_.size(); }

    Storage& array() { return data_; }
    const Storage& array() const { return data_; }

    Scalar& operator[](Index i) { return data_[i]; }
    const Scalar& operator[](Index i) const { return data_[i]; }

    template <typename... Ix>
    Scalar& operator()(Ix... ix) { return data_[offset(ix...)]; }
    template <typename... Ix>
    const Scalar& operator()(Ix... ix) const { return data_[offset(ix...)]; }

    /// Contiguous sub-block selected by a leading index, e.g. one batch item.
    MapType slab(Index lead) {
        const Index n = shape_.stride(0);
        return MapType(data_.data() + lead * n, n);
    }
    ConstMapType slab(Index lead) const {
        const Index n = shape_.stride(0);
        return ConstMapType(data_.data() + lead * n, n);
    }

    void set_zero() { data_.setZero(); }

    void reshape(Shape shape) {
        if (shape.numel() != data_.size())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
        shape_ = std::move(shape);
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out(shape_);
        out.array() = data_.template cast<Other>();
        return out;
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && (data_ == other.data_).all();
    }

private:
    template <typename... Ix>
    Index offset(Ix... ix) const {
        const std::array<Index, sizeof...(Ix)> idx{static_cast<Index>(ix)...};
        Index off = 0;
        for (std::size_t a = 0; a < idx.size(); ++a) off = off * shape_[a] + idx[a];
        return off;
    }

    Shape shape_;
    Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace distillseg
