#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "proxyattn/errors.hpp"

namespace proxyattn {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(std::span<const std::size_t> shape);

// Dense row-major array of doubles. Plain value type: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    // 2-D convenience constructor used heavily by tests.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access (bounds-checked in debug builds only).
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    double item() const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace proxyattn
