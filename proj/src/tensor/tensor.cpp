#include "proxyattn/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace proxyattn {

std::string shape_str(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t numel_of(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    data_.assign(numel_of(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    if (data_.size() != numel_of(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
    assert(idx.size() == shape_.size());
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
        assert(i < shape_[axis]);
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel_of(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace proxyattn
