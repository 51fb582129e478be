#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rigl/errors.hpp"

namespace rigl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major buffer of values with an optional gradient of the same length.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (shape_size(shape) != values.size())
            throw InputError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }

    std::size_t size() const { return values.size(); }
    bool has_grad() const { return !grad.empty(); }

    void zero_grad() { grad.assign(values.size(), 0.0); }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    std::span<double> data() { return values; }
    std::span<const double> data() const { return values; }
};

}  // namespace rigl
