#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "vnd/errors.hpp"

namespace vnd {

using Shape = std::vector<std::size_t>;
using VecD = std::vector<double>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

/// Dense row-major tensor of doubles. Shapes are small (rank <= 3 in
/// practice: vectors and [channels, height, width] images).
struct Tensor {
    Shape shape;
    VecD data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, VecD d);

    static Tensor from_vector(VecD v);

    std::size_t numel() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    std::span<const double> view() const { return {data.data(), data.size()}; }

    void fill(double v);
    bool all_finite() const;
};

} // namespace vnd
