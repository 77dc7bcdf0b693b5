#include "vnd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vnd {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, VecD d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw ConfigError("tensor data size " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    for (std::size_t e : shape)
        if (e == 0) throw ConfigError("tensor shape has a zero extent: " + shape_str(shape));
}

Tensor Tensor::from_vector(VecD v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
}

void Tensor::fill(double v) {
    for (double& x : data) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace vnd
