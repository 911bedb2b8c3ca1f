#include "statret/tensor.hpp"

#include <cmath>
#include <sstream>

#include "statret/errors.hpp"

namespace statret {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor: " + shape_str() + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.values) x = stddev * rng.normal();
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor " + shape_str() + " is not rank 2");
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor " + shape_str() + " is not rank 2");
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

void Tensor::fill(double v) {
    for (double& x : values) x = v;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double x : t.values) m = std::max(m, std::fabs(x));
    return m;
}

bool all_finite(const Tensor& t) {
    for (double x : t.values) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace statret
