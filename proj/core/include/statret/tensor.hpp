#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "statret/rng.hpp"

namespace statret {

/// Dense fp64 array, row-major. Rank 1 tensors are vectors (shape {n}),
/// rank 2 are matrices (shape {rows, cols}); scalars are shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor scalar(double v);
    static Tensor vec(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    /// Gaussian init, scaled; the standard choice for embedding/weight tables.
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return numel() == 1; }

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(double v);

    /// "[3x4]" — used in error messages.
    std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

/// Largest |x| over all elements; 0 for empty.
double max_abs(const Tensor& t);

/// True if every element is finite.
bool all_finite(const Tensor& t);

}  // namespace statret
