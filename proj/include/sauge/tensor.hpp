#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sauge/errors.hpp"

namespace sauge {

/// Dense row-major array of doubles. Feature grids are stored channel-first
/// as {C, H, W}; weights as {C_out, C_in, k, k}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Element access for {C, H, W} tensors.
    double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
    double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }

    void fill(double v);
    Tensor reshaped(std::vector<int> shape) const;
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Row-major 2-D grid used for per-pixel maps (probabilities, labels, masks).
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const auto& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Grid&) const = default;
};

using ProbMap = Grid<double>;
using BinaryMap = Grid<std::uint8_t>;

std::size_t popcount(const BinaryMap& m);
BinaryMap logical_or(const BinaryMap& a, const BinaryMap& b);

/// {1, H, W} tensor <-> H x W map.
ProbMap to_map(const Tensor& t);
Tensor to_tensor(const ProbMap& m);

template <typename A, typename B>
void require_same_grid(const A& a, const B& b, const char* what) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw DimensionError(std::string(what) + ": grid " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                             " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

}  // namespace sauge
