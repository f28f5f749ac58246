#include "sauge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace sauge {

namespace {
std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative tensor extent in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_))
        throw DimensionError("tensor payload of " + std::to_string(data_.size()) + " values does not fit " +
                             shape_str(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t popcount(const BinaryMap& m) {
    return static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; }));
}

BinaryMap logical_or(const BinaryMap& a, const BinaryMap& b) {
    require_same_grid(a, b, "logical_or");
    BinaryMap out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
    return out;
}

ProbMap to_map(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 1) throw DimensionError("to_map expects a (1, H, W) tensor, got " + shape_str(t.shape()));
    ProbMap m(t.dim(1), t.dim(2));
    std::copy(t.values().begin(), t.values().end(), m.data.begin());
    return m;
}

Tensor to_tensor(const ProbMap& m) { return Tensor({1, m.rows, m.cols}, m.data); }

}  // namespace sauge
