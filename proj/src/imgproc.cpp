#include "sauge/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace sauge::imgproc {

namespace {
int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

// out[i] = sum_j weight(i, j) * in[j]; sparse rows.
struct Resampler {
    std::vector<std::vector<std::pair<int, double>>> rows;
};

Resampler area_weights(int in, int out) {
    Resampler r;
    r.rows.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double a = i * scale, b = (i + 1) * scale;
        for (int j = static_cast<int>(std::floor(a)); j < static_cast<int>(std::ceil(b)) && j < in; ++j) {
            const double overlap = std::min(b, j + 1.0) - std::max(a, static_cast<double>(j));
            if (overlap > 0) r.rows[i].emplace_back(j, overlap / scale);
        }
    }
    return r;
}

Resampler bilinear_weights(int in, int out) {
    Resampler r;
    r.rows.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = std::max(0.0, (i + 0.5) * scale - 0.5);
        int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
        int hi = std::min(lo + 1, in - 1);
        double f = src - lo;
        r.rows[i].emplace_back(lo, 1.0 - f);
        if (f > 0) r.rows[i].emplace_back(hi, f);
    }
    return r;
}

ProbMap apply(const ProbMap& in, const Resampler& ry, const Resampler& rx) {
    const int rows = static_cast<int>(ry.rows.size()), cols = static_cast<int>(rx.rows.size());
    ProbMap tmp(in.rows, cols);
    for (int y = 0; y < in.rows; ++y)
        for (int x = 0; x < cols; ++x) {
            double s = 0;
            for (auto [j, w] : rx.rows[x]) s += w * in(y, j);
            tmp(y, x) = s;
        }
    ProbMap out(rows, cols);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            double s = 0;
            for (auto [j, w] : ry.rows[y]) s += w * tmp(j, x);
            out(y, x) = s;
        }
    return out;
}
}  // namespace

ProbMap separable(const ProbMap& in, const std::vector<double>& row_kernel, const std::vector<double>& col_kernel) {
    const int rk = static_cast<int>(row_kernel.size()) / 2, ck = static_cast<int>(col_kernel.size()) / 2;
    ProbMap tmp(in.rows, in.cols);
    for (int y = 0; y < in.rows; ++y)
        for (int x = 0; x < in.cols; ++x) {
            double s = 0;
            for (int k = -rk; k <= rk; ++k) s += row_kernel[k + rk] * in(y, clampi(x + k, 0, in.cols - 1));
            tmp(y, x) = s;
        }
    ProbMap out(in.rows, in.cols);
    for (int y = 0; y < in.rows; ++y)
        for (int x = 0; x < in.cols; ++x) {
            double s = 0;
            for (int k = -ck; k <= ck; ++k) s += col_kernel[k + ck] * tmp(clampi(y + k, 0, in.rows - 1), x);
            out(y, x) = s;
        }
    return out;
}

ProbMap gaussian_blur(const ProbMap& in, double sigma) {
    if (sigma <= 0) return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double z = 0;
    for (int i = -radius; i <= radius; ++i) z += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= z;
    return separable(in, k, k);
}

Gradient sobel(const ProbMap& in) {
    const std::vector<double> smooth{1, 2, 1}, diff{-1, 0, 1};
    return {separable(in, diff, smooth), separable(in, smooth, diff)};
}

ProbMap resize_area(const ProbMap& in, int rows, int cols) {
    if (rows == in.rows && cols == in.cols) return in;
    return apply(in, area_weights(in.rows, rows), area_weights(in.cols, cols));
}

ProbMap resize_bilinear(const ProbMap& in, int rows, int cols) {
    if (rows == in.rows && cols == in.cols) return in;
    return apply(in, bilinear_weights(in.rows, rows), bilinear_weights(in.cols, cols));
}

BinaryMap resize_nearest(const BinaryMap& in, int rows, int cols) {
    BinaryMap out(rows, cols);
    for (int y = 0; y < rows; ++y) {
        const int sy = std::min(in.rows - 1, static_cast<int>(std::floor((y + 0.5) * in.rows / rows)));
        for (int x = 0; x < cols; ++x) {
            const int sx = std::min(in.cols - 1, static_cast<int>(std::floor((x + 0.5) * in.cols / cols)));
            out(y, x) = in(sy, sx);
        }
    }
    return out;
}

BinaryMap flood_fill(const BinaryMap& mask, int r, int c) {
    BinaryMap out(mask.rows, mask.cols);
    if (r < 0 || c < 0 || r >= mask.rows || c >= mask.cols || !mask(r, c)) return out;
    std::vector<std::pair<int, int>> stack{{r, c}};
    out(r, c) = 1;
    while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        constexpr int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            const int ny = y + dy[k], nx = x + dx[k];
            if (ny < 0 || nx < 0 || ny >= mask.rows || nx >= mask.cols) continue;
            if (mask(ny, nx) && !out(ny, nx)) {
                out(ny, nx) = 1;
                stack.emplace_back(ny, nx);
            }
        }
    }
    return out;
}

ProbMap channel(const Tensor& chw, int c) {
    ProbMap m(chw.dim(1), chw.dim(2));
    const std::size_t plane = m.size();
    std::copy(chw.data() + c * plane, chw.data() + (c + 1) * plane, m.data.begin());
    return m;
}

void set_channel(Tensor& chw, int c, const ProbMap& m) {
    std::copy(m.data.begin(), m.data.end(), chw.data() + c * m.size());
}

}  // namespace sauge::imgproc
