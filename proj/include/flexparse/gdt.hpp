#ifndef FLEXPARSE_GDT_HPP
#define FLEXPARSE_GDT_HPP

#include "error.hpp"
#include "grid.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace flexparse {

/// Concave quadratic deformation score
///   bx*dx + ax*dx^2 + by*dy + ay*dy^2,  with (dx, dy) = l_k - l_i - (rx, ry).
struct QuadPenalty {
    double ax = -1.0;
    double bx = 0.0;
    double ay = -1.0;
    double by = 0.0;
    double rx = 0.0;
    double ry = 0.0;

    bool valid() const noexcept {
        return ax < 0.0 && ay < 0.0 && std::isfinite(ax) && std::isfinite(ay) && std::isfinite(bx) &&
               std::isfinite(by) && std::isfinite(rx) && std::isfinite(ry);
    }
};

struct Transform1D {
    std::vector<double> values;
    std::vector<int> argmax;
};

struct Transform2D {
    Grid<double> values;
    Grid<Location> argmax;
};

/// Reusable scratch space for the lower-envelope transform. Not thread-safe;
/// use one per thread.
class DistanceTransform {
public:
    /// out[p] = max_q f[q] + a*(q - x)^2 + b*(q - x) with x = p + shift, for
    /// p in [0, out_len). `f` is read with the given stride. Ties go to the
    /// smallest q.
    void run(const double* f, std::size_t n, std::ptrdiff_t f_stride, double a, double b, double shift,
             double* out, std::ptrdiff_t out_stride, int* arg, std::ptrdiff_t arg_stride, std::size_t out_len) {
        // Minimize g_q(x) = -f[q] + c*(x - q)^2 + b*(x - q), c = -a > 0.
        const double c = -a;
        v_.resize(n);
        z_.resize(n + 1);
        h_.resize(n);
        for (std::size_t q = 0; q < n; ++q) {
            const double dq = static_cast<double>(q);
            h_[q] = -f[static_cast<std::ptrdiff_t>(q) * f_stride] + c * dq * dq - b * dq;
        }
        constexpr double inf = std::numeric_limits<double>::infinity();
        std::size_t k = 0;
        v_[0] = 0;
        z_[0] = -inf;
        z_[1] = inf;
        for (std::size_t q = 1; q < n; ++q) {
            double s = intersect(q, v_[k], c);
            while (s <= z_[k]) {
                --k;
                s = intersect(q, v_[k], c);
            }
            ++k;
            v_[k] = q;
            z_[k] = s;
            z_[k + 1] = inf;
        }
        k = 0;
        for (std::size_t p = 0; p < out_len; ++p) {
            const double x = static_cast<double>(p) + shift;
            while (z_[k + 1] < x) ++k;
            const std::size_t q = v_[k];
            const double d = static_cast<double>(q) - x;
            out[static_cast<std::ptrdiff_t>(p) * out_stride] = f[static_cast<std::ptrdiff_t>(q) * f_stride] + a * d * d + b * d;
            if (arg) arg[static_cast<std::ptrdiff_t>(p) * arg_stride] = static_cast<int>(q);
        }
    }

    /// Separable 2D transform: out[l_i] = max_{l_k} grid[l_k] + penalty(l_k - l_i).
    /// argmax receives the flat row-major index of the maximizing l_k when non-null.
    void run2d(const double* grid, int width, int height, const QuadPenalty& pen, double* out, int* argmax) {
        const auto W = static_cast<std::size_t>(width), H = static_cast<std::size_t>(height);
        rows_.resize(W * H);
        row_arg_.resize(W * H);
        for (std::size_t y = 0; y < H; ++y)
            run(grid + y * W, W, 1, pen.ax, pen.bx, pen.rx, rows_.data() + y * W, 1, row_arg_.data() + y * W, 1, W);
        col_arg_.resize(W * H);
        for (std::size_t x = 0; x < W; ++x)
            run(rows_.data() + x, H, static_cast<std::ptrdiff_t>(W), pen.ay, pen.by, pen.ry, out + x,
                static_cast<std::ptrdiff_t>(W), col_arg_.data() + x, static_cast<std::ptrdiff_t>(W), H);
        if (argmax) {
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const auto ky = static_cast<std::size_t>(col_arg_[y * W + x]);
                    const auto kx = static_cast<std::size_t>(row_arg_[ky * W + x]);
                    argmax[y * W + x] = static_cast<int>(ky * W + kx);
                }
        }
    }

private:
    double intersect(std::size_t q, std::size_t r, double c) const {
        return (h_[q] - h_[r]) / (2.0 * c * (static_cast<double>(q) - static_cast<double>(r)));
    }

    std::vector<std::size_t> v_;
    std::vector<double> z_;
    std::vector<double> h_;
    std::vector<double> rows_;
    std::vector<int> row_arg_;
    std::vector<int> col_arg_;
};

/// out[p] = max_q values[q] + a*(p - q)^2 + b*(p - q), ties to the smallest q.
inline Transform1D dt1d_max(std::span<const double> values, double a, double b) {
    if (!(a < 0.0)) throw Error("invalid_argument", "dt1d_max needs a < 0, got " + std::to_string(a));
    if (values.empty()) throw Error("invalid_argument", "dt1d_max needs a non-empty array");
    Transform1D t{std::vector<double>(values.size()), std::vector<int>(values.size())};
    DistanceTransform dt;
    // (p - q) = -(q - p), so the linear coefficient flips sign.
    dt.run(values.data(), values.size(), 1, a, -b, 0.0, t.values.data(), 1, t.argmax.data(), 1, values.size());
    return t;
}

/// out[l_i] = max_{l_k} grid[l_k] + <w, psi(l_k - l_i - r)>, w = (bx, ax, by, ay).
inline Transform2D dt2d_max(const Grid<double>& grid, const QuadPenalty& penalty) {
    if (!penalty.valid()) throw Error("invalid_argument", "dt2d_max needs a strictly concave penalty");
    if (grid.empty()) throw Error("invalid_argument", "dt2d_max needs a non-empty grid");
    Transform2D t{Grid<double>(grid.width(), grid.height()), Grid<Location>(grid.width(), grid.height())};
    std::vector<int> flat(grid.size());
    DistanceTransform dt;
    dt.run2d(grid.data(), grid.width(), grid.height(), penalty, t.values.data(), flat.data());
    for (std::size_t i = 0; i < flat.size(); ++i) t.argmax[i] = grid.location(static_cast<std::size_t>(flat[i]));
    return t;
}

} // namespace flexparse

#endif // FLEXPARSE_GDT_HPP
