#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fc4d/error.hpp"
#include "fc4d/math.hpp"

namespace fc4d {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShBasis = (kMaxShDegree + 1) * (kMaxShDegree + 1);

struct ShConfig {
    int max_degree = 1;
    int max_fourier = 1;
    double period = 1.0;

    int basis_per_order() const { return (max_degree + 1) * (max_degree + 1); }
    int coeffs_per_channel() const { return (max_fourier + 1) * basis_per_order(); }
    std::size_t coeff_count() const { return 3u * static_cast<std::size_t>(coeffs_per_channel()); }

    std::size_t index(int channel, int fourier, int degree, int order) const {
        return static_cast<std::size_t>((channel * (max_fourier + 1) + fourier) * basis_per_order() + degree * degree +
                                        degree + order);
    }

    void validate() const {
        if (max_degree < 0 || max_degree > kMaxShDegree)
            fail(ErrorKind::kInvalidParameter, "SH degree must be in [0, 3], got " + std::to_string(max_degree));
        if (max_fourier < 0) fail(ErrorKind::kInvalidParameter, "Fourier order must be non-negative");
        if (!(period > 0.0)) fail(ErrorKind::kInvalidParameter, "Fourier period must be positive");
    }

    bool operator==(const ShConfig&) const = default;
};

/// Polar angle from +z and azimuth from +x.
template <typename T> struct ViewDirection {
    T theta = T(0);
    T phi = T(0);

    static ViewDirection from_vector(const Vec3<T>& v) {
        using std::acos;
        using std::atan2;
        const T n = v.norm();
        if (!(n > T(0))) fail(ErrorKind::kInvalidParameter, "view direction has zero length");
        const Vec3<T> u = v / n;
        const T z = std::clamp(u.z(), T(-1), T(1));
        return {acos(z), atan2(u.y(), u.x())};
    }

    Vec3<T> unit() const {
        using std::cos;
        using std::sin;
        return {sin(theta) * cos(phi), sin(theta) * sin(phi), cos(theta)};
    }
};

namespace detail {

// Real orthonormal spherical harmonics as polynomials of a unit vector.
inline constexpr double kY00 = 0.28209479177387814;
inline constexpr double kY1 = 0.4886025119029199;
inline constexpr double kY2a = 1.0925484305920792;
inline constexpr double kY2b = 0.31539156525252005;
inline constexpr double kY2c = 0.5462742152960396;
inline constexpr double kY3a = 0.5900435899266435;
inline constexpr double kY3b = 2.890611442640554;
inline constexpr double kY3c = 0.4570457994644658;
inline constexpr double kY3d = 0.3731763325901154;
inline constexpr double kY3e = 1.445305721320277;

/// Evaluates all basis functions up to `degree` at unit vector `d`, in (l, m)
/// order l*l + l + m. When `grad` is non-null it receives d Y / d(x, y, z).
template <typename T>
void sh_eval_all(int degree, const Vec3<T>& d, std::span<T> out, std::span<Vec3<T>> grad = {}) {
    const T x = d.x(), y = d.y(), z = d.z();
    const bool g = !grad.empty();
    out[0] = T(kY00);
    if (g) grad[0].setZero();
    if (degree < 1) return;
    out[1] = T(kY1) * y;
    out[2] = T(kY1) * z;
    out[3] = T(kY1) * x;
    if (g) {
        grad[1] = Vec3<T>(0, T(kY1), 0);
        grad[2] = Vec3<T>(0, 0, T(kY1));
        grad[3] = Vec3<T>(T(kY1), 0, 0);
    }
    if (degree < 2) return;
    out[4] = T(kY2a) * x * y;
    out[5] = T(kY2a) * y * z;
    out[6] = T(kY2b) * (T(3) * z * z - T(1));
    out[7] = T(kY2a) * x * z;
    out[8] = T(kY2c) * (x * x - y * y);
    if (g) {
        grad[4] = Vec3<T>(T(kY2a) * y, T(kY2a) * x, 0);
        grad[5] = Vec3<T>(0, T(kY2a) * z, T(kY2a) * y);
        grad[6] = Vec3<T>(0, 0, T(kY2b) * T(6) * z);
        grad[7] = Vec3<T>(T(kY2a) * z, 0, T(kY2a) * x);
        grad[8] = Vec3<T>(T(kY2c) * T(2) * x, T(kY2c) * T(-2) * y, 0);
    }
    if (degree < 3) return;
    out[9] = T(kY3a) * y * (T(3) * x * x - y * y);
    out[10] = T(kY3b) * x * y * z;
    out[11] = T(kY3c) * y * (T(5) * z * z - T(1));
    out[12] = T(kY3d) * z * (T(5) * z * z - T(3));
    out[13] = T(kY3c) * x * (T(5) * z * z - T(1));
    out[14] = T(kY3e) * z * (x * x - y * y);
    out[15] = T(kY3a) * x * (x * x - T(3) * y * y);
    if (g) {
        grad[9] = Vec3<T>(T(kY3a) * T(6) * x * y, T(kY3a) * (T(3) * x * x - T(3) * y * y), 0);
        grad[10] = Vec3<T>(T(kY3b) * y * z, T(kY3b) * x * z, T(kY3b) * x * y);
        grad[11] = Vec3<T>(0, T(kY3c) * (T(5) * z * z - T(1)), T(kY3c) * T(10) * y * z);
        grad[12] = Vec3<T>(0, 0, T(kY3d) * (T(15) * z * z - T(3)));
        grad[13] = Vec3<T>(T(kY3c) * (T(5) * z * z - T(1)), 0, T(kY3c) * T(10) * x * z);
        grad[14] = Vec3<T>(T(kY3e) * T(2) * x * z, T(kY3e) * T(-2) * y * z, T(kY3e) * (x * x - y * y));
        grad[15] = Vec3<T>(T(kY3a) * (T(3) * x * x - T(3) * y * y), T(kY3a) * T(-6) * x * y, 0);
    }
}

template <typename T> void fourier_weights(const ShConfig& cfg, T t_query, std::span<T> out) {
    using std::cos;
    for (int n = 0; n <= cfg.max_fourier; ++n)
        out[n] = n == 0 ? T(1) : cos(T(2) * std::numbers::pi_v<T> * T(n) * t_query / T(cfg.period));
}

}  // namespace detail

/// Real spherical harmonic Y_lm with orthonormal normalization.
template <typename T> T sh_basis(int l, int m, const ViewDirection<T>& dir) {
    if (l < 0 || l > kMaxShDegree || m < -l || m > l)
        fail(ErrorKind::kInvalidParameter, "SH index (l=" + std::to_string(l) + ", m=" + std::to_string(m) + ") out of range");
    std::array<T, kMaxShBasis> values{};
    detail::sh_eval_all<T>(l, dir.unit(), values);
    return values[static_cast<std::size_t>(l * l + l + m)];
}

/// Raw (pre-activation) color and the quantities its reverse pass needs.
template <typename T> struct ColorState {
    Vec3<T> raw;
    Vec3<T> rgb;
    Vec3<T> unit_dir;
    std::array<T, kMaxShBasis> basis{};
    std::array<Vec3<T>, kMaxShBasis> basis_grad{};
    std::vector<T> fourier;
};

template <typename T>
ColorState<T> color_forward(std::span<const T> coeffs, T t_query, const Vec3<T>& unit_dir, const ShConfig& cfg,
                            bool with_dir_grad) {
    if (coeffs.size() != cfg.coeff_count())
        fail(ErrorKind::kInvalidParameter, "expected " + std::to_string(cfg.coeff_count()) + " SH coefficients, got " +
                                               std::to_string(coeffs.size()));
    ColorState<T> s;
    s.unit_dir = unit_dir;
    s.fourier.resize(static_cast<std::size_t>(cfg.max_fourier + 1));
    detail::fourier_weights<T>(cfg, t_query, s.fourier);
    detail::sh_eval_all<T>(cfg.max_degree, unit_dir, s.basis,
                           with_dir_grad ? std::span<Vec3<T>>(s.basis_grad) : std::span<Vec3<T>>());
    const int nb = cfg.basis_per_order();
    for (int c = 0; c < 3; ++c) {
        T acc = T(0);
        for (int n = 0; n <= cfg.max_fourier; ++n) {
            const std::size_t base = cfg.index(c, n, 0, 0);
            T inner = T(0);
            for (int k = 0; k < nb; ++k) inner += coeffs[base + static_cast<std::size_t>(k)] * s.basis[k];
            acc += s.fourier[static_cast<std::size_t>(n)] * inner;
        }
        s.raw[c] = acc;
        s.rgb[c] = std::clamp(acc + T(0.5), T(0), T(1));
    }
    return s;
}

/// Time-dependent color: clamp(sum_{n,l,m} k * cos(2 pi n t / T) * Y_lm + 0.5, 0, 1).
template <typename T>
Vec3<T> eval_color(std::span<const T> coeffs, T t_query, const ViewDirection<T>& dir, const ShConfig& cfg) {
    return color_forward<T>(coeffs, t_query, dir.unit(), cfg, false).rgb;
}

/// Reverse pass for `color_forward`: accumulates coefficient gradients and
/// returns the gradient with respect to the (unit) view direction.
template <typename T>
Vec3<T> color_backward(const ColorState<T>& s, std::span<const T> coeffs, const Vec3<T>& d_rgb, const ShConfig& cfg,
                       std::span<T> d_coeffs) {
    Vec3<T> d_dir = Vec3<T>::Zero();
    const int nb = cfg.basis_per_order();
    for (int c = 0; c < 3; ++c) {
        const T pre = s.raw[c] + T(0.5);
        // Clamp has zero subgradient on (and beyond) its bounds.
        if (!(pre > T(0) && pre < T(1))) continue;
        const T d_raw = d_rgb[c];
        if (d_raw == T(0)) continue;
        for (int n = 0; n <= cfg.max_fourier; ++n) {
            const T fw = s.fourier[static_cast<std::size_t>(n)];
            const std::size_t base = cfg.index(c, n, 0, 0);
            for (int k = 0; k < nb; ++k) {
                d_coeffs[base + static_cast<std::size_t>(k)] += d_raw * fw * s.basis[k];
                d_dir += d_raw * fw * coeffs[base + static_cast<std::size_t>(k)] * s.basis_grad[k];
            }
        }
    }
    return d_dir;
}

}  // namespace fc4d
