#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fc4d/error.hpp"
#include "fc4d/image.hpp"

namespace fc4d {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

template <typename T> void require_same_shape(const Image<T>& a, const Image<T>& b) {
    if (!a.same_shape(b))
        fail(ErrorKind::kUsage, "image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                                    std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + "x" + std::to_string(b.channels));
}

template <typename T> double mse(const Image<T>& a, const Image<T>& b) {
    require_same_shape(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

/// 10 log10(1 / MSE) for unit-range images, capped for identical inputs.
template <typename T> double psnr(const Image<T>& a, const Image<T>& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
inline const std::array<double, kSsimWindow>& ssim_taps() {
    static const std::array<double, kSsimWindow> taps = [] {
        std::array<double, kSsimWindow> t{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - kSsimWindow / 2;
            t[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
            sum += t[i];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

namespace detail {

/// Valid-mode separable correlation of a single plane.
inline std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h) {
    const auto& k = ssim_taps();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

/// Adjoint of `filter_valid`: scatters a valid-size map back to the full grid.
inline std::vector<double> filter_valid_adjoint(const std::vector<double>& map, int w, int h) {
    const auto& k = ssim_taps();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = map[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
        }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM over channels and valid window positions. When `grad_a` is
/// non-null it receives d SSIM / d a.
template <typename T> double ssim(const Image<T>& a, const Image<T>& b, double data_range, Image<T>* grad_a = nullptr) {
    require_same_shape(a, b);
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        fail(ErrorKind::kUsage, "image smaller than the " + std::to_string(kSsimWindow) + "x" +
                                    std::to_string(kSsimWindow) + " SSIM window");
    const int w = a.width, h = a.height, nc = a.channels;
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
    const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);
    const double norm = 1.0 / (static_cast<double>(ow) * oh * nc);
    if (grad_a) *grad_a = Image<T>(w, h, nc);

    double total = 0.0;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(a.data[i * nc + c]);
            y[i] = static_cast<double>(b.data[i * nc + c]);
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::filter_valid(x, w, h), my = detail::filter_valid(y, w, h);
        const auto exx = detail::filter_valid(xx, w, h), eyy = detail::filter_valid(yy, w, h);
        const auto exy = detail::filter_valid(xy, w, h);
        const std::size_t m = mx.size();
        std::vector<double> d_mx, d_exx, d_exy;
        if (grad_a) {
            d_mx.resize(m);
            d_exx.resize(m);
            d_exy.resize(m);
        }
        for (std::size_t i = 0; i < m; ++i) {
            const double a1 = 2.0 * mx[i] * my[i] + c1;
            const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + c2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
            const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + c2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad_a) {
                d_mx[i] = norm * (2.0 * my[i] * (a2 - a1) / (b1 * b2) - 2.0 * mx[i] * s * (1.0 / b1 - 1.0 / b2));
                d_exx[i] = norm * (-s / b2);
                d_exy[i] = norm * (2.0 * a1 / (b1 * b2));
            }
        }
        if (grad_a) {
            const auto g_mx = detail::filter_valid_adjoint(d_mx, w, h);
            const auto g_exx = detail::filter_valid_adjoint(d_exx, w, h);
            const auto g_exy = detail::filter_valid_adjoint(d_exy, w, h);
            for (std::size_t i = 0; i < n; ++i)
                grad_a->data[i * nc + c] = T(g_mx[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i]);
        }
    }
    return total * norm;
}

/// Structural dissimilarity; `halved` selects (1 - SSIM) / 2 over 1 - SSIM.
template <typename T> double dssim(const Image<T>& a, const Image<T>& b, double data_range, bool halved = true) {
    const double s = ssim(a, b, data_range);
    return halved ? 0.5 * (1.0 - s) : 1.0 - s;
}

}  // namespace fc4d
