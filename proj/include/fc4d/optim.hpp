#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fc4d/error.hpp"
#include "fc4d/image.hpp"
#include "fc4d/metrics.hpp"

namespace fc4d {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// First/second moment buffers shaped like the parameters they belong to.
template <typename T> struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// One Adam update of a scalar at 1-based `step`.
template <typename T>
void adam_update(T& param, T grad, T& m, T& v, T lr, std::uint64_t step, const AdamHyper& hp = {}) {
    using std::pow;
    using std::sqrt;
    m = T(hp.beta1) * m + T(1.0 - hp.beta1) * grad;
    v = T(hp.beta2) * v + T(1.0 - hp.beta2) * grad * grad;
    const T m_hat = m / (T(1) - pow(T(hp.beta1), T(step)));
    const T v_hat = v / (T(1) - pow(T(hp.beta2), T(step)));
    param -= lr * m_hat / (sqrt(v_hat) + T(hp.eps));
}

/// Bias-corrected Adam step over a whole buffer with one learning rate.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, T lr, const AdamHyper& hp = {}) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        fail(ErrorKind::kUsage, "Adam buffers are mis-sized");
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) adam_update(params[i], grads[i], state.m[i], state.v[i], lr, state.step, hp);
}

template <typename T> struct PhotometricLoss {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    Image<T> grad;
};

/// (1 - lambda) * L1 + lambda * DSSIM with DSSIM = (1 - SSIM) / 2 at data range 1.
template <typename T> PhotometricLoss<T> photometric_loss(const Image<T>& render, const Image<T>& gt, double lambda) {
    require_same_shape(render, gt);
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorKind::kUsage, "loss lambda must be in [0, 1]");
    PhotometricLoss<T> out;
    const std::size_t n = render.data.size();
    out.grad = Image<T>(render.width, render.height, render.channels);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(render.data[i]) - static_cast<double>(gt.data[i]);
        acc += std::abs(d);
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        out.grad.data[i] = T((1.0 - lambda) * sign / static_cast<double>(n));
    }
    out.l1 = acc / static_cast<double>(n);
    if (lambda > 0.0) {
        Image<T> d_ssim;
        const double s = ssim(render, gt, 1.0, &d_ssim);
        out.dssim = 0.5 * (1.0 - s);
        for (std::size_t i = 0; i < n; ++i) out.grad.data[i] += T(-0.5 * lambda * static_cast<double>(d_ssim.data[i]));
    } else {
        out.dssim = dssim(render, gt, 1.0);
    }
    out.total = (1.0 - lambda) * out.l1 + lambda * out.dssim;
    return out;
}

}  // namespace fc4d
