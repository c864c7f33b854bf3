#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fc4d/appearance.hpp"
#include "fc4d/camera.hpp"
#include "fc4d/core4d.hpp"
#include "fc4d/decaynet.hpp"
#include "fc4d/image.hpp"
#include "fc4d/parallel.hpp"
#include "fc4d/scene.hpp"
#include "fc4d/visibility.hpp"

namespace fc4d {

struct RasterConfig {
    int tile_size = 16;
    double alpha_max = 0.99;
    /// Contributions with alpha below this are treated as exactly zero.
    double alpha_min = 1.0 / 255.0;
    double transmittance_min = 1e-4;
    double lowpass = 0.3;
    double eps_t = kDefaultTemporalEps;
    double margin = 0.0;
    int threads = 0;
    /// Test hook: every non-skipped contribution gets alpha = 1.
    bool force_opaque = false;
};

/// How visible Gaussians are decayed during one render pass.
template <typename T> struct DecayContext {
    DecayPolicy policy;
    const DecayNet<T>* net = nullptr;
    /// False during warm-up: every visible factor is exactly one.
    bool active = true;

    static DecayContext none() {
        DecayContext c;
        c.policy.variant = DecayVariant::kNone;
        return c;
    }
};

template <typename T> struct Splat2D {
    Vec2<T> mean2;
    Mat2<T> cov2;
    T depth;
    Vec3<T> color = Vec3<T>::Zero();
    T alpha_base = T(0);
};

/// Perspective projection of a 3D Gaussian with the first-order (EWA) Jacobian
/// and a low-pass term added to the screen-space covariance.
template <typename T>
Splat2D<T> project(const Camera& camera, const Vec3<T>& mean3, const Mat3<T>& cov3, double lowpass = 0.3) {
    const Vec3<T> p = camera.to_camera(mean3);
    if (!(p.z() > T(0))) fail(ErrorKind::kBehindCamera, "camera-space depth " + std::to_string(static_cast<double>(p.z())));
    const T z = p.z(), fx = T(camera.fx), fy = T(camera.fy);
    Mat23<T> j;
    j << fx / z, T(0), -fx * p.x() / (z * z), T(0), fy / z, -fy * p.y() / (z * z);
    const Mat23<T> jw = j * camera.rotation().cast<T>();
    Splat2D<T> s;
    s.mean2 = camera.project(p);
    s.cov2 = jw * cov3 * jw.transpose() + Mat2<T>::Identity() * T(lowpass);
    s.depth = z;
    return s;
}

/// Everything computed for one visible Gaussian before compositing.
template <typename T> struct PreparedSplat {
    std::uint32_t index = 0;
    SliceState<T> slice;
    ColorState<T> color;
    Vec3<T> view_vec;
    Vec3<T> p_cam;
    Mat23<T> jw;
    Splat2D<T> splat;
    Mat2<T> conic;
    T opacity = T(0);
    T tau = T(1);
    T dtau_dopacity = T(0);
    DecayActivations<T> act;
    bool neural = false;
    std::uint64_t tie_hash = 0;
    // Inclusive pixel bounds that can receive alpha >= alpha_min.
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

template <typename T> struct RenderOutput {
    Image<T> color;
    Image<T> alpha;
    Image<T> depth;
    /// Indexed by scene position: how many pixels each Gaussian was composited into.
    std::vector<std::uint32_t> contributions;
};

template <typename T> struct ForwardState {
    bool valid = false;
    RenderOutput<T> output;
    VisibleSet visible;
    std::vector<PreparedSplat<T>> splats;
    std::vector<std::uint32_t> order;  // splat positions sorted front to back
    std::vector<std::vector<std::uint32_t>> tiles;
    std::vector<T> final_transmittance;
    std::vector<std::uint32_t> contributors;  // per pixel: tile-list prefix length used
    Camera camera;
    T t_query = T(0);
    Vec3<T> background = Vec3<T>::Zero();
    RasterConfig cfg;
    std::uint64_t fingerprint = 0;
    int tiles_x = 0, tiles_y = 0;
};

/// Per-Gaussian gradients (same shape as the scene) plus decay-network gradients.
template <typename T> struct SceneGradients {
    std::vector<Gaussian4D<T>> gaussians;
    std::vector<T> net;

    static SceneGradients zeros(const Scene<T>& scene) {
        SceneGradients g;
        g.gaussians.reserve(scene.size());
        for (const auto& x : scene.gaussians) g.gaussians.push_back(x.zeros_like());
        g.net.assign(DecayNet<T>::kParamCount, T(0));
        return g;
    }
};

namespace detail {

template <typename T> bool all_finite(const Gaussian4D<T>& g) {
    bool ok = true;
    Gaussian4D<T> copy = g;
    for_each_param(copy, [&](ParamGroup, T& p) { ok = ok && std::isfinite(static_cast<double>(p)); });
    return ok;
}

template <typename T> bool splat_before(const PreparedSplat<T>& a, const PreparedSplat<T>& b) {
    if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
    if (a.tie_hash != b.tie_hash) return a.tie_hash < b.tie_hash;
    return a.index < b.index;
}

template <typename T>
PreparedSplat<T> prepare_splat(const Scene<T>& scene, std::uint32_t index, const Camera& camera, T t_query,
                               const DecayContext<T>& decay, const RasterConfig& cfg) {
    const Gaussian4D<T>& g = scene.gaussians[index];
    if (!all_finite(g)) fail(ErrorKind::kRenderAbort, "Gaussian " + std::to_string(index) + " has a non-finite attribute");
    PreparedSplat<T> s;
    s.index = index;
    s.slice = slice_forward(g, t_query);
    const SlicedGaussian<T>& sl = s.slice.sliced;
    if (!sl.mean3.allFinite() || !sl.cov3.allFinite())
        fail(ErrorKind::kRenderAbort, "Gaussian " + std::to_string(index) + " slices to a non-finite primitive");

    s.view_vec = sl.mean3 - camera.center().cast<T>();
    const T view_len = s.view_vec.norm();
    if (!(view_len > T(0)))
        fail(ErrorKind::kRenderAbort, "Gaussian " + std::to_string(index) + " coincides with the camera center");
    s.color = color_forward<T>(g.sh_coeffs, t_query, s.view_vec / view_len, scene.sh, true);

    s.opacity = g.opacity();
    if (decay.active && decay.policy.variant == DecayVariant::kNeural) {
        if (decay.net == nullptr) fail(ErrorKind::kUsage, "neural decay requires a network");
        s.tau = decay.net->forward(make_decay_input(g, scene.aabb), s.act);
        s.neural = true;
    } else if (decay.active && decay.policy.variant != DecayVariant::kNone) {
        std::tie(s.tau, s.dtau_dopacity) = variant_tau_with_grad(decay.policy, s.opacity);
    }

    s.p_cam = camera.to_camera(sl.mean3);
    const T z = s.p_cam.z(), fx = T(camera.fx), fy = T(camera.fy);
    Mat23<T> j;
    j << fx / z, T(0), -fx * s.p_cam.x() / (z * z), T(0), fy / z, -fy * s.p_cam.y() / (z * z);
    s.jw = j * camera.rotation().cast<T>();
    s.splat = project(camera, sl.mean3, sl.cov3, cfg.lowpass);
    s.splat.color = s.color.rgb;
    s.splat.alpha_base = apply_decay(s.tau, sl.temporal_weight, s.opacity);
    s.conic = s.splat.cov2.inverse();
    s.tie_hash = content_hash(g);
    if (!s.conic.allFinite() || !std::isfinite(static_cast<double>(s.splat.alpha_base)))
        fail(ErrorKind::kRenderAbort, "Gaussian " + std::to_string(index) + " projects to a non-finite splat");

    // Pixel centers sit at (x + 0.5, y + 0.5). Alpha >= alpha_min requires
    // d^T conic d <= 2 ln(alpha_base / alpha_min), which bounds |d| by the
    // largest eigenvalue of cov2.
    const T ab = s.splat.alpha_base;
    if (ab >= T(cfg.alpha_min)) {
        using std::log;
        using std::sqrt;
        const Mat2<T>& c = s.splat.cov2;
        const T mid = T(0.5) * (c(0, 0) + c(1, 1));
        const T det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        const T lambda_max = mid + sqrt(std::max(mid * mid - det, T(0)));
        const T radius = sqrt(T(2) * log(ab / T(cfg.alpha_min)) * lambda_max);
        const double mx = static_cast<double>(s.splat.mean2.x()), my = static_cast<double>(s.splat.mean2.y());
        const double r = static_cast<double>(radius) + 1.0;
        s.x0 = std::max(0, static_cast<int>(std::floor(mx - r - 0.5)));
        s.x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(mx + r - 0.5)));
        s.y0 = std::max(0, static_cast<int>(std::floor(my - r - 0.5)));
        s.y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(my + r - 0.5)));
    }
    return s;
}

/// Gaussian falloff exponent at pixel center (px, py).
template <typename T> T splat_power(const PreparedSplat<T>& s, int px, int py, T& dx, T& dy) {
    dx = T(px) + T(0.5) - s.splat.mean2.x();
    dy = T(py) + T(0.5) - s.splat.mean2.y();
    return T(-0.5) * (s.conic(0, 0) * dx * dx + T(2) * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
}

}  // namespace detail

/// Tiled front-to-back rasterization of every visible Gaussian at `t_query`.
/// The returned state caches what `render_backward` needs.
template <typename T>
ForwardState<T> render_forward(const Scene<T>& scene, const DecayContext<T>& decay, const Camera& camera, T t_query,
                               const Vec3<T>& background, const RasterConfig& cfg, const VisibleSet& visible) {
    camera.validate();
    if (visible.scene_size != scene.size()) fail(ErrorKind::kUsage, "visible set was computed for a different scene");
    ForwardState<T> st;
    st.camera = camera;
    st.t_query = t_query;
    st.background = background;
    st.cfg = cfg;
    st.visible = visible;
    st.fingerprint = scene_fingerprint(scene);

    st.splats.reserve(visible.size());
    for (std::uint32_t i : visible.indices)
        st.splats.push_back(detail::prepare_splat(scene, i, camera, t_query, decay, cfg));
    st.order.resize(st.splats.size());
    std::iota(st.order.begin(), st.order.end(), 0u);
    std::sort(st.order.begin(), st.order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return detail::splat_before(st.splats[a], st.splats[b]); });

    const int ts = cfg.tile_size;
    st.tiles_x = (camera.width + ts - 1) / ts;
    st.tiles_y = (camera.height + ts - 1) / ts;
    st.tiles.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});
    for (std::uint32_t pos : st.order) {
        const PreparedSplat<T>& s = st.splats[pos];
        if (s.x1 < s.x0 || s.y1 < s.y0) continue;
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx)
                st.tiles[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(pos);
    }

    const int w = camera.width, h = camera.height;
    RenderOutput<T>& out = st.output;
    out.color = Image<T>(w, h, 3);
    out.alpha = Image<T>(w, h, 1);
    out.depth = Image<T>(w, h, 1);
    out.contributions.assign(scene.size(), 0u);
    st.final_transmittance.assign(static_cast<std::size_t>(w) * h, T(1));
    st.contributors.assign(static_cast<std::size_t>(w) * h, 0u);
    std::vector<std::vector<std::uint32_t>> tile_counts(st.tiles.size());

    const T a_min = T(cfg.alpha_min), a_max = T(cfg.alpha_max), t_min = T(cfg.transmittance_min);
    parallel_for(st.tiles.size(), cfg.threads, [&](std::size_t tile) {
        const std::vector<std::uint32_t>& list = st.tiles[tile];
        std::vector<std::uint32_t>& counts = tile_counts[tile];
        counts.assign(list.size(), 0u);
        const int tx = static_cast<int>(tile) % st.tiles_x, ty = static_cast<int>(tile) / st.tiles_x;
        for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
                T trans = T(1);
                Vec3<T> c = Vec3<T>::Zero();
                T depth = T(0);
                std::uint32_t used = 0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const PreparedSplat<T>& s = st.splats[list[k]];
                    if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) continue;
                    T dx, dy;
                    const T power = detail::splat_power(s, px, py, dx, dy);
                    const T raw = s.splat.alpha_base * std::exp(power);
                    if (raw < a_min) continue;
                    const T alpha = cfg.force_opaque ? T(1) : std::min(a_max, raw);
                    c += s.color.rgb * (alpha * trans);
                    depth += s.splat.depth * (alpha * trans);
                    trans *= (T(1) - alpha);
                    ++counts[k];
                    used = static_cast<std::uint32_t>(k + 1);
                    if (trans < t_min) break;
                }
                const std::size_t pix = static_cast<std::size_t>(py) * w + px;
                st.final_transmittance[pix] = trans;
                st.contributors[pix] = used;
                for (int ch = 0; ch < 3; ++ch) out.color.at(px, py, ch) = c[ch] + trans * background[ch];
                out.alpha.at(px, py) = T(1) - trans;
                out.depth.at(px, py) = trans < T(1) ? depth / (T(1) - trans) : T(0);
            }
        }
    });
    for (std::size_t tile = 0; tile < st.tiles.size(); ++tile)
        for (std::size_t k = 0; k < st.tiles[tile].size(); ++k)
            out.contributions[st.splats[st.tiles[tile][k]].index] += tile_counts[tile][k];
    st.valid = true;
    return st;
}

template <typename T>
ForwardState<T> render_forward(const Scene<T>& scene, const DecayContext<T>& decay, const Camera& camera, T t_query,
                               const Vec3<T>& background, const RasterConfig& cfg = {}) {
    return render_forward(scene, decay, camera, t_query, background, cfg,
                          visible_set(camera, t_query, scene, cfg.eps_t, cfg.margin));
}

/// Reverse pass of `render_forward` for an image-space gradient on the color
/// output. Gaussians outside the visible set receive exactly zero.
template <typename T>
SceneGradients<T> render_backward(const ForwardState<T>& st, const Scene<T>& scene, const DecayContext<T>& decay,
                                  const Image<T>& d_image) {
    if (!st.valid) fail(ErrorKind::kUsage, "render_backward needs a cached forward pass");
    if (st.fingerprint != scene_fingerprint(scene))
        fail(ErrorKind::kUsage, "stale forward cache: the scene changed after render_forward");
    if (d_image.width != st.camera.width || d_image.height != st.camera.height || d_image.channels != 3)
        fail(ErrorKind::kUsage, "image gradient has the wrong shape");
    if (st.cfg.force_opaque) fail(ErrorKind::kUsage, "forced-opaque renders are not differentiable");

    struct SplatGrad {
        Vec2<T> mean2 = Vec2<T>::Zero();
        T conic_xx = T(0), conic_xy = T(0), conic_yy = T(0);
        Vec3<T> color = Vec3<T>::Zero();
        T alpha_base = T(0);
    };

    const int w = st.camera.width, h = st.camera.height, ts = st.cfg.tile_size;
    const T a_min = T(st.cfg.alpha_min), a_max = T(st.cfg.alpha_max);
    std::vector<std::vector<SplatGrad>> tile_grads(st.tiles.size());
    parallel_for(st.tiles.size(), st.cfg.threads, [&](std::size_t tile) {
        const std::vector<std::uint32_t>& list = st.tiles[tile];
        std::vector<SplatGrad>& grads = tile_grads[tile];
        grads.assign(list.size(), SplatGrad{});
        const int tx = static_cast<int>(tile) % st.tiles_x, ty = static_cast<int>(tile) / st.tiles_x;
        for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
                const std::size_t pix = static_cast<std::size_t>(py) * w + px;
                const Vec3<T> g(d_image.at(px, py, 0), d_image.at(px, py, 1), d_image.at(px, py, 2));
                if (g.isZero()) continue;
                T trans = st.final_transmittance[pix];
                Vec3<T> suffix = st.background * trans;
                for (std::size_t k = st.contributors[pix]; k-- > 0;) {
                    const PreparedSplat<T>& s = st.splats[list[k]];
                    if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) continue;
                    T dx, dy;
                    const T power = detail::splat_power(s, px, py, dx, dy);
                    const T gauss = std::exp(power);
                    const T raw = s.splat.alpha_base * gauss;
                    if (raw < a_min) continue;
                    const bool clamped = raw > a_max;
                    const T alpha = clamped ? a_max : raw;
                    trans /= (T(1) - alpha);
                    SplatGrad& sg = grads[k];
                    sg.color += g * (alpha * trans);
                    const T d_alpha = g.dot(s.color.rgb * trans - suffix / (T(1) - alpha));
                    suffix += s.color.rgb * (alpha * trans);
                    if (clamped) continue;
                    sg.alpha_base += d_alpha * gauss;
                    const T d_power = d_alpha * raw;
                    sg.mean2.x() += d_power * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
                    sg.mean2.y() += d_power * (s.conic(0, 1) * dx + s.conic(1, 1) * dy);
                    sg.conic_xx += d_power * T(-0.5) * dx * dx;
                    sg.conic_xy += d_power * (-dx * dy);
                    sg.conic_yy += d_power * T(-0.5) * dy * dy;
                }
            }
        }
    });

    std::vector<SplatGrad> splat_grads(st.splats.size());
    for (std::size_t tile = 0; tile < st.tiles.size(); ++tile) {
        for (std::size_t k = 0; k < st.tiles[tile].size(); ++k) {
            SplatGrad& dst = splat_grads[st.tiles[tile][k]];
            const SplatGrad& src = tile_grads[tile][k];
            dst.mean2 += src.mean2;
            dst.conic_xx += src.conic_xx;
            dst.conic_xy += src.conic_xy;
            dst.conic_yy += src.conic_yy;
            dst.color += src.color;
            dst.alpha_base += src.alpha_base;
        }
    }

    SceneGradients<T> out = SceneGradients<T>::zeros(scene);
    const Mat3<T> cam_rot = st.camera.rotation().template cast<T>();
    const T fx = T(st.camera.fx), fy = T(st.camera.fy);
    for (std::size_t pos = 0; pos < st.splats.size(); ++pos) {
        const PreparedSplat<T>& s = st.splats[pos];
        const SplatGrad& sg = splat_grads[pos];
        const Gaussian4D<T>& gsn = scene.gaussians[s.index];
        Gaussian4D<T>& grad = out.gaussians[s.index];

        // conic = cov2^-1
        Mat2<T> d_conic;
        d_conic << sg.conic_xx, T(0.5) * sg.conic_xy, T(0.5) * sg.conic_xy, sg.conic_yy;
        const Mat2<T> d_cov2 = -s.conic * d_conic * s.conic;

        // cov2 = JW cov3 (JW)^T + lowpass I
        const Mat3<T>& cov3 = s.slice.sliced.cov3;
        const Mat3<T> d_cov3 = s.jw.transpose() * d_cov2 * s.jw;
        const Mat23<T> d_jw = (d_cov2 + d_cov2.transpose()) * s.jw * cov3;
        const Mat23<T> d_j = d_jw * cam_rot.transpose();

        const T x = s.p_cam.x(), y = s.p_cam.y(), z = s.p_cam.z();
        Vec3<T> d_p;
        d_p.x() = d_j(0, 2) * (-fx / (z * z)) + sg.mean2.x() * fx / z;
        d_p.y() = d_j(1, 2) * (-fy / (z * z)) + sg.mean2.y() * fy / z;
        d_p.z() = d_j(0, 0) * (-fx / (z * z)) + d_j(0, 2) * (T(2) * fx * x / (z * z * z)) +
                  d_j(1, 1) * (-fy / (z * z)) + d_j(1, 2) * (T(2) * fy * y / (z * z * z)) -
                  sg.mean2.x() * fx * x / (z * z) - sg.mean2.y() * fy * y / (z * z);
        Vec3<T> d_mean3 = cam_rot.transpose() * d_p;

        // Color through the view direction.
        const Vec3<T> d_unit = color_backward<T>(s.color, gsn.sh_coeffs, sg.color, scene.sh, grad.sh_coeffs);
        const T len = s.view_vec.norm();
        const Vec3<T> u = s.view_vec / len;
        d_mean3 += (d_unit - u * u.dot(d_unit)) / len;

        // alpha_base = tau * weight * opacity
        const T weight = s.slice.sliced.temporal_weight;
        const T d_tau = sg.alpha_base * weight * s.opacity;
        const T d_weight = sg.alpha_base * s.tau * s.opacity;
        T d_opacity = sg.alpha_base * s.tau * weight;
        if (s.neural) {
            const DecayInput<T> d_in = decay.net->backward(s.act, d_tau, out.net);
            decay_input_backward(gsn, scene.aabb, d_in, grad);
        } else {
            d_opacity += d_tau * s.dtau_dopacity;
        }
        grad.opacity_logit += d_opacity * s.opacity * (T(1) - s.opacity);

        slice_backward(s.slice, d_mean3, d_cov3, d_weight, grad);
    }
    return out;
}

/// Reference renderer: per pixel, every visible Gaussian in depth order with
/// the same alpha function, no tiling and no early termination, evaluated in
/// extended precision.
template <typename T>
RenderOutput<T> oracle_render(const Scene<T>& scene, const DecayContext<T>& decay, const Camera& camera, T t_query,
                              const Vec3<T>& background, const RasterConfig& cfg = {}) {
    using X = long double;
    camera.validate();
    const Scene<X> xs = scene.template cast<X>();
    DecayNet<X> xnet;
    DecayContext<X> xdecay;
    xdecay.policy = decay.policy;
    xdecay.active = decay.active;
    if (decay.net != nullptr) {
        xnet = decay.net->template cast<X>();
        xdecay.net = &xnet;
    }
    const VisibleSet vis = visible_set<X>(camera, X(t_query), xs, cfg.eps_t, cfg.margin);
    std::vector<PreparedSplat<X>> splats;
    for (std::uint32_t i : vis.indices) splats.push_back(detail::prepare_splat<X>(xs, i, camera, X(t_query), xdecay, cfg));
    std::sort(splats.begin(), splats.end(), detail::splat_before<X>);

    const int w = camera.width, h = camera.height;
    RenderOutput<T> out;
    out.color = Image<T>(w, h, 3);
    out.alpha = Image<T>(w, h, 1);
    out.depth = Image<T>(w, h, 1);
    out.contributions.assign(scene.size(), 0u);
    const X a_min = X(cfg.alpha_min), a_max = X(cfg.alpha_max);
    for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
            X trans = 1;
            X depth = 0;
            Vec3<X> c = Vec3<X>::Zero();
            for (const PreparedSplat<X>& s : splats) {
                X dx, dy;
                const X raw = s.splat.alpha_base * std::exp(detail::splat_power(s, px, py, dx, dy));
                if (raw < a_min) continue;
                const X alpha = cfg.force_opaque ? X(1) : std::min(a_max, raw);
                c += s.color.rgb * (alpha * trans);
                depth += s.splat.depth * (alpha * trans);
                trans *= (X(1) - alpha);
                ++out.contributions[s.index];
            }
            for (int ch = 0; ch < 3; ++ch) out.color.at(px, py, ch) = T(c[ch] + trans * X(background[ch]));
            out.alpha.at(px, py) = T(X(1) - trans);
            out.depth.at(px, py) = trans < X(1) ? T(depth / (X(1) - trans)) : T(0);
        }
    }
    return out;
}

}  // namespace fc4d
