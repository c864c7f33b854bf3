#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fc4d/camera.hpp"
#include "fc4d/core4d.hpp"
#include "fc4d/scene.hpp"

namespace fc4d {

inline constexpr double kDefaultTemporalEps = 0.05;

/// Sorted indices of the Gaussians that may contribute to the current view
/// and time. Everything else is the invisible complement.
struct VisibleSet {
    std::vector<std::uint32_t> indices;
    std::size_t scene_size = 0;

    bool contains(std::uint32_t i) const { return std::binary_search(indices.begin(), indices.end(), i); }
    std::size_t size() const { return indices.size(); }

    std::vector<std::uint32_t> complement() const {
        std::vector<std::uint32_t> out;
        out.reserve(scene_size - indices.size());
        std::size_t k = 0;
        for (std::uint32_t i = 0; i < scene_size; ++i) {
            if (k < indices.size() && indices[k] == i) {
                ++k;
                continue;
            }
            out.push_back(i);
        }
        return out;
    }

    static VisibleSet all(std::size_t n) {
        VisibleSet v;
        v.scene_size = n;
        v.indices.resize(n);
        for (std::size_t i = 0; i < n; ++i) v.indices[i] = static_cast<std::uint32_t>(i);
        return v;
    }

    bool operator==(const VisibleSet&) const = default;
};

/// Keeps Gaussians whose temporal weight at `t_query` is at least `eps_t`.
template <typename T>
std::vector<std::uint32_t> temporal_filter(T t_query, const Scene<T>& scene, double eps_t = kDefaultTemporalEps) {
    std::vector<std::uint32_t> kept;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian4D<T>& g = scene.gaussians[i];
        const Covariance4<T> cov = build_cov4(g);
        if (temporal_weight(cov.time_variance(), g.temporal_center, t_query) >= T(eps_t))
            kept.push_back(static_cast<std::uint32_t>(i));
    }
    return kept;
}

/// Center-only frustum test. `candidates[k]` names the Gaussian whose
/// time-conditioned center is `means[k]`; returns the surviving names.
template <typename T>
std::vector<std::uint32_t> view_filter(const Camera& camera, std::span<const Vec3<T>> means,
                                       std::span<const std::uint32_t> candidates, double near, double far,
                                       double margin = 0.0) {
    camera.validate();
    std::vector<std::uint32_t> kept;
    for (std::size_t k = 0; k < means.size(); ++k) {
        const Vec3<T> pc = camera.to_camera(means[k]);
        if (!(pc.z() > T(near) && pc.z() < T(far))) continue;
        const Vec2<T> px = camera.project(pc);
        if (px.x() >= T(-margin) && px.x() < T(camera.width + margin) && px.y() >= T(-margin) &&
            px.y() < T(camera.height + margin))
            kept.push_back(candidates[k]);
    }
    return kept;
}

template <typename T>
std::vector<std::uint32_t> view_filter(const Camera& camera, std::span<const Vec3<T>> means, double near, double far,
                                       double margin = 0.0) {
    std::vector<std::uint32_t> ids(means.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
    return view_filter<T>(camera, means, ids, near, far, margin);
}

/// Visible set at (camera, time): temporal filter first, then the frustum test
/// on the centers conditioned at `t_query`.
template <typename T>
VisibleSet visible_set(const Camera& camera, T t_query, const Scene<T>& scene, double eps_t = kDefaultTemporalEps,
                       double margin = 0.0) {
    const std::vector<std::uint32_t> temporal = temporal_filter(t_query, scene, eps_t);
    std::vector<Vec3<T>> means;
    means.reserve(temporal.size());
    for (std::uint32_t i : temporal) {
        const Gaussian4D<T>& g = scene.gaussians[i];
        means.push_back(slice_mean(build_cov4(g), g.position, g.temporal_center, t_query));
    }
    VisibleSet out;
    out.scene_size = scene.size();
    out.indices = view_filter<T>(camera, means, temporal, camera.near, camera.far, margin);
    return out;
}

}  // namespace fc4d
