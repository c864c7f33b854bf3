#pragma once

#include <vector>

#include "fc4d/appearance.hpp"
#include "fc4d/core4d.hpp"

namespace fc4d {

/// The full Gaussian set with the appearance layout and the world box used to
/// normalize decay-network inputs.
template <typename T> struct Scene {
    std::vector<Gaussian4D<T>> gaussians;
    ShConfig sh;
    Aabb<T> aabb;

    std::size_t size() const { return gaussians.size(); }

    template <typename U> Scene<U> cast() const {
        Scene<U> out;
        out.sh = sh;
        out.aabb = aabb.template cast<U>();
        out.gaussians.reserve(gaussians.size());
        for (const auto& g : gaussians) out.gaussians.push_back(g.template cast<U>());
        return out;
    }

    void validate() const {
        sh.validate();
        for (std::size_t i = 0; i < gaussians.size(); ++i)
            if (gaussians[i].sh_coeffs.size() != sh.coeff_count())
                fail(ErrorKind::kInvalidParameter, "Gaussian " + std::to_string(i) + " has a mis-sized SH tensor");
    }

    bool operator==(const Scene&) const = default;
};

/// Order-independent fingerprint of a Gaussian's parameters.
template <typename T> std::uint64_t content_hash(const Gaussian4D<T>& g) {
    std::uint64_t h = 1469598103934665603ull;
    Gaussian4D<T> copy = g;
    for_each_param(copy, [&](ParamGroup, T& p) { h = fnv1a(static_cast<double>(p), h); });
    return h;
}

/// Fingerprint of the whole scene in storage order; detects mutation between passes.
template <typename T> std::uint64_t scene_fingerprint(const Scene<T>& scene) {
    std::uint64_t h = fnv1a(scene.gaussians.size());
    for (const auto& g : scene.gaussians) h = fnv1a(content_hash(g), h);
    return h;
}

}  // namespace fc4d
