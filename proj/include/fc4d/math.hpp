#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace fc4d {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T> using Mat23 = Eigen::Matrix<T, 2, 3>;

/// Quaternion stored as (w, x, y, z).
template <typename T> using Quat = Vec4<T>;

template <typename T> T sigmoid(T x) {
    using std::exp;
    return T(1) / (T(1) + exp(-x));
}

template <typename T> T logit(T p) {
    using std::log;
    return log(p / (T(1) - p));
}

template <typename T> struct Aabb {
    Vec3<T> lo = Vec3<T>::Constant(T(-1));
    Vec3<T> hi = Vec3<T>::Constant(T(1));

    Vec3<T> extent() const { return hi - lo; }
    bool contains(const Vec3<T>& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    template <typename U> Aabb<U> cast() const { return {lo.template cast<U>(), hi.template cast<U>()}; }
    bool operator==(const Aabb&) const = default;
};

/// FNV-1a over the bytes of `value`, chained through `seed`.
template <typename V> std::uint64_t fnv1a(const V& value, std::uint64_t seed = 1469598103934665603ull) {
    unsigned char bytes[sizeof(V)];
    std::memcpy(bytes, &value, sizeof(V));
    for (unsigned char b : bytes) {
        seed ^= b;
        seed *= 1099511628211ull;
    }
    return seed;
}

}  // namespace fc4d
