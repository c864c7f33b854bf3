#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fc4d/error.hpp"
#include "fc4d/math.hpp"

namespace fc4d {

/// Default lower bound on the temporal variance before slicing refuses to divide by it.
inline constexpr double kDegenerateVariance = 1e-12;

/// One spatio-temporal primitive. Opacity and scales are stored in unconstrained
/// form; the activated values come from `opacity()` and `scales()`.
template <typename T> struct Gaussian4D {
    Vec3<T> position = Vec3<T>::Zero();
    T temporal_center = T(0.5);
    Quat<T> rot_left = Quat<T>(T(1), T(0), T(0), T(0));
    Quat<T> rot_right = Quat<T>(T(1), T(0), T(0), T(0));
    Vec4<T> log_scales = Vec4<T>::Zero();
    T opacity_logit = T(0);
    /// Indexed (channel, fourier order, sh degree, sh order); see `ShConfig::index`.
    std::vector<T> sh_coeffs;

    T opacity() const { return sigmoid(opacity_logit); }
    Vec4<T> scales() const { return log_scales.array().exp().matrix(); }

    /// Same shape with every parameter zeroed; used as a gradient container.
    Gaussian4D zeros_like() const {
        Gaussian4D z;
        z.temporal_center = T(0);
        z.rot_left.setZero();
        z.rot_right.setZero();
        z.opacity_logit = T(0);
        z.sh_coeffs.assign(sh_coeffs.size(), T(0));
        return z;
    }

    template <typename U> Gaussian4D<U> cast() const {
        Gaussian4D<U> out;
        out.position = position.template cast<U>();
        out.temporal_center = U(temporal_center);
        out.rot_left = rot_left.template cast<U>();
        out.rot_right = rot_right.template cast<U>();
        out.log_scales = log_scales.template cast<U>();
        out.opacity_logit = U(opacity_logit);
        out.sh_coeffs.assign(sh_coeffs.begin(), sh_coeffs.end());
        return out;
    }

    /// Number of scalar parameters, in the order visited by `for_each_param`.
    std::size_t param_count() const { return 17 + sh_coeffs.size(); }

    bool operator==(const Gaussian4D&) const = default;
};

/// Parameter groups share a learning rate in the optimizer.
enum class ParamGroup { kPosition, kTemporalCenter, kRotation, kScale, kOpacity, kSh };

/// Visits the matching scalars of several same-shaped Gaussians (parameters,
/// gradients, optimizer moments) in a fixed order: f(group, g.x, others.x...).
template <typename F, typename G, typename... Gs> void for_each_param_zip(F&& f, G& g, Gs&... others) {
    for (int i = 0; i < 3; ++i) f(ParamGroup::kPosition, g.position[i], others.position[i]...);
    f(ParamGroup::kTemporalCenter, g.temporal_center, others.temporal_center...);
    for (int i = 0; i < 4; ++i) f(ParamGroup::kRotation, g.rot_left[i], others.rot_left[i]...);
    for (int i = 0; i < 4; ++i) f(ParamGroup::kRotation, g.rot_right[i], others.rot_right[i]...);
    for (int i = 0; i < 4; ++i) f(ParamGroup::kScale, g.log_scales[i], others.log_scales[i]...);
    f(ParamGroup::kOpacity, g.opacity_logit, others.opacity_logit...);
    for (std::size_t i = 0; i < g.sh_coeffs.size(); ++i) f(ParamGroup::kSh, g.sh_coeffs[i], others.sh_coeffs[i]...);
}

template <typename T, typename U, typename F> void for_each_param(Gaussian4D<T>& g, Gaussian4D<U>& other, F&& f) {
    for_each_param_zip(f, g, other);
}

template <typename T, typename F> void for_each_param(Gaussian4D<T>& g, F&& f) { for_each_param_zip(f, g); }

/// Symmetric 4x4 covariance stored as its 10 unique upper-triangle entries.
template <typename T> class Covariance4 {
public:
    Covariance4() { sym_.fill(T(0)); }

    static Covariance4 from_matrix(const Mat4<T>& m) {
        Covariance4 c;
        int k = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) c.sym_[k++] = T(0.5) * (m(i, j) + m(j, i));
        return c;
    }

    T operator()(int i, int j) const {
        if (i > j) std::swap(i, j);
        // Row i of the upper triangle starts after i rows of decreasing length.
        const int offset = i * 4 - (i * (i - 1)) / 2;
        return sym_[offset + (j - i)];
    }

    Mat4<T> matrix() const {
        Mat4<T> m;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) m(i, j) = (*this)(i, j);
        return m;
    }

    T time_variance() const { return (*this)(3, 3); }
    Vec3<T> space_time() const { return {(*this)(0, 3), (*this)(1, 3), (*this)(2, 3)}; }
    Mat3<T> space() const { return matrix().template topLeftCorner<3, 3>(); }

    const std::array<T, 10>& unique_entries() const { return sym_; }

private:
    std::array<T, 10> sym_;
};

template <typename T> Mat4<T> left_isoclinic(const Quat<T>& q) {
    const T a = q[0], b = q[1], c = q[2], d = q[3];
    Mat4<T> m;
    m << a, -b, -c, -d,
         b, a, -d, c,
         c, d, a, -b,
         d, -c, b, a;
    return m;
}

template <typename T> Mat4<T> right_isoclinic(const Quat<T>& q) {
    const T p = q[0], r = q[1], s = q[2], u = q[3];
    Mat4<T> m;
    m << p, -r, -s, -u,
         r, p, u, -s,
         s, -u, p, r,
         u, s, -r, p;
    return m;
}

template <typename T> Quat<T> normalized_quat(const Quat<T>& q, const char* which) {
    const T n = q.norm();
    if (!(n > T(0)) || !std::isfinite(static_cast<double>(n)))
        fail(ErrorKind::kInvalidParameter, std::string(which) + " quaternion has zero or non-finite norm");
    return q / n;
}

/// 4D rotation from a left/right unit-quaternion pair: x -> ql * x * qr.
template <typename T> Mat4<T> build_rotation4(const Quat<T>& rot_left, const Quat<T>& rot_right) {
    return left_isoclinic(normalized_quat(rot_left, "left")) * right_isoclinic(normalized_quat(rot_right, "right"));
}

/// Recovers a quaternion pair from a proper 4D rotation matrix. The pair is
/// unique up to a joint sign flip.
template <typename T> std::pair<Quat<T>, Quat<T>> decompose_rotation4(const Mat4<T>& r) {
    // Each basis product left(e_k) * right(e_l) is a signed permutation, and
    // these 16 matrices are mutually orthogonal with squared norm 4, so the
    // projection of R onto them gives the rank-one matrix ql * qr^T.
    Mat4<T> assoc;
    for (int k = 0; k < 4; ++k) {
        for (int l = 0; l < 4; ++l) {
            const Mat4<T> basis = left_isoclinic<T>(Quat<T>::Unit(k)) * right_isoclinic<T>(Quat<T>::Unit(l));
            assoc(k, l) = (r.array() * basis.array()).sum() / T(4);
        }
    }
    int best = 0;
    for (int l = 1; l < 4; ++l)
        if (assoc.col(l).norm() > assoc.col(best).norm()) best = l;
    Quat<T> ql = assoc.col(best).normalized();
    Quat<T> qr = assoc.transpose() * ql;
    qr.normalize();
    return {ql, qr};
}

/// Sigma = R S S^T R^T with S = diag(exp(log_scales)).
template <typename T> Covariance4<T> build_cov4(const Gaussian4D<T>& g) {
    const Mat4<T> m = build_rotation4(g.rot_left, g.rot_right) * g.scales().asDiagonal();
    return Covariance4<T>::from_matrix(m * m.transpose());
}

template <typename T> void require_time_variance(T sigma_tt, double eps = kDegenerateVariance) {
    if (!(sigma_tt > T(eps)))
        fail(ErrorKind::kDegenerateCovariance, "temporal variance " + std::to_string(static_cast<double>(sigma_tt)) +
                                                   " is below " + std::to_string(eps));
}

/// Conditional mean of the spatial block given time `t_query`.
template <typename T>
Vec3<T> slice_mean(const Covariance4<T>& cov, const Vec3<T>& position, T temporal_center, T t_query,
                   double eps = kDegenerateVariance) {
    const T stt = cov.time_variance();
    require_time_variance(stt, eps);
    return position + cov.space_time() * ((t_query - temporal_center) / stt);
}

template <typename T> T temporal_weight(T sigma_tt, T temporal_center, T t_query, double eps = kDegenerateVariance) {
    using std::exp;
    require_time_variance(sigma_tt, eps);
    const T dt = t_query - temporal_center;
    return exp(T(-0.5) * dt * dt / sigma_tt);
}

/// Schur complement of the temporal entry: the conditional spatial covariance.
template <typename T> Mat3<T> slice_cov(const Covariance4<T>& cov, double eps = kDegenerateVariance) {
    const T stt = cov.time_variance();
    require_time_variance(stt, eps);
    const Vec3<T> b = cov.space_time();
    return cov.space() - b * b.transpose() / stt;
}

template <typename T> struct SlicedGaussian {
    Vec3<T> mean3;
    Mat3<T> cov3;
    T temporal_weight;
};

/// Forward quantities of one slice, kept for the reverse pass.
template <typename T> struct SliceState {
    Quat<T> ql, qr;          // normalized
    T ql_norm, qr_norm;
    Mat4<T> left, right, rotation;
    Vec4<T> scales;
    Mat4<T> sigma;
    T dt;
    SlicedGaussian<T> sliced;
};

template <typename T> SliceState<T> slice_forward(const Gaussian4D<T>& g, T t_query, double eps = kDegenerateVariance) {
    SliceState<T> s;
    s.ql_norm = g.rot_left.norm();
    s.qr_norm = g.rot_right.norm();
    s.ql = normalized_quat(g.rot_left, "left");
    s.qr = normalized_quat(g.rot_right, "right");
    s.left = left_isoclinic(s.ql);
    s.right = right_isoclinic(s.qr);
    s.rotation = s.left * s.right;
    s.scales = g.scales();
    const Mat4<T> m = s.rotation * s.scales.asDiagonal();
    s.sigma = m * m.transpose();
    const Covariance4<T> cov = Covariance4<T>::from_matrix(s.sigma);
    s.dt = t_query - g.temporal_center;
    s.sliced.mean3 = slice_mean(cov, g.position, g.temporal_center, t_query, eps);
    s.sliced.cov3 = slice_cov(cov, eps);
    s.sliced.temporal_weight = temporal_weight(cov.time_variance(), g.temporal_center, t_query, eps);
    return s;
}

namespace detail {

/// Gradient of <G, Q(q)> with respect to q, where Q is left_isoclinic or right_isoclinic.
template <typename T, typename Builder> Quat<T> isoclinic_vjp(const Mat4<T>& grad, Builder build) {
    Quat<T> out;
    for (int k = 0; k < 4; ++k) out[k] = (grad.array() * build(Quat<T>::Unit(k)).array()).sum();
    return out;
}

template <typename T> Quat<T> normalize_vjp(const Quat<T>& unit, T norm, const Quat<T>& grad_unit) {
    return (grad_unit - unit * unit.dot(grad_unit)) / norm;
}

}  // namespace detail

/// Reverse pass of `slice_forward`. Accumulates into `grad`.
template <typename T>
void slice_backward(const SliceState<T>& s, const Vec3<T>& d_mean3, const Mat3<T>& d_cov3, T d_weight,
                    Gaussian4D<T>& grad) {
    const T stt = s.sigma(3, 3);
    const Vec3<T> b = s.sigma.template block<3, 1>(0, 3);
    const T w = s.sliced.temporal_weight;
    const T dt = s.dt;

    grad.position += d_mean3;

    const T d_dt = d_mean3.dot(b) / stt - d_weight * w * dt / stt;
    grad.temporal_center -= d_dt;

    const Mat3<T> dc_sym = d_cov3 + d_cov3.transpose();
    const Vec3<T> d_b = d_mean3 * (dt / stt) - dc_sym * b / stt;
    const T d_stt = -d_mean3.dot(b) * dt / (stt * stt) + b.dot(d_cov3 * b) / (stt * stt) +
                    d_weight * w * T(0.5) * dt * dt / (stt * stt);

    Mat4<T> d_sigma = Mat4<T>::Zero();
    d_sigma.template topLeftCorner<3, 3>() = d_cov3;
    d_sigma.template block<3, 1>(0, 3) = d_b;
    d_sigma(3, 3) = d_stt;

    // Sigma = M M^T with M = R diag(s).
    const Mat4<T> m = s.rotation * s.scales.asDiagonal();
    const Mat4<T> d_m = (d_sigma + d_sigma.transpose()) * m;
    const Mat4<T> d_r = d_m * s.scales.asDiagonal();
    for (int j = 0; j < 4; ++j) {
        const T d_scale = d_m.col(j).dot(s.rotation.col(j));
        grad.log_scales[j] += d_scale * s.scales[j];
    }

    const Mat4<T> d_left = d_r * s.right.transpose();
    const Mat4<T> d_right = s.left.transpose() * d_r;
    const Quat<T> d_ql = detail::isoclinic_vjp<T>(d_left, [](const Quat<T>& q) { return left_isoclinic(q); });
    const Quat<T> d_qr = detail::isoclinic_vjp<T>(d_right, [](const Quat<T>& q) { return right_isoclinic(q); });
    grad.rot_left += detail::normalize_vjp(s.ql, s.ql_norm, d_ql);
    grad.rot_right += detail::normalize_vjp(s.qr, s.qr_norm, d_qr);
}

/// Rescales both quaternions to unit norm.
template <typename T> void normalize_rotations(Gaussian4D<T>& g) {
    g.rot_left = normalized_quat(g.rot_left, "left");
    g.rot_right = normalized_quat(g.rot_right, "right");
}

}  // namespace fc4d
