#pragma once

#include <cmath>
#include <numbers>

#include "fc4d/error.hpp"
#include "fc4d/math.hpp"

namespace fc4d {

/// Pinhole camera. `world_to_camera` is a rigid [R | t] with camera axes
/// x right, y down, z forward.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Eigen::Matrix<double, 3, 4> world_to_camera = Eigen::Matrix<double, 3, 4>::Identity();
    double near = 0.01, far = 100.0;

    Mat3<double> rotation() const { return world_to_camera.leftCols<3>(); }
    Vec3<double> translation() const { return world_to_camera.col(3); }
    Vec3<double> center() const { return -rotation().transpose() * translation(); }

    template <typename T> Vec3<T> to_camera(const Vec3<T>& p) const {
        return world_to_camera.leftCols<3>().cast<T>() * p + world_to_camera.col(3).cast<T>();
    }

    template <typename T> Vec2<T> project(const Vec3<T>& p_cam) const {
        return {T(fx) * p_cam.x() / p_cam.z() + T(cx), T(fy) * p_cam.y() / p_cam.z() + T(cy)};
    }

    void validate() const {
        if (!(fx > 0.0 && fy > 0.0)) fail(ErrorKind::kInvalidCamera, "focal lengths must be positive");
        if (width <= 0 || height <= 0) fail(ErrorKind::kInvalidCamera, "image size must be positive");
        if (!(near > 0.0 && near < far)) fail(ErrorKind::kInvalidCamera, "need 0 < near < far");
        if (!world_to_camera.allFinite()) fail(ErrorKind::kInvalidCamera, "extrinsics are not finite");
        const Mat3<double> r = rotation();
        if (!((r * r.transpose() - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-9) || !(r.determinant() > 0.0))
            fail(ErrorKind::kInvalidCamera, "rotation block is not a proper orthonormal matrix");
    }

    bool operator==(const Camera&) const = default;
};

/// Camera at `eye` looking at `target`, with the image's up direction
/// aligned to `up` as closely as possible.
inline Camera look_at(const Vec3<double>& eye, const Vec3<double>& target, const Vec3<double>& up, double fov_deg,
                      int width, int height, double near = 0.05, double far = 50.0) {
    const Vec3<double> forward = (target - eye).normalized();
    const Vec3<double> right = forward.cross(up).normalized();
    const Vec3<double> down = forward.cross(right);
    if (!right.allFinite() || right.norm() < 0.5) fail(ErrorKind::kInvalidCamera, "look-at up vector is parallel to the view");
    Camera cam;
    Mat3<double> r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    cam.world_to_camera.leftCols<3>() = r;
    cam.world_to_camera.col(3) = -r * eye;
    const double focal = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    return cam;
}

}  // namespace fc4d
