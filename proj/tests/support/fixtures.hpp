#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "fc4d/camera.hpp"
#include "fc4d/scene.hpp"

namespace fixture {

using namespace fc4d;

inline Quat<double> random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    return Quat<double>(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
}

/// Generic Gaussian near the origin with moderate opacity and nonzero color terms.
inline Gaussian4D<double> random_gaussian(std::mt19937_64& rng, const ShConfig& sh, double spread = 1.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Gaussian4D<double> g;
    g.position = spread * Vec3<double>(u(rng), u(rng), u(rng));
    g.temporal_center = 0.5 + 0.5 * u(rng);
    g.rot_left = random_quat(rng);
    g.rot_right = random_quat(rng);
    for (int i = 0; i < 3; ++i) g.log_scales[i] = std::log(0.05 + 0.1 * (u(rng) + 1.0));
    g.log_scales[3] = std::log(0.2 + 0.15 * (u(rng) + 1.0));
    g.opacity_logit = 3.0 * u(rng);
    g.sh_coeffs.resize(sh.coeff_count());
    for (double& c : g.sh_coeffs) c = 0.8 * u(rng);
    return g;
}

inline Scene<double> random_scene(std::mt19937_64& rng, std::size_t n, const ShConfig& sh = ShConfig{}) {
    Scene<double> s;
    s.sh = sh;
    s.aabb = {Vec3<double>::Constant(-1.5), Vec3<double>::Constant(1.5)};
    for (std::size_t i = 0; i < n; ++i) s.gaussians.push_back(random_gaussian(rng, sh));
    return s;
}

/// Camera on a sphere of radius ~3 looking near the origin.
inline Camera random_camera(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = std::numbers::pi * u(rng);
    const Vec3<double> eye(3.0 * std::sin(a), -3.0 * std::cos(a), 1.5 * u(rng));
    return look_at(eye, 0.2 * Vec3<double>(u(rng), u(rng), u(rng)), Vec3<double>::UnitZ(), 50.0 + 10.0 * u(rng), w, h);
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("fc4d_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixture
