#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fc4d/camera.hpp"
#include "fc4d/decaynet.hpp"
#include "fc4d/raster.hpp"
#include "fc4d/scene.hpp"

namespace fc4d {

struct GradcheckOptions {
    std::uint64_t seed = 0;
    double step = 1e-5;
    double rel_tol = 1e-3;
    double abs_floor = 1e-8;
    int size = 16;
    int gaussians = 3;
};

struct GradcheckClass {
    std::string name;
    std::size_t count = 0;
    std::size_t failures = 0;
    double max_rel = 0.0;
    double max_abs = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckClass> classes;

    bool pass() const {
        return std::all_of(classes.begin(), classes.end(), [](const GradcheckClass& c) { return c.failures == 0 && c.count > 0; });
    }
    double max_rel() const {
        double m = 0.0;
        for (const auto& c : classes) m = std::max(m, c.max_rel);
        return m;
    }
};

/// Small scene with neural decay and a fixed linear readout of the image.
struct GradcheckProblem {
    Scene<double> scene;
    DecayNet<double> net;
    Camera camera;
    double t_query = 0.5;
    Vec3<double> background = Vec3<double>(0.1, 0.2, 0.3);
    Image<double> weights;
    RasterConfig cfg;

    DecayContext<double> decay() const {
        DecayContext<double> d;
        d.policy.variant = DecayVariant::kNeural;
        d.net = &net;
        d.active = true;
        return d;
    }

    double loss(const Scene<double>& s, const DecayNet<double>& n) const {
        DecayContext<double> d = decay();
        d.net = &n;
        const ForwardState<double> st = render_forward(s, d, camera, t_query, background, cfg);
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.data.size(); ++i) acc += weights.data[i] * st.output.color.data[i];
        return acc;
    }
};

inline GradcheckProblem make_gradcheck_problem(const GradcheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> n01;
    GradcheckProblem p;
    p.camera = look_at({0.0, -3.0, 0.6}, Vec3<double>::Zero(), Vec3<double>::UnitZ(), 50.0, opt.size, opt.size);
    p.cfg.threads = 1;
    p.scene.sh = ShConfig{2, 1, 1.0};
    p.scene.aabb = {Vec3<double>::Constant(-1.0), Vec3<double>::Constant(1.0)};
    for (int i = 0; i < opt.gaussians; ++i) {
        Gaussian4D<double> g;
        g.position = Vec3<double>(0.35 * u(rng), 0.2 * u(rng), 0.3 * u(rng));
        g.temporal_center = p.t_query + 0.15 * u(rng);
        g.rot_left = Quat<double>(n01(rng), n01(rng), n01(rng), n01(rng)) * (1.0 + 0.3 * u(rng));
        g.rot_right = Quat<double>(n01(rng), n01(rng), n01(rng), n01(rng)) * (1.0 + 0.3 * u(rng));
        g.log_scales = Vec4<double>(std::log(0.28 + 0.06 * u(rng)), std::log(0.28 + 0.06 * u(rng)),
                                    std::log(0.28 + 0.06 * u(rng)), std::log(0.3 + 0.05 * u(rng)));
        g.opacity_logit = 0.25 + 0.6 * u(rng);
        g.sh_coeffs.assign(p.scene.sh.coeff_count(), 0.0);
        for (int c = 0; c < 3; ++c) {
            g.sh_coeffs[p.scene.sh.index(c, 0, 0, 0)] = 0.6 * u(rng);
            for (std::size_t k = 0; k < g.sh_coeffs.size(); ++k)
                if (k != p.scene.sh.index(c, 0, 0, 0) && static_cast<int>(k) / p.scene.sh.coeffs_per_channel() == c)
                    g.sh_coeffs[k] = 0.08 * u(rng);
        }
        p.scene.gaussians.push_back(g);
    }
    p.net = DecayNet<double>::initialized(opt.seed + 1, 0.5);
    p.weights = Image<double>(opt.size, opt.size, 3);
    for (double& w : p.weights.data) w = u(rng) / static_cast<double>(p.weights.data.size());
    return p;
}

/// Compares render_backward against central differences for every Gaussian
/// parameter and every decay-network weight.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt = {}) {
    const GradcheckProblem p = make_gradcheck_problem(opt);
    const DecayContext<double> decay = p.decay();
    const ForwardState<double> st = render_forward(p.scene, decay, p.camera, p.t_query, p.background, p.cfg);
    if (st.visible.size() != p.scene.size()) fail(ErrorKind::kUsage, "gradcheck scene is not fully visible");
    const SceneGradients<double> grads = render_backward(st, p.scene, decay, p.weights);

    static const char* names[] = {"position", "temporal_center", "rotation", "log_scales", "opacity_logit", "sh_coeffs"};
    GradcheckReport rep;
    for (const char* n : names) rep.classes.push_back({n});
    rep.classes.push_back({"decay_net"});

    auto record = [&](GradcheckClass& c, double analytic, double numeric) {
        const double diff = std::abs(analytic - numeric);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double rel = diff / (opt.abs_floor / opt.rel_tol + scale);
        ++c.count;
        c.max_rel = std::max(c.max_rel, rel);
        c.max_abs = std::max(c.max_abs, diff);
        if (!(diff <= opt.abs_floor + opt.rel_tol * scale)) ++c.failures;
    };

    Scene<double> work = p.scene;
    for (std::size_t i = 0; i < work.size(); ++i) {
        Gaussian4D<double> analytic = grads.gaussians[i];
        for_each_param(work.gaussians[i], analytic, [&](ParamGroup group, double& param, double& a) {
            const double saved = param;
            param = saved + opt.step;
            const double lp = p.loss(work, p.net);
            param = saved - opt.step;
            const double lm = p.loss(work, p.net);
            param = saved;
            record(rep.classes[static_cast<std::size_t>(group)], a, (lp - lm) / (2.0 * opt.step));
        });
    }
    DecayNet<double> net = p.net;
    for (std::size_t k = 0; k < DecayNet<double>::kParamCount; ++k) {
        double& param = net.params()[k];
        const double saved = param;
        param = saved + opt.step;
        const double lp = p.loss(p.scene, net);
        param = saved - opt.step;
        const double lm = p.loss(p.scene, net);
        param = saved;
        record(rep.classes.back(), grads.net[k], (lp - lm) / (2.0 * opt.step));
    }
    return rep;
}

}  // namespace fc4d
