#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fc4d/checkpoint.hpp"
#include "fc4d/decaynet.hpp"
#include "fc4d/evaluate.hpp"
#include "fc4d/metrics.hpp"
#include "fc4d/optim.hpp"
#include "fc4d/raster.hpp"
#include "fc4d/scene.hpp"
#include "fc4d/scenegen.hpp"
#include "fc4d/visibility.hpp"

namespace fc4d {

struct TrainConfig {
    std::uint64_t iterations = 5000;
    std::uint64_t warmup_iters = 500;
    double lr_position = 1.6e-4;
    double lr_rotation = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_sh = 2.5e-3;
    double lr_decay_net = 1e-3;
    /// Exponential position-rate schedule ending at this rate; 0 keeps the rate constant.
    double lr_position_final = 0.0;
    double loss_lambda = 0.2;
    double eps_t = kDefaultTemporalEps;
    double beta_invisible = 0.999;
    double prune_opacity = 0.005;
    std::uint64_t prune_every = 500;
    bool commit_visible_decay = false;
    bool beta_after_warmup = false;
    /// Ablation: no visibility split, the decay function also replaces beta on
    /// Gaussians outside the current view.
    bool decay_all = false;
    std::uint64_t rng_seed = 0;
    DecayVariant decay_variant = DecayVariant::kNeural;
    // initialization
    double init_position_noise = 0.05;
    double init_opacity = 0.1;
    double distractor_fraction = 0.25;
    /// Held-out evaluation period in iterations; 0 disables periodic evaluation.
    std::uint64_t eval_every = 500;
    int threads = 0;

    void validate() const {
        if (warmup_iters > iterations && iterations > 0)
            fail(ErrorKind::kInvalidParameter, "warmup_iters must not exceed iterations");
        for (double lr : {lr_position, lr_rotation, lr_scale, lr_opacity, lr_sh, lr_decay_net})
            if (!(lr > 0.0)) fail(ErrorKind::kInvalidParameter, "learning rates must be positive");
        if (!(lr_position_final >= 0.0)) fail(ErrorKind::kInvalidParameter, "lr_position_final must be >= 0");
        if (!(loss_lambda >= 0.0 && loss_lambda <= 1.0)) fail(ErrorKind::kInvalidParameter, "loss_lambda must be in [0, 1]");
        if (!(beta_invisible > 0.0 && beta_invisible <= 1.0))
            fail(ErrorKind::kInvalidParameter, "beta_invisible must be in (0, 1]");
        if (!(eps_t > 0.0 && eps_t < 1.0)) fail(ErrorKind::kInvalidParameter, "eps_t must be in (0, 1)");
        if (!(prune_opacity >= 0.0 && prune_opacity < 1.0)) fail(ErrorKind::kInvalidParameter, "prune_opacity must be in [0, 1)");
        if (!(init_position_noise >= 0.0)) fail(ErrorKind::kInvalidParameter, "init_position_noise must be >= 0");
        if (!(init_opacity > 0.0 && init_opacity < 1.0)) fail(ErrorKind::kInvalidParameter, "init_opacity must be in (0, 1)");
        if (!(distractor_fraction >= 0.0)) fail(ErrorKind::kInvalidParameter, "distractor_fraction must be >= 0");
    }

    DecayPolicy policy() const {
        DecayPolicy p;
        p.variant = decay_variant;
        p.beta_invisible = beta_invisible;
        return p;
    }

    nlohmann::json to_json() const {
        return {{"iterations", iterations},
                {"warmup_iters", warmup_iters},
                {"lr_position", lr_position},
                {"lr_rotation", lr_rotation},
                {"lr_scale", lr_scale},
                {"lr_opacity", lr_opacity},
                {"lr_sh", lr_sh},
                {"lr_decay_net", lr_decay_net},
                {"lr_position_final", lr_position_final},
                {"loss_lambda", loss_lambda},
                {"eps_t", eps_t},
                {"beta_invisible", beta_invisible},
                {"prune_opacity", prune_opacity},
                {"prune_every", prune_every},
                {"commit_visible_decay", commit_visible_decay},
                {"beta_after_warmup", beta_after_warmup},
                {"decay_all", decay_all},
                {"rng_seed", rng_seed},
                {"decay_variant", to_string(decay_variant)},
                {"init_position_noise", init_position_noise},
                {"init_opacity", init_opacity},
                {"distractor_fraction", distractor_fraction},
                {"eval_every", eval_every},
                {"threads", threads}};
    }

    /// Overlays the keys present in `j`; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base) {
        if (!j.is_object()) fail(ErrorKind::kParse, "training config must be a JSON object");
        TrainConfig c = base;
        try {
            for (auto it = j.begin(); it != j.end(); ++it) {
                const std::string& k = it.key();
                const nlohmann::json& v = it.value();
                if (k == "iterations") c.iterations = v.get<std::uint64_t>();
                else if (k == "warmup_iters") c.warmup_iters = v.get<std::uint64_t>();
                else if (k == "lr_position") c.lr_position = v.get<double>();
                else if (k == "lr_rotation") c.lr_rotation = v.get<double>();
                else if (k == "lr_scale") c.lr_scale = v.get<double>();
                else if (k == "lr_opacity") c.lr_opacity = v.get<double>();
                else if (k == "lr_sh") c.lr_sh = v.get<double>();
                else if (k == "lr_decay_net") c.lr_decay_net = v.get<double>();
                else if (k == "lr_position_final") c.lr_position_final = v.get<double>();
                else if (k == "loss_lambda") c.loss_lambda = v.get<double>();
                else if (k == "eps_t") c.eps_t = v.get<double>();
                else if (k == "beta_invisible") c.beta_invisible = v.get<double>();
                else if (k == "prune_opacity") c.prune_opacity = v.get<double>();
                else if (k == "prune_every") c.prune_every = v.get<std::uint64_t>();
                else if (k == "commit_visible_decay") c.commit_visible_decay = v.get<bool>();
                else if (k == "beta_after_warmup") c.beta_after_warmup = v.get<bool>();
                else if (k == "decay_all") c.decay_all = v.get<bool>();
                else if (k == "rng_seed") c.rng_seed = v.get<std::uint64_t>();
                else if (k == "decay_variant") c.decay_variant = parse_decay_variant(v.get<std::string>());
                else if (k == "init_position_noise") c.init_position_noise = v.get<double>();
                else if (k == "init_opacity") c.init_opacity = v.get<double>();
                else if (k == "distractor_fraction") c.distractor_fraction = v.get<double>();
                else if (k == "eval_every") c.eval_every = v.get<std::uint64_t>();
                else if (k == "threads") c.threads = v.get<int>();
                else fail(ErrorKind::kParse, "unknown training config key '" + k + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::kParse, std::string("training config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

struct LossReport {
    std::uint64_t iteration = 0;
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double psnr = 0.0;
    std::size_t visible = 0;
    std::size_t gaussians = 0;

    nlohmann::json to_json() const {
        return {{"iter", iteration}, {"loss", total},       {"l1", l1},
                {"dssim", dssim},    {"psnr", psnr},        {"visible", visible},
                {"gaussians", gaussians}};
    }
};

/// Everything the optimizer owns between iterations.
struct TrainState {
    Scene<double> scene;
    DecayNet<double> net;
    std::vector<double> origin;
    std::vector<Gaussian4D<double>> adam_m;
    std::vector<Gaussian4D<double>> adam_v;
    std::uint64_t adam_step = 0;
    AdamState<double> net_adam{DecayNet<double>::kParamCount};
    std::mt19937_64 rng;
    std::uint64_t iteration = 0;

    std::size_t distractors_above(double opacity) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < scene.size(); ++i)
            if (origin[i] != 0.0 && scene.gaussians[i].opacity() > opacity) ++n;
        return n;
    }
};

inline std::string rng_state_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

/// Noisy copy of the ground-truth scene plus uniform-random distractors
/// (tagged with origin 1). Uses its own random stream, separate from sampling.
inline TrainState init_training(const Scene<double>& gt, const TrainConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.scene.sh = gt.sh;
    st.scene.aabb = gt.aabb;
    std::mt19937_64 init_rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Vec3<double> extent = gt.aabb.extent();
    const double init_logit = logit(cfg.init_opacity);

    double mean_log_scale = 0.0;
    for (const auto& g : gt.gaussians) {
        Gaussian4D<double> x = g;
        for (int i = 0; i < 3; ++i) x.position[i] += cfg.init_position_noise * extent[i] * n01(init_rng);
        x.opacity_logit = init_logit;
        st.scene.gaussians.push_back(x);
        st.origin.push_back(0.0);
        mean_log_scale += (g.log_scales[0] + g.log_scales[1] + g.log_scales[2]) / 3.0;
    }
    if (!gt.gaussians.empty()) mean_log_scale /= static_cast<double>(gt.size());

    const auto n_distract = static_cast<std::size_t>(std::llround(cfg.distractor_fraction * static_cast<double>(gt.size())));
    for (std::size_t k = 0; k < n_distract; ++k) {
        Gaussian4D<double> d;
        for (int i = 0; i < 3; ++i) d.position[i] = gt.aabb.lo[i] + u01(init_rng) * extent[i];
        d.temporal_center = u01(init_rng);
        d.rot_left = Quat<double>(n01(init_rng), n01(init_rng), n01(init_rng), n01(init_rng)).normalized();
        d.rot_right = Quat<double>(n01(init_rng), n01(init_rng), n01(init_rng), n01(init_rng)).normalized();
        d.log_scales = Vec4<double>(mean_log_scale, mean_log_scale, mean_log_scale, std::log(0.3));
        d.opacity_logit = init_logit;
        d.sh_coeffs.assign(gt.sh.coeff_count(), 0.0);
        for (int c = 0; c < 3; ++c) d.sh_coeffs[gt.sh.index(c, 0, 0, 0)] = (u01(init_rng) - 0.5) / detail::kY00;
        st.scene.gaussians.push_back(d);
        st.origin.push_back(1.0);
    }
    for (const auto& g : st.scene.gaussians) {
        st.adam_m.push_back(g.zeros_like());
        st.adam_v.push_back(g.zeros_like());
    }
    st.net = DecayNet<double>::initialized(cfg.rng_seed);
    st.rng.seed(cfg.rng_seed);
    return st;
}

namespace detail {

inline void set_opacity(Gaussian4D<double>& g, double o) { g.opacity_logit = logit(o); }

inline double group_rate(const TrainConfig& cfg, ParamGroup group, std::uint64_t iteration) {
    switch (group) {
        case ParamGroup::kPosition:
        case ParamGroup::kTemporalCenter: {
            if (cfg.lr_position_final <= 0.0 || cfg.iterations <= 1) return cfg.lr_position;
            const double f = static_cast<double>(std::min(iteration, cfg.iterations - 1)) / static_cast<double>(cfg.iterations - 1);
            return std::exp((1.0 - f) * std::log(cfg.lr_position) + f * std::log(cfg.lr_position_final));
        }
        case ParamGroup::kRotation: return cfg.lr_rotation;
        case ParamGroup::kScale: return cfg.lr_scale;
        case ParamGroup::kOpacity: return cfg.lr_opacity;
        case ParamGroup::kSh: return cfg.lr_sh;
    }
    return 0.0;
}

inline void prune(TrainState& st, double threshold) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < st.scene.size(); ++i) {
        if (st.scene.gaussians[i].opacity() < threshold) continue;
        if (w != i) {
            st.scene.gaussians[w] = std::move(st.scene.gaussians[i]);
            st.adam_m[w] = std::move(st.adam_m[i]);
            st.adam_v[w] = std::move(st.adam_v[i]);
            st.origin[w] = st.origin[i];
        }
        ++w;
    }
    st.scene.gaussians.resize(w);
    st.adam_m.resize(w);
    st.adam_v.resize(w);
    st.origin.resize(w);
}

}  // namespace detail

/// Decay context the trained model is evaluated with after `iterations_done` iterations.
inline DecayContext<double> eval_decay(const TrainConfig& cfg, const DecayNet<double>& net, std::uint64_t iterations_done) {
    DecayContext<double> ctx;
    ctx.policy = cfg.policy();
    ctx.net = &net;
    ctx.active = cfg.decay_variant != DecayVariant::kNone && iterations_done > cfg.warmup_iters;
    return ctx;
}

/// One optimization step on a uniformly sampled training frame.
inline LossReport train_iteration(TrainState& st, const Dataset& data, const TrainConfig& cfg) {
    const std::vector<std::size_t> train_ids = data.split(true);
    if (train_ids.empty()) fail(ErrorKind::kUsage, "dataset has no training frames");
    const std::uint64_t iter = st.iteration;
    const bool warm = iter >= cfg.warmup_iters;
    const DecayPolicy policy = cfg.policy();

    std::uniform_int_distribution<std::size_t> pick(0, train_ids.size() - 1);
    const std::size_t fid = train_ids[pick(st.rng)];
    const FrameRecord& frame = data.manifest.frames[fid];
    const Camera& cam = data.manifest.cameras[static_cast<std::size_t>(frame.camera)];
    const Image<double>& gt = data.frames[fid];

    RasterConfig rcfg;
    rcfg.eps_t = cfg.eps_t;
    rcfg.threads = cfg.threads;
    const VisibleSet vis = visible_set(cam, frame.time, st.scene, cfg.eps_t, rcfg.margin);

    // Persistent decay of Gaussians outside the current view.
    const std::vector<std::uint32_t> hidden = vis.complement();
    if (cfg.decay_all && warm && cfg.decay_variant != DecayVariant::kNone) {
        for (std::uint32_t i : hidden) {
            Gaussian4D<double>& g = st.scene.gaussians[i];
            const double tau = cfg.decay_variant == DecayVariant::kNeural
                                   ? st.net.forward(make_decay_input(g, st.scene.aabb))
                                   : variant_tau(policy, g.opacity());
            if (tau != 1.0) detail::set_opacity(g, tau * g.opacity());
        }
    } else if (cfg.beta_invisible != 1.0 && (warm || !cfg.beta_after_warmup)) {
        for (std::uint32_t i : hidden) {
            Gaussian4D<double>& g = st.scene.gaussians[i];
            detail::set_opacity(g, cfg.beta_invisible * g.opacity());
        }
    }

    DecayContext<double> decay;
    decay.policy = policy;
    decay.net = &st.net;
    decay.active = warm;

    LossReport rep;
    rep.iteration = iter;
    rep.visible = vis.size();
    try {
        const ForwardState<double> fwd = render_forward(st.scene, decay, cam, frame.time, data.manifest.background, rcfg, vis);
        const PhotometricLoss<double> loss = photometric_loss(fwd.output.color, gt, cfg.loss_lambda);
        rep.total = loss.total;
        rep.l1 = loss.l1;
        rep.dssim = loss.dssim;
        rep.psnr = psnr(fwd.output.color, gt);
        SceneGradients<double> grads = render_backward(fwd, st.scene, decay, loss.grad);

        std::vector<double> committed_tau;
        if (cfg.commit_visible_decay && warm && decay.policy.variant != DecayVariant::kNone)
            for (const auto& s : fwd.splats) committed_tau.push_back(s.tau);

        ++st.adam_step;
        const AdamHyper hp;
        for (std::uint32_t i : vis.indices) {
            Gaussian4D<double>& g = st.scene.gaussians[i];
            for_each_param_zip(
                [&](ParamGroup group, double& p, double& grad, double& mo, double& vo) {
                    adam_update(p, grad, mo, vo, detail::group_rate(cfg, group, iter), st.adam_step, hp);
                },
                g, grads.gaussians[i], st.adam_m[i], st.adam_v[i]);
            normalize_rotations(g);
        }
        if (warm) adam_step<double>(st.net.params(), grads.net, st.net_adam, cfg.lr_decay_net, hp);

        for (std::size_t k = 0; k < committed_tau.size(); ++k) {
            Gaussian4D<double>& g = st.scene.gaussians[fwd.splats[k].index];
            if (committed_tau[k] != 1.0) detail::set_opacity(g, committed_tau[k] * g.opacity());
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::kRenderAbort)
            throw Error(e.kind(), "iteration " + std::to_string(iter) + ": " + e.what());
        throw;
    }

    ++st.iteration;
    if (warm && cfg.prune_every > 0 && st.iteration % cfg.prune_every == 0) detail::prune(st, cfg.prune_opacity);
    rep.gaussians = st.scene.size();
    return rep;
}

inline Checkpoint make_checkpoint(const TrainState& st, const TrainConfig& cfg, const std::string& data_dir) {
    Checkpoint ck;
    ck.scene = st.scene;
    ck.net = st.net;
    ck.origin = st.origin;
    nlohmann::json j = cfg.to_json();
    j["data_dir"] = data_dir;
    j["iterations_done"] = st.iteration;
    ck.config = j.dump();
    ck.rng_state = rng_state_string(st.rng);
    return ck;
}

/// Optional observer for progress output; receives every loss record and
/// every periodic evaluation.
struct TrainHooks {
    std::function<void(const LossReport&)> on_iteration;
    std::function<void(std::uint64_t, const MetricReport&)> on_eval;
};

/// Runs `cfg.iterations` steps. When `log` is non-null it receives one JSON
/// record per line for every iteration and every held-out evaluation.
inline TrainState train(const Dataset& data, const Scene<double>& gt, const TrainConfig& cfg, std::string* log = nullptr,
                        const TrainHooks& hooks = {}) {
    TrainState st = init_training(gt, cfg);
    RasterConfig rcfg;
    rcfg.eps_t = cfg.eps_t;
    rcfg.threads = cfg.threads;
    const bool has_test = !data.split(false).empty();
    for (std::uint64_t it = 0; it < cfg.iterations; ++it) {
        const LossReport rep = train_iteration(st, data, cfg);
        if (log) *log += rep.to_json().dump() + "\n";
        if (hooks.on_iteration) hooks.on_iteration(rep);
        if (cfg.eval_every > 0 && has_test && (st.iteration % cfg.eval_every == 0 || st.iteration == cfg.iterations)) {
            const MetricReport m = evaluate_split(st.scene, eval_decay(cfg, st.net, st.iteration), data, false, rcfg);
            if (log)
                *log += nlohmann::json{{"iter", st.iteration}, {"eval_psnr", m.psnr}, {"eval_dssim1", m.dssim1},
                                       {"eval_dssim2", m.dssim2}}
                            .dump() +
                        "\n";
            if (hooks.on_eval) hooks.on_eval(st.iteration, m);
        }
    }
    return st;
}

}  // namespace fc4d
