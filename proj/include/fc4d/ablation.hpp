#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fc4d/evaluate.hpp"
#include "fc4d/trainer.hpp"

namespace fc4d {

/// One row of the ablation table: a decay variant, optionally without the
/// visibility split.
struct AblationVariant {
    std::string name;
    DecayVariant variant = DecayVariant::kNeural;
    bool decay_all = false;
};

inline std::vector<AblationVariant> ablation_variants() {
    return {{"none", DecayVariant::kNone, false},       {"constant", DecayVariant::kConstant, false},
            {"pow", DecayVariant::kPow, false},         {"exp", DecayVariant::kExp, false},
            {"neural", DecayVariant::kNeural, false},   {"neural_novis", DecayVariant::kNeural, true}};
}

struct AblationRun {
    std::uint64_t seed = 0;
    double psnr = 0.0;
    double dssim1 = 0.0;
    double dssim2 = 0.0;
    std::size_t distractors_alive = 0;
    std::size_t gaussians = 0;
};

struct AblationResult {
    AblationVariant variant;
    std::vector<AblationRun> runs;

    template <typename F> double median(F&& field) const {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(static_cast<double>(field(r)));
        if (v.empty()) return 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    double median_psnr() const { return median([](const AblationRun& r) { return r.psnr; }); }
    double median_distractors() const { return median([](const AblationRun& r) { return r.distractors_alive; }); }

    /// CSV with header `seed,psnr,dssim1,dssim2,distractors_alive,gaussians` and a `median` row.
    std::string to_csv() const {
        std::string out = "seed,psnr,dssim1,dssim2,distractors_alive,gaussians\n";
        char line[256];
        for (const auto& r : runs) {
            std::snprintf(line, sizeof line, "%llu,%.6f,%.8f,%.8f,%zu,%zu\n", static_cast<unsigned long long>(r.seed), r.psnr,
                          r.dssim1, r.dssim2, r.distractors_alive, r.gaussians);
            out += line;
        }
        std::snprintf(line, sizeof line, "median,%.6f,%.8f,%.8f,%.1f,%.1f\n", median_psnr(),
                      median([](const AblationRun& r) { return r.dssim1; }),
                      median([](const AblationRun& r) { return r.dssim2; }), median_distractors(),
                      median([](const AblationRun& r) { return r.gaussians; }));
        out += line;
        return out;
    }
};

/// Opacity above which a distractor counts as surviving training.
inline constexpr double kDistractorAliveOpacity = 0.1;

inline AblationRun run_variant(const Dataset& data, const Scene<double>& gt, TrainConfig cfg, const AblationVariant& v,
                               std::uint64_t seed) {
    cfg.decay_variant = v.variant;
    cfg.decay_all = v.decay_all;
    cfg.rng_seed = seed;
    cfg.eval_every = 0;
    const TrainState st = train(data, gt, cfg);
    RasterConfig rcfg;
    rcfg.eps_t = cfg.eps_t;
    rcfg.threads = cfg.threads;
    const MetricReport m = evaluate_split(st.scene, eval_decay(cfg, st.net, st.iteration), data, false, rcfg);
    AblationRun r;
    r.seed = seed;
    r.psnr = m.psnr;
    r.dssim1 = m.dssim1;
    r.dssim2 = m.dssim2;
    r.distractors_alive = st.distractors_above(kDistractorAliveOpacity);
    r.gaussians = st.scene.size();
    return r;
}

inline std::vector<AblationResult> run_ablation(const Dataset& data, const Scene<double>& gt, const TrainConfig& cfg,
                                                const std::vector<std::uint64_t>& seeds,
                                                const std::function<void(const AblationVariant&, const AblationRun&)>& on_run = {}) {
    std::vector<AblationResult> out;
    for (const auto& v : ablation_variants()) {
        AblationResult res;
        res.variant = v;
        for (std::uint64_t s : seeds) {
            res.runs.push_back(run_variant(data, gt, cfg, v, s));
            if (on_run) on_run(v, res.runs.back());
        }
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace fc4d
