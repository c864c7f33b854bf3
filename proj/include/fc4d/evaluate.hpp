#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "fc4d/decaynet.hpp"
#include "fc4d/image.hpp"
#include "fc4d/metrics.hpp"
#include "fc4d/parallel.hpp"
#include "fc4d/raster.hpp"
#include "fc4d/scene.hpp"
#include "fc4d/scenegen.hpp"

namespace fc4d {

struct FrameMetrics {
    std::string path;
    int camera = 0;
    double time = 0.0;
    double psnr = 0.0;
    double dssim1 = 0.0;
    double dssim2 = 0.0;
};

struct MetricReport {
    std::vector<FrameMetrics> rows;
    double psnr = 0.0;
    double dssim1 = 0.0;
    double dssim2 = 0.0;

    /// CSV with header `frame,camera,time,psnr,dssim1,dssim2` and a final `mean` row.
    std::string to_csv() const {
        std::string out = "frame,camera,time,psnr,dssim1,dssim2\n";
        char line[512];
        for (const auto& r : rows) {
            std::snprintf(line, sizeof line, "%s,%d,%.9g,%.6f,%.8f,%.8f\n", r.path.c_str(), r.camera, r.time, r.psnr,
                          r.dssim1, r.dssim2);
            out += line;
        }
        std::snprintf(line, sizeof line, "mean,,,%.6f,%.8f,%.8f\n", psnr, dssim1, dssim2);
        out += line;
        return out;
    }
};

/// Compares 8-bit renders of `scene` against the stored frames of one split.
/// Per-frame metrics are computed in parallel and averaged in manifest order.
inline MetricReport evaluate_split(const Scene<double>& scene, const DecayContext<double>& decay, const Dataset& data,
                                   bool train_split, const RasterConfig& cfg, bool dssim_halved = true) {
    const std::vector<std::size_t> ids = data.split(train_split);
    MetricReport rep;
    rep.rows.resize(ids.size());
    RasterConfig frame_cfg = cfg;
    frame_cfg.threads = 1;
    parallel_for(ids.size(), cfg.threads, [&](std::size_t k) {
        const FrameRecord& f = data.manifest.frames[ids[k]];
        const Camera& cam = data.manifest.cameras[static_cast<std::size_t>(f.camera)];
        const ForwardState<double> st = render_forward(scene, decay, cam, f.time, data.manifest.background, frame_cfg);
        const Image<double> img = quantized(st.output.color);
        const Image<double>& gt = data.frames[ids[k]];
        FrameMetrics& row = rep.rows[k];
        row.path = f.path;
        row.camera = f.camera;
        row.time = f.time;
        row.psnr = psnr(img, gt);
        row.dssim1 = dssim(img, gt, 1.0, dssim_halved);
        row.dssim2 = dssim(img, gt, 2.0, dssim_halved);
    });
    for (const auto& r : rep.rows) {
        rep.psnr += r.psnr;
        rep.dssim1 += r.dssim1;
        rep.dssim2 += r.dssim2;
    }
    if (!rep.rows.empty()) {
        const double n = static_cast<double>(rep.rows.size());
        rep.psnr /= n;
        rep.dssim1 /= n;
        rep.dssim2 /= n;
    }
    return rep;
}

}  // namespace fc4d
