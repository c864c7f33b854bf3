#include <gtest/gtest.h>

#include "fc4d/evaluate.hpp"
#include "fc4d/scenegen.hpp"
#include "fixtures.hpp"

using namespace fc4d;

namespace {

double azimuth_deg(const Vec3<double>& eye) { return std::atan2(eye.x(), -eye.y()) * 180.0 / std::numbers::pi; }

ScenePreset small_preset(PresetKind kind) {
    ScenePreset p;
    p.kind = kind;
    p.objects = 2;
    p.gaussians_per_object = 3;
    p.backdrop = 4;
    p.frames = 5;
    p.seed = 11;
    return p;
}

RigSpec small_rig() {
    RigSpec r;
    r.width = r.height = 32;
    r.n_test = 2;
    return r;
}

}  // namespace

TEST(Rig, TrainCameraSpacing) {
    const RigSpec spec;
    const auto rig = make_rig(spec);
    ASSERT_EQ(rig.size(), 8u);
    std::vector<double> train;
    for (const auto& rc : rig)
        if (rc.train) train.push_back(azimuth_deg(rc.camera.center()));
    ASSERT_EQ(train.size(), 4u);
    for (std::size_t k = 1; k < train.size(); ++k) EXPECT_NEAR(train[k] - train[k - 1], 110.0 / 3.0, 1e-9);
    EXPECT_NEAR(train.back() - train.front(), 110.0, 1e-9);
    EXPECT_NEAR(110.0 / 3.0, 36.667, 1e-3);
    // Held-out cameras sit strictly between the outermost training views.
    for (const auto& rc : rig)
        if (!rc.train) {
            const double a = azimuth_deg(rc.camera.center());
            EXPECT_GT(a, train.front());
            EXPECT_LT(a, train.back());
            for (double t : train) EXPECT_GT(std::abs(a - t), 1.0);
        }
}

TEST(Rig, EveryCameraLooksAtTarget) {
    RigSpec spec;
    spec.target = Vec3<double>(0.2, -0.1, 0.3);
    for (const auto& rc : make_rig(spec)) {
        const Vec3<double> pc = rc.camera.to_camera(spec.target);
        EXPECT_NEAR(pc.x(), 0.0, 1e-9);
        EXPECT_NEAR(pc.y(), 0.0, 1e-9);
        EXPECT_GT(pc.z(), 0.0);
        EXPECT_NEAR((rc.camera.center() - spec.target).norm(), spec.radius, 1e-9);
    }
}

TEST(Rig, DistinctTrainBaselines) {
    const auto rig = make_rig(RigSpec{});
    for (std::size_t i = 0; i < rig.size(); ++i)
        for (std::size_t j = i + 1; j < rig.size(); ++j)
            EXPECT_GT((rig[i].camera.center() - rig[j].camera.center()).norm(), 1e-3);
}

TEST(Rig, ZeroSpanRejected) {
    RigSpec spec;
    spec.span_deg = 0.0;
    try {
        make_rig(spec);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kInvalidParameter);
    }
    spec.span_deg = 361.0;
    EXPECT_THROW(make_rig(spec), Error);
}

TEST(Scene, LinearPresetMovesByVelocityTimesDt) {
    const Scene<double> s = make_scene(small_preset(PresetKind::kLinear));
    int moving = 0;
    for (const auto& g : s.gaussians) {
        const Covariance4<double> c = build_cov4(g);
        const Vec3<double> v = c.space_time() / c.time_variance();
        if (v.norm() < 1e-3) continue;  // backdrop
        ++moving;
        for (double dt : {-0.3, 0.1, 0.25}) {
            const Vec3<double> m = slice_mean(c, g.position, g.temporal_center, g.temporal_center + dt);
            EXPECT_LT((m - g.position - v * dt).norm(), 1e-12);
        }
        // The constructed velocity is the preset's constant drift (up to storage rounding).
        EXPECT_NEAR(v.norm(), 0.5 * std::sqrt(1.0 + 0.15 * 0.15), 1e-5);
    }
    EXPECT_EQ(moving, 6);
}

TEST(Scene, OrbitStaysNearCircle) {
    const ScenePreset p = small_preset(PresetKind::kOrbit);
    ScenePreset q = p;
    q.cluster_radius = 0.0;  // every cluster point on the circle itself
    const Scene<double> s = make_scene(q);
    double worst = 0;
    int checked = 0;
    for (const auto& g : s.gaussians) {
        const Covariance4<double> c = build_cov4(g);
        if ((c.space_time() / c.time_variance()).norm() < 1e-3) continue;
        // Within a segment's own time window.
        const double half = 0.5 / p.segments;
        for (double dt = -half; dt <= half + 1e-12; dt += half / 4) {
            const Vec3<double> m = slice_mean(c, g.position, g.temporal_center, g.temporal_center + dt);
            const double r = std::hypot(m.x(), m.y());
            worst = std::max(worst, std::abs(r - p.path_radius) / p.path_radius);
            ++checked;
        }
    }
    EXPECT_GT(checked, 0);
    EXPECT_LT(worst, 0.02);
}

TEST(Scene, AdjacentSegmentsHandOff) {
    ScenePreset p = small_preset(PresetKind::kOrbit);
    p.backdrop = 0;
    p.objects = 1;
    p.gaussians_per_object = 1;
    const Scene<double> s = make_scene(p);
    ASSERT_EQ(s.size(), static_cast<std::size_t>(p.segments));
    for (int k = 0; k + 1 < p.segments; ++k) {
        const auto& a = s.gaussians[k];
        const auto& b = s.gaussians[k + 1];
        const double boundary = static_cast<double>(k + 1) / p.segments;
        const double wa = temporal_weight(build_cov4(a).time_variance(), a.temporal_center, boundary);
        const double wb = temporal_weight(build_cov4(b).time_variance(), b.temporal_center, boundary);
        EXPECT_NEAR(wa, wb, 1e-6) << k;
    }
}

TEST(Scene, InsideDeclaredBoxAndValid) {
    for (auto kind : {PresetKind::kOrbit, PresetKind::kPulse, PresetKind::kLinear}) {
        ScenePreset p = small_preset(kind);
        const Scene<double> s = make_scene(p);
        EXPECT_NO_THROW(s.validate());
        for (const auto& g : s.gaussians) EXPECT_TRUE(s.aabb.contains(g.position));
    }
}

TEST(Scene, PulseUsesFirstFourierTerm) {
    const ScenePreset p = small_preset(PresetKind::kPulse);
    const Scene<double> s = make_scene(p);
    int pulsing = 0;
    for (const auto& g : s.gaussians) {
        bool any = false;
        for (int c = 0; c < 3; ++c) any = any || g.sh_coeffs[s.sh.index(c, 1, 0, 0)] != 0.0;
        pulsing += any;
        const Covariance4<double> cov = build_cov4(g);
        EXPECT_LT((cov.space_time() / cov.time_variance()).norm(), 1e-5);
    }
    EXPECT_EQ(pulsing, p.objects * p.gaussians_per_object * p.segments);
}

TEST(Scene, Deterministic) {
    const ScenePreset p = small_preset(PresetKind::kOrbit);
    EXPECT_EQ(make_scene(p), make_scene(p));
    ScenePreset q = p;
    q.seed = 12;
    EXPECT_NE(make_scene(p), make_scene(q));
}

TEST(FrameTimes, Spacing) {
    EXPECT_EQ(frame_times(1), std::vector<double>{0.0});
    const auto t = frame_times(5);
    EXPECT_EQ(t, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
}

TEST(Dataset, SingleFrameSingleCamera) {
    const auto dir = fixture::scratch_dir("one_frame");
    ScenePreset p = small_preset(PresetKind::kLinear);
    p.frames = 1;
    RigSpec r = small_rig();
    r.n_train = 1;
    r.n_test = 0;
    const Manifest m = build_dataset(make_scene(p), p, r, dir, 1);
    ASSERT_EQ(m.frames.size(), 1u);
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "frames")) files += e.is_regular_file();
    EXPECT_EQ(files, 1u);
    const Dataset d = load_dataset(dir);
    EXPECT_EQ(d.frames.size(), 1u);
    EXPECT_EQ(d.manifest.frames[0].path, m.frames[0].path);
}

TEST(Dataset, RebuildIsByteIdentical) {
    const auto a = fixture::scratch_dir("rebuild_a"), b = fixture::scratch_dir("rebuild_b");
    const ScenePreset p = small_preset(PresetKind::kOrbit);
    const Manifest ma = build_dataset(make_scene(p), p, small_rig(), a, 1);
    build_dataset(make_scene(p), p, small_rig(), b, 3);
    for (const auto& f : ma.frames) EXPECT_EQ(read_file_bytes(a / f.path), read_file_bytes(b / f.path)) << f.path;
    EXPECT_EQ(read_file_bytes(a / "manifest.json"), read_file_bytes(b / "manifest.json"));
    EXPECT_EQ(read_file_bytes(a / "gt_scene.ckpt"), read_file_bytes(b / "gt_scene.ckpt"));
}

TEST(Dataset, ExpiredGaussiansLeaveBackground) {
    const auto dir = fixture::scratch_dir("expired");
    ScenePreset p = small_preset(PresetKind::kLinear);
    p.frames = 3;
    Scene<double> s = make_scene(p);
    for (auto& g : s.gaussians) {
        // Short-lived and centered at t = 0; no velocity coupling.
        g.rot_left = g.rot_right = Quat<double>(1, 0, 0, 0);
        g.temporal_center = 0.02;
        g.log_scales[3] = std::log(0.01);
    }
    const Vec3<double> bg(0.2, 0.4, 0.6);
    const Manifest m = build_dataset(s, p, small_rig(), dir, 1, bg);
    const Dataset d = load_dataset(dir);
    int checked = 0;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        if (m.frames[i].time != 1.0) continue;
        ++checked;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                for (int c = 0; c < 3; ++c) EXPECT_EQ(d.frames[i].at(x, y, c), quantize_unit(bg[c]) / 255.0);
    }
    EXPECT_EQ(checked, 6);
}

TEST(Manifest, RoundTrip) {
    const auto dir = fixture::scratch_dir("manifest");
    const ScenePreset p = small_preset(PresetKind::kPulse);
    const Manifest m = build_dataset(make_scene(p), p, small_rig(), dir, 1, Vec3<double>(0.1, 0.2, 0.3));
    const Manifest back = load_manifest(dir / "manifest.json");
    EXPECT_EQ(back, m);
    for (std::size_t i = 0; i < m.cameras.size(); ++i) EXPECT_EQ(back.cameras[i].world_to_camera, m.cameras[i].world_to_camera);
    for (std::size_t i = 0; i < m.frames.size(); ++i) EXPECT_EQ(back.frames[i].time, m.frames[i].time);
    EXPECT_EQ(decode_manifest(encode_manifest(m)), m);
    try {
        decode_manifest("{\"version\": 1}");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kParse);
    }
}

TEST(Dataset, GroundTruthSceneReproducesFrames) {
    const auto dir = fixture::scratch_dir("gt_eval");
    const ScenePreset p = small_preset(PresetKind::kOrbit);
    build_dataset(make_scene(p), p, small_rig(), dir, 1);
    const Dataset d = load_dataset(dir);
    const Checkpoint gt = load_checkpoint(dir / d.manifest.gt_scene);
    EXPECT_EQ(gt.scene, make_scene(p));
    for (bool train : {true, false}) {
        const MetricReport rep = evaluate_split(gt.scene, DecayContext<double>::none(), d, train, RasterConfig{});
        EXPECT_EQ(rep.psnr, 99.0);
        EXPECT_NEAR(rep.dssim1, 0.0, 1e-12);
        EXPECT_NEAR(rep.dssim2, 0.0, 1e-12);
        EXPECT_FALSE(rep.rows.empty());
    }
}
