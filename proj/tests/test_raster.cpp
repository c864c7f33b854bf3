#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fc4d/gradcheck.hpp"
#include "fc4d/raster.hpp"
#include "fixtures.hpp"

using namespace fc4d;

namespace {

const Vec3<double> kBackground(0.1, 0.3, 0.6);

Camera axis_camera(int w, int h, double f = 40.0) {
    Camera c;
    c.fx = c.fy = f;
    c.cx = 0.5 * w;
    c.cy = 0.5 * h;
    c.width = w;
    c.height = h;
    return c;
}

Scene<double> single_splat_scene(double opacity, double scale, double dc) {
    Scene<double> s;
    s.sh = ShConfig{0, 0, 1.0};
    Gaussian4D<double> g;
    g.position = Vec3<double>(0, 0, 4);
    g.temporal_center = 0.5;
    g.log_scales = Vec4<double>(std::log(scale), std::log(scale), std::log(scale), std::log(0.2));
    g.opacity_logit = logit(opacity);
    g.sh_coeffs = {dc, 0.5 * dc, -dc};
    s.gaussians.push_back(g);
    return s;
}

double max_abs_diff(const Image<double>& a, const Image<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST(Project, IsotropicOnAxis) {
    const Camera c = axis_camera(32, 32, 60.0);
    const double s = 0.2, z = 5.0;
    const Splat2D<double> sp = project<double>(c, Vec3<double>(0, 0, z), Mat3<double>::Identity() * s * s);
    EXPECT_NEAR(sp.mean2.x(), c.cx, 1e-15);
    EXPECT_NEAR(sp.mean2.y(), c.cy, 1e-15);
    const double expect = std::pow(c.fx * s / z, 2) + 0.3;
    EXPECT_NEAR(sp.cov2(0, 0), expect, 1e-12);
    EXPECT_NEAR(sp.cov2(1, 1), expect, 1e-12);
    EXPECT_NEAR(sp.cov2(0, 1), 0.0, 1e-15);
    EXPECT_EQ(sp.depth, z);
}

TEST(Project, FocalLengthScalesOffset) {
    Camera c = axis_camera(32, 32, 30.0);
    const Vec3<double> p(0.4, -0.3, 3.0);
    const double off = project<double>(c, p, Mat3<double>::Identity() * 0.01).mean2.x() - c.cx;
    c.fx *= 2.0;
    const double off2 = project<double>(c, p, Mat3<double>::Identity() * 0.01).mean2.x() - c.cx;
    EXPECT_NEAR(off2, 2.0 * off, 1e-12);
}

TEST(Project, BehindCamera) {
    const Camera c = axis_camera(32, 32);
    try {
        project<double>(c, Vec3<double>(0, 0, -1), Mat3<double>::Identity());
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kBehindCamera);
    }
}

TEST(RenderForward, EmptySceneIsBackground) {
    Scene<double> s;
    const Camera c = axis_camera(20, 12);
    const auto st = render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 20; ++x)
            for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(st.output.color.at(x, y, ch), kBackground[ch]);
    const auto o = oracle_render(s, DecayContext<double>::none(), c, 0.5, kBackground);
    EXPECT_EQ(o.color, st.output.color);
}

TEST(RenderForward, SingleSplatClosedForm) {
    const double opacity = 0.99, scale = 3.0, dc = 0.4;
    const Scene<double> s = single_splat_scene(opacity, scale, dc);
    const Camera c = axis_camera(16, 16);
    const auto st = render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground);
    // Pixel (8, 8) has its center half a pixel off the projected mean in both axes.
    const double var = std::pow(c.fx * scale / 4.0, 2) + 0.3;
    const double alpha = opacity * std::exp(-0.5 * (0.25 + 0.25) / var);
    const double y00 = 0.28209479177387814;
    const Vec3<double> color(dc * y00 + 0.5, 0.5 * dc * y00 + 0.5, -dc * y00 + 0.5);
    for (int ch = 0; ch < 3; ++ch) {
        const double expect = alpha * color[ch] + (1 - alpha) * kBackground[ch];
        EXPECT_NEAR(st.output.color.at(8, 8, ch), expect, 1e-12);
    }
    EXPECT_NEAR(st.output.alpha.at(8, 8), alpha, 1e-12);
    EXPECT_NEAR(st.output.depth.at(8, 8), 4.0, 1e-12);
}

TEST(RenderForward, MatchesOracleOnRandomScenes) {
    std::mt19937_64 rng(1);
    const DecayNet<double> net = DecayNet<double>::initialized(2, 1.0);
    DecayContext<double> decay;
    decay.net = &net;
    double worst = 0;
    for (int trial = 0; trial < 15; ++trial) {
        std::uniform_int_distribution<int> count(0, 50);
        const Scene<double> s = fixture::random_scene(rng, static_cast<std::size_t>(count(rng)), ShConfig{1, 1, 1.0});
        const Camera c = fixture::random_camera(rng, 64, 64);
        const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto st = render_forward(s, decay, c, t, kBackground);
        const auto o = oracle_render(s, decay, c, t, kBackground);
        worst = std::max(worst, max_abs_diff(st.output.color, o.color));
    }
    EXPECT_LE(worst, 1e-5);
}

TEST(RenderForward, StorageOrderDoesNotMatter) {
    std::mt19937_64 rng(3);
    Scene<double> s = fixture::random_scene(rng, 40);
    // Deliberate exact depth tie between two Gaussians.
    s.gaussians[1] = s.gaussians[0];
    s.gaussians[1].sh_coeffs[0] += 0.3;
    const Camera c = fixture::random_camera(rng, 48, 48);
    const DecayNet<double> net = DecayNet<double>::initialized(4);
    DecayContext<double> decay;
    decay.net = &net;
    const auto base = render_forward(s, decay, c, 0.5, kBackground);
    for (int k = 0; k < 5; ++k) {
        Scene<double> p = s;
        std::shuffle(p.gaussians.begin(), p.gaussians.end(), rng);
        const auto st = render_forward(p, decay, c, 0.5, kBackground);
        EXPECT_EQ(st.output.color, base.output.color);
        EXPECT_EQ(st.output.alpha, base.output.alpha);
    }
}

TEST(RenderForward, ForcedOpaqueShowsNearestSplat) {
    std::mt19937_64 rng(5);
    const Scene<double> s = fixture::random_scene(rng, 30);
    const Camera c = fixture::random_camera(rng, 40, 40);
    RasterConfig cfg;
    cfg.force_opaque = true;
    const auto st = render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground, cfg);
    int covered = 0;
    for (int py = 0; py < c.height; ++py)
        for (int px = 0; px < c.width; ++px) {
            // Nearest splat whose alpha clears the skip threshold at this pixel.
            const PreparedSplat<double>* best = nullptr;
            for (const auto& sp : st.splats) {
                const double dx = px + 0.5 - sp.splat.mean2.x(), dy = py + 0.5 - sp.splat.mean2.y();
                const Vec2<double> d(dx, dy);
                const double a = sp.splat.alpha_base * std::exp(-0.5 * d.dot(sp.conic * d));
                if (a < cfg.alpha_min) continue;
                if (best == nullptr || sp.splat.depth < best->splat.depth) best = &sp;
            }
            for (int ch = 0; ch < 3; ++ch) {
                const double expect = best ? best->splat.color[ch] : kBackground[ch];
                EXPECT_EQ(st.output.color.at(px, py, ch), expect);
            }
            covered += best != nullptr;
        }
    EXPECT_GT(covered, 0);
}

TEST(RenderForward, NoneMatchesBaselineBitExact) {
    std::mt19937_64 rng(6);
    const Scene<double> s = fixture::random_scene(rng, 40, ShConfig{2, 1, 1.0});
    const Camera c = fixture::random_camera(rng, 48, 48);
    const DecayNet<double> net = DecayNet<double>::initialized(7);
    const auto none = render_forward(s, DecayContext<double>::none(), c, 0.4, kBackground);

    // Decay switched off entirely (the warm-up path).
    DecayContext<double> off;
    off.net = &net;
    off.active = false;
    const auto baseline = render_forward(s, off, c, 0.4, kBackground);
    EXPECT_EQ(none.output.color, baseline.output.color);
    EXPECT_EQ(none.output.alpha, baseline.output.alpha);
    EXPECT_EQ(none.output.depth, baseline.output.depth);

    // Per-splat opacity is exactly temporal weight times stored opacity.
    for (const auto& sp : none.splats) {
        const auto& g = s.gaussians[sp.index];
        const Covariance4<double> cov = build_cov4(g);
        EXPECT_EQ(sp.splat.alpha_base, temporal_weight(cov.time_variance(), g.temporal_center, 0.4) * g.opacity());
    }
}

TEST(RenderForward, AlphaBoundAndBackgroundPixels) {
    std::mt19937_64 rng(8);
    Scene<double> s = fixture::random_scene(rng, 50);
    for (auto& g : s.gaussians) g.opacity_logit = 8.0;
    const Camera c = fixture::random_camera(rng, 48, 48);
    const auto st = render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const double a = st.output.alpha.at(x, y);
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0 - 1e-12);
            if (a == 0.0)
                for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(st.output.color.at(x, y, ch), kBackground[ch]);
        }
}

TEST(RenderForward, NonFiniteAttributeAbortsWithIndex) {
    std::mt19937_64 rng(9);
    Scene<double> s = fixture::random_scene(rng, 6);
    for (auto& g : s.gaussians) {
        g.position = Vec3<double>(0, 0, 0);
        g.temporal_center = 0.5;
    }
    s.gaussians[3].log_scales[1] = std::numeric_limits<double>::quiet_NaN();
    const Camera c = look_at({0, -3, 0}, Vec3<double>::Zero(), Vec3<double>::UnitZ(), 50, 16, 16);
    const VisibleSet all = VisibleSet::all(s.size());
    try {
        render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground, RasterConfig{}, all);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kRenderAbort);
        EXPECT_NE(std::string(e.what()).find("Gaussian 3"), std::string::npos) << e.what();
    }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(10);
    const Scene<double> s = fixture::random_scene(rng, 20);
    const Camera c = fixture::random_camera(rng, 32, 32);
    const DecayNet<double> net = DecayNet<double>::initialized(11);
    DecayContext<double> decay;
    decay.net = &net;
    const auto st = render_forward(s, decay, c, 0.5, kBackground);
    const auto g = render_backward(st, s, decay, Image<double>(32, 32, 3));
    for (auto gg : g.gaussians) for_each_param(gg, [](ParamGroup, double& v) { EXPECT_EQ(v, 0.0); });
    for (double v : g.net) EXPECT_EQ(v, 0.0);
}

TEST(RenderBackward, TemporallyExcludedTwinGetsZero) {
    Scene<double> s;
    s.sh = ShConfig{1, 1, 1.0};
    s.aabb = {Vec3<double>::Constant(-2), Vec3<double>::Constant(2)};
    Gaussian4D<double> g;
    g.position = Vec3<double>(0, 0, 0);
    g.temporal_center = 0.5;
    g.log_scales = Vec4<double>(std::log(0.3), std::log(0.3), std::log(0.3), std::log(0.05));
    g.opacity_logit = 0.5;
    g.sh_coeffs.assign(s.sh.coeff_count(), 0.1);
    Gaussian4D<double> twin = g;
    twin.temporal_center = 0.95;  // omega far below eps_t at t = 0.5
    s.gaussians = {g, twin};
    const Camera c = look_at({0, -3, 0.5}, Vec3<double>::Zero(), Vec3<double>::UnitZ(), 50, 24, 24);
    const DecayNet<double> net = DecayNet<double>::initialized(12);
    DecayContext<double> decay;
    decay.net = &net;
    const auto st = render_forward(s, decay, c, 0.5, kBackground);
    ASSERT_EQ(st.visible.indices, (std::vector<std::uint32_t>{0}));
    Image<double> up(24, 24, 3, 1.0);
    auto grads = render_backward(st, s, decay, up);
    double included = 0, excluded = 0;
    for_each_param(grads.gaussians[0], [&](ParamGroup, double& v) { included += std::abs(v); });
    for_each_param(grads.gaussians[1], [&](ParamGroup, double& v) { excluded += std::abs(v); });
    EXPECT_GT(included, 0.0);
    EXPECT_EQ(excluded, 0.0);
}

TEST(RenderBackward, StaleCacheIsUsageError) {
    std::mt19937_64 rng(13);
    Scene<double> s = fixture::random_scene(rng, 5);
    const Camera c = fixture::random_camera(rng, 16, 16);
    const auto st = render_forward(s, DecayContext<double>::none(), c, 0.5, kBackground);
    s.gaussians[2].position.x() += 1e-3;
    try {
        render_backward(st, s, DecayContext<double>::none(), Image<double>(16, 16, 3));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    }
    ForwardState<double> empty;
    EXPECT_THROW(render_backward(empty, s, DecayContext<double>::none(), Image<double>(16, 16, 3)), Error);
}

TEST(RenderBackward, ThreadCountDoesNotChangeResults) {
    std::mt19937_64 rng(14);
    const Scene<double> s = fixture::random_scene(rng, 30);
    const Camera c = fixture::random_camera(rng, 64, 48);
    const DecayNet<double> net = DecayNet<double>::initialized(15);
    DecayContext<double> decay;
    decay.net = &net;
    Image<double> up(64, 48, 3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : up.data) v = u(rng);
    RasterConfig one, four;
    one.threads = 1;
    four.threads = 4;
    const auto a = render_forward(s, decay, c, 0.5, kBackground, one);
    const auto b = render_forward(s, decay, c, 0.5, kBackground, four);
    EXPECT_EQ(a.output.color, b.output.color);
    const auto ga = render_backward(a, s, decay, up);
    const auto gb = render_backward(b, s, decay, up);
    EXPECT_EQ(ga.net, gb.net);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(ga.gaussians[i], gb.gaussians[i]);
}

TEST(Gradcheck, AllClassesPass) {
    for (std::uint64_t seed : {0u, 1u}) {
        GradcheckOptions opt;
        opt.seed = seed;
        const GradcheckReport rep = run_gradcheck(opt);
        EXPECT_TRUE(rep.pass()) << "seed " << seed << " max rel " << rep.max_rel();
        ASSERT_EQ(rep.classes.size(), 7u);
        EXPECT_EQ(rep.classes.back().count, 5057u);
    }
}
