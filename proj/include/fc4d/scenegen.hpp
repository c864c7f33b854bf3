#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "fc4d/camera.hpp"
#include "fc4d/checkpoint.hpp"
#include "fc4d/error.hpp"
#include "fc4d/image.hpp"
#include "fc4d/parallel.hpp"
#include "fc4d/raster.hpp"
#include "fc4d/scene.hpp"

namespace fc4d {

inline constexpr int kManifestVersion = 1;

struct RigSpec {
    int n_train = 4;
    int n_test = 4;
    double span_deg = 110.0;
    double radius = 4.0;
    double elevation_deg = 20.0;
    Vec3<double> target = Vec3<double>::Zero();
    int width = 96;
    int height = 96;
    double fov_deg = 50.0;

    void validate() const {
        if (!(span_deg > 0.0 && span_deg <= 360.0))
            fail(ErrorKind::kInvalidParameter, "arc span must be in (0, 360] degrees, got " + std::to_string(span_deg));
        if (n_train < 1 || n_test < 0) fail(ErrorKind::kInvalidParameter, "need at least one training camera");
        if (!(radius > 0.0)) fail(ErrorKind::kInvalidParameter, "rig radius must be positive");
        if (width <= 0 || height <= 0) fail(ErrorKind::kInvalidParameter, "image size must be positive");
        if (!(fov_deg > 0.0 && fov_deg < 180.0)) fail(ErrorKind::kInvalidParameter, "fov must be in (0, 180) degrees");
        if (!(std::abs(elevation_deg) < 90.0)) fail(ErrorKind::kInvalidParameter, "elevation must be in (-90, 90)");
    }
};

struct RigCamera {
    Camera camera;
    bool train = true;
    /// Azimuth on the arc, degrees, 0 at the arc center.
    double angle_deg = 0.0;
};

/// Point on the rig arc; world z is up and azimuth 0 looks along +y.
inline Vec3<double> rig_eye(const RigSpec& spec, double angle_deg) {
    const double a = angle_deg * std::numbers::pi / 180.0, e = spec.elevation_deg * std::numbers::pi / 180.0;
    return spec.target + spec.radius * Vec3<double>(std::cos(e) * std::sin(a), -std::cos(e) * std::cos(a), std::sin(e));
}

/// Training cameras evenly spaced from -span/2 to +span/2; test cameras at
/// -span/2 + (k + 1/2) span / n_test, which falls between training views.
inline std::vector<RigCamera> make_rig(const RigSpec& spec) {
    spec.validate();
    std::vector<RigCamera> out;
    auto add = [&](double angle, bool train) {
        RigCamera rc;
        rc.camera = look_at(rig_eye(spec, angle), spec.target, Vec3<double>::UnitZ(), spec.fov_deg, spec.width, spec.height);
        rc.train = train;
        rc.angle_deg = angle;
        out.push_back(rc);
    };
    for (int k = 0; k < spec.n_train; ++k)
        add(spec.n_train == 1 ? 0.0 : -0.5 * spec.span_deg + k * spec.span_deg / (spec.n_train - 1), true);
    for (int k = 0; k < spec.n_test; ++k) add(-0.5 * spec.span_deg + (k + 0.5) * spec.span_deg / spec.n_test, false);
    return out;
}

enum class PresetKind { kOrbit, kPulse, kLinear };

inline std::string to_string(PresetKind k) {
    switch (k) {
        case PresetKind::kOrbit: return "orbit";
        case PresetKind::kPulse: return "pulse";
        case PresetKind::kLinear: return "linear";
    }
    return "?";
}

inline PresetKind parse_preset(const std::string& s) {
    if (s == "orbit") return PresetKind::kOrbit;
    if (s == "pulse") return PresetKind::kPulse;
    if (s == "linear") return PresetKind::kLinear;
    fail(ErrorKind::kUsage, "unknown preset '" + s + "' (expected orbit, pulse or linear)");
}

struct ScenePreset {
    PresetKind kind = PresetKind::kOrbit;
    int objects = 3;
    int gaussians_per_object = 6;
    int segments = 8;
    int frames = 30;
    /// Static backdrop Gaussians spread on a ring below the objects.
    int backdrop = 12;
    /// Orbit sweep over the unit time range, degrees.
    double sweep_deg = 160.0;
    double path_radius = 0.8;
    double cluster_radius = 0.18;
    double scale_min = 0.05;
    double scale_max = 0.11;
    double opacity = 0.9;
    /// Half extent of the declared world box around the rig target.
    double world_half_extent = 1.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (objects < 0 || gaussians_per_object < 1 || segments < 1 || frames < 1 || backdrop < 0)
            fail(ErrorKind::kInvalidParameter, "scene preset counts out of range");
        if (!(scale_min > 0.0 && scale_max >= scale_min)) fail(ErrorKind::kInvalidParameter, "bad scale range");
        if (!(opacity > 0.0 && opacity < 1.0)) fail(ErrorKind::kInvalidParameter, "opacity must be in (0, 1)");
        if (!(world_half_extent > 0.0)) fail(ErrorKind::kInvalidParameter, "world extent must be positive");
    }
};

/// Builds a Gaussian whose slice at `temporal_center` has mean `center` and
/// covariance `cov3`, moving with `velocity` and temporal standard deviation `sigma_t`.
inline Gaussian4D<double> gaussian_from_motion(const Vec3<double>& center, const Mat3<double>& cov3, double sigma_t,
                                               const Vec3<double>& velocity, double temporal_center) {
    Mat4<double> sigma = Mat4<double>::Zero();
    const double stt = sigma_t * sigma_t;
    sigma.topLeftCorner<3, 3>() = cov3 + stt * velocity * velocity.transpose();
    sigma.block<3, 1>(0, 3) = stt * velocity;
    sigma.block<1, 3>(3, 0) = stt * velocity.transpose();
    sigma(3, 3) = stt;
    Eigen::SelfAdjointEigenSolver<Mat4<double>> es(sigma);
    Mat4<double> r = es.eigenvectors();
    if (r.determinant() < 0.0) r.col(0) = -r.col(0);
    Gaussian4D<double> g;
    std::tie(g.rot_left, g.rot_right) = decompose_rotation4(r);
    for (int i = 0; i < 4; ++i) g.log_scales[i] = 0.5 * std::log(es.eigenvalues()[i]);
    g.position = center;
    g.temporal_center = temporal_center;
    return g;
}

namespace detail {

inline Mat3<double> random_cov3(std::mt19937_64& rng, double smin, double smax) {
    std::uniform_real_distribution<double> us(smin, smax);
    std::normal_distribution<double> n01;
    Eigen::Quaterniond q(n01(rng), n01(rng), n01(rng), n01(rng));
    q.normalize();
    const Mat3<double> r = q.toRotationMatrix();
    const Vec3<double> s(us(rng), us(rng), us(rng));
    return r * s.cwiseAbs2().asDiagonal() * r.transpose();
}

/// Sets the constant (degree 0, Fourier 0) color term so the rendered color is `rgb`.
inline void set_base_color(Gaussian4D<double>& g, const ShConfig& sh, const Vec3<double>& rgb) {
    g.sh_coeffs.assign(sh.coeff_count(), 0.0);
    for (int c = 0; c < 3; ++c) g.sh_coeffs[sh.index(c, 0, 0, 0)] = (rgb[c] - 0.5) / kY00;
}

inline Vec3<double> random_color(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.15, 0.95);
    return {u(rng), u(rng), u(rng)};
}

inline Vec3<double> random_in_ball(std::mt19937_64& rng, double radius) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        const Vec3<double> p(u(rng), u(rng), u(rng));
        if (p.squaredNorm() <= 1.0) return radius * p;
    }
}

}  // namespace detail

inline ShConfig default_sh_config() { return ShConfig{1, 1, 1.0}; }

/// Ground-truth scene. Every stored value is f32-representable so the scene
/// survives a checkpoint round trip unchanged.
inline Scene<double> make_scene(const ScenePreset& preset, const Vec3<double>& target = Vec3<double>::Zero()) {
    preset.validate();
    std::mt19937_64 rng(preset.seed);
    Scene<double> scene;
    scene.sh = default_sh_config();
    const Vec3<double> half = Vec3<double>::Constant(preset.world_half_extent);
    scene.aabb = {target - half, target + half};
    const double opacity_logit = logit(preset.opacity);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    for (int b = 0; b < preset.backdrop; ++b) {
        const double a = 2.0 * std::numbers::pi * (b + 0.5) / preset.backdrop;
        const Vec3<double> c = target + Vec3<double>(1.1 * std::cos(a), 1.1 * std::sin(a), -0.6);
        Mat3<double> cov = detail::random_cov3(rng, 2.0 * preset.scale_min, 2.0 * preset.scale_max);
        Gaussian4D<double> g = gaussian_from_motion(c, cov, 2.0, Vec3<double>::Zero(), 0.5);
        g.opacity_logit = opacity_logit;
        detail::set_base_color(g, scene.sh, detail::random_color(rng));
        scene.gaussians.push_back(g);
    }

    const int segs = preset.kind == PresetKind::kLinear ? 1 : preset.segments;
    const double sigma_t = preset.kind == PresetKind::kLinear ? 1.0 : 1.0 / segs;
    const double sweep = preset.sweep_deg * std::numbers::pi / 180.0;
    for (int o = 0; o < preset.objects; ++o) {
        const double phase = 2.0 * std::numbers::pi * o / std::max(1, preset.objects);
        const double height = 0.35 * (o - 0.5 * (preset.objects - 1));
        const Vec3<double> color = detail::random_color(rng);
        // Linear objects cross the view along a fixed direction.
        const Vec3<double> lin_start = target + Vec3<double>(0.6 * std::cos(phase), 0.6 * std::sin(phase), height);
        const Vec3<double> lin_vel = Vec3<double>(-std::sin(phase), std::cos(phase), 0.15) * 0.5;
        for (int p = 0; p < preset.gaussians_per_object; ++p) {
            const Vec3<double> offset = detail::random_in_ball(rng, preset.cluster_radius);
            const Mat3<double> cov = detail::random_cov3(rng, preset.scale_min, preset.scale_max);
            const Vec3<double> tint = (color + 0.1 * Vec3<double>(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5))
                                          .cwiseMax(0.05)
                                          .cwiseMin(0.95);
            for (int s = 0; s < segs; ++s) {
                const double mu = (s + 0.5) / segs;
                Vec3<double> center, velocity = Vec3<double>::Zero();
                switch (preset.kind) {
                    case PresetKind::kOrbit: {
                        const double ang = phase + sweep * (mu - 0.5);
                        const Vec3<double> radial(std::cos(ang), std::sin(ang), 0.0);
                        const Vec3<double> tangent(-std::sin(ang), std::cos(ang), 0.0);
                        center = target + Vec3<double>(0, 0, height) + preset.path_radius * radial + offset;
                        velocity = preset.path_radius * sweep * tangent;
                        break;
                    }
                    case PresetKind::kPulse:
                        center = target + Vec3<double>(preset.path_radius * std::cos(phase),
                                                       preset.path_radius * std::sin(phase), height) +
                                 offset;
                        break;
                    case PresetKind::kLinear:
                        center = lin_start + lin_vel * (mu - 0.5) + offset;
                        velocity = lin_vel;
                        break;
                }
                Gaussian4D<double> g = gaussian_from_motion(center, cov, sigma_t, velocity, mu);
                g.opacity_logit = opacity_logit;
                detail::set_base_color(g, scene.sh, tint);
                if (preset.kind == PresetKind::kPulse)
                    for (int c = 0; c < 3; ++c)
                        g.sh_coeffs[scene.sh.index(c, 1, 0, 0)] = (u01(rng) - 0.5) * 0.6 / detail::kY00;
                scene.gaussians.push_back(g);
            }
        }
    }
    round_to_storage(scene);
    return scene;
}

/// Sample times k / (F - 1); a single frame sits at t = 0.
inline std::vector<double> frame_times(int frames) {
    std::vector<double> t(static_cast<std::size_t>(frames));
    for (int k = 0; k < frames; ++k) t[k] = frames == 1 ? 0.0 : static_cast<double>(k) / (frames - 1);
    return t;
}

struct FrameRecord {
    std::string path;  // relative to the dataset directory
    int camera = 0;
    double time = 0.0;
    bool train = true;

    bool operator==(const FrameRecord&) const = default;
};

struct Manifest {
    int version = kManifestVersion;
    std::uint64_t seed = 0;
    std::string preset;
    nlohmann::json preset_params = nlohmann::json::object();
    nlohmann::json rig_params = nlohmann::json::object();
    std::vector<Camera> cameras;
    std::vector<bool> camera_train;
    std::vector<FrameRecord> frames;
    Aabb<double> aabb;
    ShConfig sh;
    Vec3<double> background = Vec3<double>::Zero();
    std::string gt_scene = "gt_scene.ckpt";

    bool operator==(const Manifest&) const = default;
};

inline nlohmann::json camera_to_json(const Camera& c) {
    nlohmann::json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["near"] = c.near;
    j["far"] = c.far;
    std::vector<double> m;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 4; ++k) m.push_back(c.world_to_camera(r, k));
    j["world_to_camera"] = m;
    return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
    try {
        Camera c;
        c.fx = j.at("fx").get<double>();
        c.fy = j.at("fy").get<double>();
        c.cx = j.at("cx").get<double>();
        c.cy = j.at("cy").get<double>();
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        c.near = j.at("near").get<double>();
        c.far = j.at("far").get<double>();
        const auto m = j.at("world_to_camera").get<std::vector<double>>();
        if (m.size() != 12) fail(ErrorKind::kParse, "world_to_camera needs 12 values");
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 4; ++k) c.world_to_camera(r, k) = m[static_cast<std::size_t>(4 * r + k)];
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kParse, std::string("camera record: ") + e.what());
    }
}

inline std::string encode_manifest(const Manifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["preset"] = m.preset;
    j["preset_params"] = m.preset_params;
    j["rig"] = m.rig_params;
    j["aabb"] = {{"lo", {m.aabb.lo.x(), m.aabb.lo.y(), m.aabb.lo.z()}}, {"hi", {m.aabb.hi.x(), m.aabb.hi.y(), m.aabb.hi.z()}}};
    j["sh"] = {{"max_degree", m.sh.max_degree}, {"max_fourier", m.sh.max_fourier}, {"period", m.sh.period}};
    j["background"] = {m.background.x(), m.background.y(), m.background.z()};
    j["gt_scene"] = m.gt_scene;
    j["cameras"] = nlohmann::json::array();
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        nlohmann::json c = camera_to_json(m.cameras[i]);
        c["id"] = i;
        c["split"] = m.camera_train[i] ? "train" : "test";
        j["cameras"].push_back(c);
    }
    j["frames"] = nlohmann::json::array();
    for (const auto& f : m.frames)
        j["frames"].push_back({{"path", f.path}, {"camera", f.camera}, {"time", f.time}, {"split", f.train ? "train" : "test"}});
    return j.dump(2) + "\n";
}

inline Manifest decode_manifest(const std::string& text) {
    Manifest m;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        m.version = j.at("version").get<int>();
        if (m.version != kManifestVersion)
            fail(ErrorKind::kParse, "unsupported manifest version " + std::to_string(m.version));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.preset = j.at("preset").get<std::string>();
        m.preset_params = j.at("preset_params");
        m.rig_params = j.at("rig");
        const auto lo = j.at("aabb").at("lo").get<std::vector<double>>(), hi = j.at("aabb").at("hi").get<std::vector<double>>();
        if (lo.size() != 3 || hi.size() != 3) fail(ErrorKind::kParse, "aabb corners need 3 values");
        m.aabb = {Vec3<double>(lo[0], lo[1], lo[2]), Vec3<double>(hi[0], hi[1], hi[2])};
        m.sh.max_degree = j.at("sh").at("max_degree").get<int>();
        m.sh.max_fourier = j.at("sh").at("max_fourier").get<int>();
        m.sh.period = j.at("sh").at("period").get<double>();
        const auto bg = j.at("background").get<std::vector<double>>();
        if (bg.size() != 3) fail(ErrorKind::kParse, "background needs 3 values");
        m.background = Vec3<double>(bg[0], bg[1], bg[2]);
        m.gt_scene = j.at("gt_scene").get<std::string>();
        for (const auto& c : j.at("cameras")) {
            if (c.at("id").get<std::size_t>() != m.cameras.size()) fail(ErrorKind::kParse, "camera ids must be 0, 1, 2, ...");
            m.cameras.push_back(camera_from_json(c));
            m.camera_train.push_back(c.at("split").get<std::string>() == "train");
        }
        for (const auto& f : j.at("frames")) {
            FrameRecord r;
            r.path = f.at("path").get<std::string>();
            r.camera = f.at("camera").get<int>();
            r.time = f.at("time").get<double>();
            r.train = f.at("split").get<std::string>() == "train";
            if (r.camera < 0 || static_cast<std::size_t>(r.camera) >= m.cameras.size())
                fail(ErrorKind::kParse, "frame " + r.path + " references unknown camera " + std::to_string(r.camera));
            m.frames.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kParse, std::string("manifest: ") + e.what());
    }
    m.sh.validate();
    return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) { write_file_bytes(path, encode_manifest(m)); }

inline Manifest load_manifest(const std::filesystem::path& path) {
    try {
        return decode_manifest(read_file_bytes(path));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::kIo) throw;
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

inline nlohmann::json preset_to_json(const ScenePreset& p) {
    return {{"objects", p.objects},
            {"gaussians_per_object", p.gaussians_per_object},
            {"segments", p.segments},
            {"frames", p.frames},
            {"backdrop", p.backdrop},
            {"sweep_deg", p.sweep_deg},
            {"path_radius", p.path_radius},
            {"cluster_radius", p.cluster_radius},
            {"scale_min", p.scale_min},
            {"scale_max", p.scale_max},
            {"opacity", p.opacity},
            {"world_half_extent", p.world_half_extent}};
}

inline nlohmann::json rig_to_json(const RigSpec& r) {
    return {{"n_train", r.n_train},       {"n_test", r.n_test},
            {"span_deg", r.span_deg},     {"radius", r.radius},
            {"elevation_deg", r.elevation_deg}, {"target", {r.target.x(), r.target.y(), r.target.z()}},
            {"width", r.width},           {"height", r.height},
            {"fov_deg", r.fov_deg},       {"placement", "train: -span/2 + k*span/(n_train-1); test: -span/2 + (k+0.5)*span/n_test"}};
}

/// Loaded dataset: manifest plus decoded frames in manifest order.
struct Dataset {
    std::filesystem::path dir;
    Manifest manifest;
    std::vector<Image<double>> frames;

    std::vector<std::size_t> split(bool train) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < manifest.frames.size(); ++i)
            if (manifest.frames[i].train == train) out.push_back(i);
        return out;
    }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset d;
    d.dir = dir;
    d.manifest = load_manifest(dir / "manifest.json");
    d.frames.reserve(d.manifest.frames.size());
    for (const auto& f : d.manifest.frames) {
        Image<double> img = read_ppm(dir / f.path);
        const Camera& cam = d.manifest.cameras[static_cast<std::size_t>(f.camera)];
        if (img.width != cam.width || img.height != cam.height)
            fail(ErrorKind::kParse, (dir / f.path).string() + ": frame size does not match camera " + std::to_string(f.camera));
        d.frames.push_back(std::move(img));
    }
    return d;
}

/// Renders the ground-truth scene from every camera at every frame time and
/// writes frames, manifest and the scene checkpoint under `out_dir`.
inline Manifest build_dataset(const Scene<double>& scene, const ScenePreset& preset, const RigSpec& rig,
                              const std::filesystem::path& out_dir, int threads = 0,
                              const Vec3<double>& background = Vec3<double>::Zero()) {
    const std::vector<RigCamera> cams = make_rig(rig);
    const std::vector<double> times = frame_times(preset.frames);
    Manifest m;
    m.seed = preset.seed;
    m.preset = to_string(preset.kind);
    m.preset_params = preset_to_json(preset);
    m.rig_params = rig_to_json(rig);
    m.aabb = scene.aabb;
    m.sh = scene.sh;
    m.background = background;
    for (const auto& rc : cams) {
        m.cameras.push_back(rc.camera);
        m.camera_train.push_back(rc.train);
    }
    for (std::size_t c = 0; c < cams.size(); ++c)
        for (std::size_t k = 0; k < times.size(); ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "frames/cam%02zu_t%03zu.ppm", c, k);
            m.frames.push_back({name, static_cast<int>(c), times[k], cams[c].train});
        }

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "frames", ec);
    if (ec) fail(ErrorKind::kIo, (out_dir / "frames").string() + ": " + ec.message());

    RasterConfig cfg;
    cfg.threads = 1;
    const DecayContext<double> none = DecayContext<double>::none();
    std::vector<std::string> bytes(m.frames.size());
    parallel_for(m.frames.size(), threads, [&](std::size_t i) {
        const FrameRecord& f = m.frames[i];
        const ForwardState<double> st = render_forward(scene, none, m.cameras[static_cast<std::size_t>(f.camera)], f.time,
                                                       background, cfg);
        bytes[i] = encode_ppm(st.output.color);
    });
    for (std::size_t i = 0; i < m.frames.size(); ++i) write_file_bytes(out_dir / m.frames[i].path, bytes[i]);

    Checkpoint gt;
    gt.scene = scene;
    gt.origin.assign(scene.size(), 0.0);
    gt.net = DecayNet<double>::initialized(preset.seed);
    gt.config = nlohmann::json{{"source", "ground truth"}, {"preset", m.preset}, {"seed", preset.seed}}.dump();
    save_checkpoint(out_dir / m.gt_scene, gt);
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

}  // namespace fc4d
