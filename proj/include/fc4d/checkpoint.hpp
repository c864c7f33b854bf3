#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fc4d/decaynet.hpp"
#include "fc4d/error.hpp"
#include "fc4d/image.hpp"
#include "fc4d/scene.hpp"

namespace fc4d {

inline constexpr char kCheckpointMagic[4] = {'4', 'C', '4', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or evaluate a trained model.
///
/// Binary layout, all integers u32 and all reals f32, little-endian:
///
///     magic "4C4D" | version
///     gaussian count | sh degree | fourier order | period (f32) | aabb lo[3] hi[3] (f32)
///     arrays, each as (u32 length, length x f32):
///         position (3N), temporal_center (N), rot_left (4N), rot_right (4N),
///         log_scales (4N), opacity_logit (N), sh_coeffs (N x K), origin (N),
///         decay_net (5057)
///     config echo (u32 length, UTF-8 JSON) | rng state (u32 length, bytes)
///
/// Values are held as doubles in memory and narrowed to f32 on save, so a
/// save -> load -> save cycle is byte-identical.
struct Checkpoint {
    Scene<double> scene;
    DecayNet<double> net;
    /// Per Gaussian: 0 seeded from scene geometry, 1 random distractor.
    std::vector<double> origin;
    std::string config;
    std::string rng_state;

    bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void array(std::span<const double> values) {
        u32(static_cast<std::uint32_t>(values.size()));
        for (double v : values) f32(v);
    }
    void blob(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }

    void need(std::size_t n, const std::string& what) const {
        if (bytes_.size() - pos_ < n)
            fail(ErrorKind::kCorruptCheckpoint, "truncated " + what + " at offset " + std::to_string(pos_) + " (need " +
                                                    std::to_string(n) + " bytes, have " +
                                                    std::to_string(bytes_.size() - pos_) + ")");
    }
    std::uint32_t u32(const std::string& what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f32(const std::string& what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
    std::vector<double> array(const std::string& what, std::size_t expected) {
        const std::size_t at = pos_;
        const std::uint32_t n = u32(what + " length");
        if (n != expected)
            fail(ErrorKind::kCorruptCheckpoint, what + " length " + std::to_string(n) + " != expected " +
                                                    std::to_string(expected) + " at offset " + std::to_string(at));
        need(static_cast<std::size_t>(n) * 4, what);
        std::vector<double> out(n);
        for (auto& v : out) v = f32(what);
        return out;
    }
    std::string blob(const std::string& what) {
        const std::uint32_t n = u32(what + " length");
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n, const std::string& what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    const Scene<double>& sc = ck.scene;
    sc.validate();
    const std::size_t n = sc.size();
    if (ck.origin.size() != n) fail(ErrorKind::kUsage, "checkpoint origin tags do not match the Gaussian count");
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(sc.sh.max_degree));
    w.u32(static_cast<std::uint32_t>(sc.sh.max_fourier));
    w.f32(sc.sh.period);
    for (int i = 0; i < 3; ++i) w.f32(sc.aabb.lo[i]);
    for (int i = 0; i < 3; ++i) w.f32(sc.aabb.hi[i]);

    std::vector<double> buf;
    auto emit = [&](auto&& get, std::size_t per) {
        buf.clear();
        buf.reserve(n * per);
        for (const auto& g : sc.gaussians) get(g, buf);
        w.array(buf);
    };
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.insert(b.end(), g.position.data(), g.position.data() + 3); }, 3);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.push_back(g.temporal_center); }, 1);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.insert(b.end(), g.rot_left.data(), g.rot_left.data() + 4); }, 4);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.insert(b.end(), g.rot_right.data(), g.rot_right.data() + 4); }, 4);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.insert(b.end(), g.log_scales.data(), g.log_scales.data() + 4); }, 4);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.push_back(g.opacity_logit); }, 1);
    emit([](const Gaussian4D<double>& g, std::vector<double>& b) { b.insert(b.end(), g.sh_coeffs.begin(), g.sh_coeffs.end()); },
         sc.sh.coeff_count());
    w.array(ck.origin);
    w.array(ck.net.params());
    w.blob(ck.config);
    w.blob(ck.rng_state);
    return w.take();
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::ByteReader r(bytes);
    if (r.raw(4, "magic") != std::string(kCheckpointMagic, 4))
        fail(ErrorKind::kCorruptCheckpoint, "bad magic at offset 0");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        fail(ErrorKind::kUnsupportedVersion, "checkpoint version " + std::to_string(version) + " (supported: " +
                                                 std::to_string(kCheckpointVersion) + ")");
    Checkpoint ck;
    const std::size_t n = r.u32("gaussian count");
    ck.scene.sh.max_degree = static_cast<int>(r.u32("sh degree"));
    ck.scene.sh.max_fourier = static_cast<int>(r.u32("fourier order"));
    ck.scene.sh.period = r.f32("period");
    try {
        ck.scene.sh.validate();
    } catch (const Error& e) {
        fail(ErrorKind::kCorruptCheckpoint, std::string("header: ") + e.what());
    }
    for (int i = 0; i < 3; ++i) ck.scene.aabb.lo[i] = r.f32("aabb");
    for (int i = 0; i < 3; ++i) ck.scene.aabb.hi[i] = r.f32("aabb");

    const std::size_t k = ck.scene.sh.coeff_count();
    const auto pos = r.array("position", 3 * n);
    const auto tc = r.array("temporal_center", n);
    const auto ql = r.array("rot_left", 4 * n);
    const auto qr = r.array("rot_right", 4 * n);
    const auto ls = r.array("log_scales", 4 * n);
    const auto op = r.array("opacity_logit", n);
    const auto sh = r.array("sh_coeffs", k * n);
    ck.origin = r.array("origin", n);
    const auto net = r.array("decay_net", DecayNet<double>::kParamCount);
    ck.config = r.blob("config echo");
    ck.rng_state = r.blob("rng state");
    if (!r.at_end()) fail(ErrorKind::kCorruptCheckpoint, "trailing bytes at offset " + std::to_string(r.offset()));

    ck.scene.gaussians.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Gaussian4D<double>& g = ck.scene.gaussians[i];
        g.position = Vec3<double>(pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]);
        g.temporal_center = tc[i];
        g.rot_left = Quat<double>(ql[4 * i], ql[4 * i + 1], ql[4 * i + 2], ql[4 * i + 3]);
        g.rot_right = Quat<double>(qr[4 * i], qr[4 * i + 1], qr[4 * i + 2], qr[4 * i + 3]);
        g.log_scales = Vec4<double>(ls[4 * i], ls[4 * i + 1], ls[4 * i + 2], ls[4 * i + 3]);
        g.opacity_logit = op[i];
        g.sh_coeffs.assign(sh.begin() + static_cast<std::ptrdiff_t>(k * i), sh.begin() + static_cast<std::ptrdiff_t>(k * (i + 1)));
    }
    std::copy(net.begin(), net.end(), ck.net.params().begin());
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file_bytes(path));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::kIo) throw;
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

/// Rounds every stored real to the nearest f32 so the value survives a checkpoint round trip.
inline void round_to_storage(Scene<double>& scene) {
    for (auto& g : scene.gaussians)
        for_each_param(g, [](ParamGroup, double& p) { p = static_cast<double>(static_cast<float>(p)); });
    for (int i = 0; i < 3; ++i) {
        scene.aabb.lo[i] = static_cast<double>(static_cast<float>(scene.aabb.lo[i]));
        scene.aabb.hi[i] = static_cast<double>(static_cast<float>(scene.aabb.hi[i]));
    }
}

}  // namespace fc4d
