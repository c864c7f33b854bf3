#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include "fc4d/ablation.hpp"
#include "fc4d/checkpoint.hpp"
#include "fc4d/evaluate.hpp"
#include "fc4d/gradcheck.hpp"
#include "fc4d/image.hpp"
#include "fc4d/raster.hpp"
#include "fc4d/scenegen.hpp"
#include "fc4d/trainer.hpp"

namespace fs = std::filesystem;
using namespace fc4d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitVerification = 4;

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::kUsage:
        case ErrorKind::kInvalidParameter: return kExitUsage;
        default: return kExitData;
    }
}

TrainConfig load_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kParse, path + ": " + e.what());
    }
    try {
        return TrainConfig::from_json(j);
    } catch (const Error& e) {
        throw Error(e.kind(), path + ": " + e.what());
    }
}

Scene<double> load_gt_scene(const Dataset& data) { return load_checkpoint(data.dir / data.manifest.gt_scene).scene; }

/// Training settings echoed into a checkpoint; absent for ground-truth scenes.
struct CheckpointOrigin {
    TrainConfig cfg;
    std::uint64_t iterations_done = 0;
    std::string data_dir;
    bool trained = false;
};

CheckpointOrigin checkpoint_origin(const Checkpoint& ck) {
    CheckpointOrigin o;
    nlohmann::json j = nlohmann::json::parse(ck.config, nullptr, false);
    if (!j.is_object()) return o;
    if (j.contains("data_dir") && j["data_dir"].is_string()) o.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("iterations_done")) {
        o.iterations_done = j["iterations_done"].get<std::uint64_t>();
        j.erase("iterations_done");
        j.erase("data_dir");
        o.cfg = TrainConfig::from_json(j);
        o.trained = true;
    }
    return o;
}

DecayContext<double> checkpoint_decay(const CheckpointOrigin& o, const DecayNet<double>& net) {
    if (!o.trained) return DecayContext<double>::none();
    return eval_decay(o.cfg, net, o.iterations_done);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            fail(ErrorKind::kUsage, "bad seed list '" + s + "'");
        }
    }
    if (out.empty()) fail(ErrorKind::kUsage, "empty seed list");
    return out;
}

Image<double> depth_image(const RenderOutput<double>& out) {
    double max_depth = 0.0;
    for (std::size_t i = 0; i < out.depth.data.size(); ++i)
        if (out.alpha.data[i] > 0.0) max_depth = std::max(max_depth, out.depth.data[i]);
    Image<double> img(out.depth.width, out.depth.height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = max_depth > 0.0 && out.alpha.at(x, y) > 0.0 ? out.depth.at(x, y) / max_depth : 0.0;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
        }
    return img;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D Gaussian splatting with learned opacity decay"};
    app.require_subcommand(1);

    // gen-scene
    auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic dataset");
    std::string preset_name = "orbit";
    RigSpec rig;
    ScenePreset preset;
    std::string gen_out;
    int threads = 0;
    gen->add_option("--preset", preset_name, "orbit, pulse or linear")->check(CLI::IsMember({"orbit", "pulse", "linear"}));
    gen->add_option("--cams", rig.n_train, "training cameras")->capture_default_str();
    gen->add_option("--test-cams", rig.n_test, "held-out cameras")->capture_default_str();
    gen->add_option("--span", rig.span_deg, "arc span in degrees")->capture_default_str();
    gen->add_option("--radius", rig.radius, "rig radius")->capture_default_str();
    gen->add_option("--fov", rig.fov_deg, "field of view in degrees")->capture_default_str();
    gen->add_option("--frames", preset.frames, "frames per camera")->capture_default_str();
    int size = 96;
    gen->add_option("--size", size, "image width and height")->capture_default_str();
    gen->add_option("--seed", preset.seed, "random seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--threads", threads, "worker threads (0 = all cores)");

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a dataset");
    std::string data_dir, config_path, decay_name, ckpt_out, log_path;
    std::uint64_t seed_override = 0;
    long long iterations_override = -1;
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--config", config_path, "JSON training config");
    tr->add_option("--decay", decay_name, "none, constant, pow, exp or neural")
        ->check(CLI::IsMember({"none", "constant", "pow", "exp", "neural"}));
    tr->add_option("--out", ckpt_out, "checkpoint path")->required();
    tr->add_option("--log", log_path, "metrics log (default: <out>.log.jsonl)");
    auto* seed_opt = tr->add_option("--seed", seed_override, "override rng_seed");
    tr->add_option("--iterations", iterations_override, "override iterations");
    tr->add_option("--threads", threads, "worker threads (0 = all cores)");

    // render
    auto* rd = app.add_subcommand("render", "Render a checkpoint");
    std::string ckpt_path, pose_path, img_out, depth_out, render_data;
    int camera_id = -1;
    double t_query = 0.0;
    rd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    auto* cam_opt = rd->add_option("--camera-id", camera_id, "camera index in the dataset manifest");
    auto* pose_opt = rd->add_option("--pose", pose_path, "JSON camera record");
    cam_opt->excludes(pose_opt);
    rd->add_option("--data", render_data, "dataset directory (default: the one recorded in the checkpoint)");
    rd->add_option("--time", t_query, "query time in [0, 1]")->required();
    rd->add_option("--out", img_out, "output PPM")->required();
    rd->add_option("--depth", depth_out, "optional depth PPM, normalized by the largest depth");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against a dataset split");
    std::string split = "test", report_path;
    bool dssim_halved = true;
    ev->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
    ev->add_option("--report", report_path, "CSV report path")->required();
    ev->add_option("--dssim-halved", dssim_halved, "DSSIM as (1 - SSIM) / 2")->capture_default_str();
    ev->add_option("--threads", threads, "worker threads (0 = all cores)");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train every decay variant and write one report per variant");
    std::string ablate_out, seeds_text = "0,1,2";
    ab->add_option("--data", data_dir, "dataset directory")->required();
    ab->add_option("--config", config_path, "JSON training config");
    ab->add_option("--out", ablate_out, "report directory")->required();
    ab->add_option("--seeds", seeds_text, "comma-separated seeds")->capture_default_str();
    ab->add_option("--iterations", iterations_override, "override iterations");
    ab->add_option("--threads", threads, "worker threads (0 = all cores)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    GradcheckOptions gopt;
    gc->add_option("--seed", gopt.seed, "random seed")->capture_default_str();
    gc->add_option("--rel-tol", gopt.rel_tol, "relative tolerance")->capture_default_str();
    gc->add_option("--step", gopt.step, "finite-difference step")->capture_default_str();
    gc->add_option("--abs-floor", gopt.abs_floor, "absolute error always accepted")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) {
            preset.kind = parse_preset(preset_name);
            rig.width = rig.height = size;
            const Scene<double> scene = make_scene(preset, rig.target);
            const Manifest m = build_dataset(scene, preset, rig, gen_out, threads);
            std::printf("wrote %zu frames from %zu cameras (%zu Gaussians) to %s\n", m.frames.size(), m.cameras.size(),
                        scene.size(), gen_out.c_str());
            return kExitOk;
        }

        if (*tr) {
            TrainConfig cfg = load_config(config_path);
            if (!decay_name.empty()) cfg.decay_variant = parse_decay_variant(decay_name);
            if (*seed_opt) cfg.rng_seed = seed_override;
            if (iterations_override >= 0) cfg.iterations = static_cast<std::uint64_t>(iterations_override);
            if (threads != 0) cfg.threads = threads;
            cfg.validate();
            const Dataset data = load_dataset(data_dir);
            const Scene<double> gt = load_gt_scene(data);
            std::string log;
            TrainHooks hooks;
            hooks.on_eval = [](std::uint64_t it, const MetricReport& m) {
                std::printf("iter %llu  test psnr %.3f  dssim1 %.5f  dssim2 %.5f\n", static_cast<unsigned long long>(it), m.psnr,
                            m.dssim1, m.dssim2);
                std::fflush(stdout);
            };
            const TrainState st = train(data, gt, cfg, &log, hooks);
            save_checkpoint(ckpt_out, make_checkpoint(st, cfg, fs::absolute(data_dir).string()));
            write_file_bytes(log_path.empty() ? ckpt_out + ".log.jsonl" : log_path, log);
            std::printf("trained %llu iterations, %zu Gaussians -> %s\n", static_cast<unsigned long long>(st.iteration),
                        st.scene.size(), ckpt_out.c_str());
            return kExitOk;
        }

        if (*rd) {
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const CheckpointOrigin origin = checkpoint_origin(ck);
            Camera cam;
            Vec3<double> background = Vec3<double>::Zero();
            const std::string dir = render_data.empty() ? origin.data_dir : render_data;
            if (*cam_opt) {
                if (dir.empty()) fail(ErrorKind::kUsage, "--camera-id needs --data (the checkpoint records no dataset)");
                const Manifest m = load_manifest(fs::path(dir) / "manifest.json");
                if (camera_id < 0 || static_cast<std::size_t>(camera_id) >= m.cameras.size())
                    fail(ErrorKind::kUsage, "camera id " + std::to_string(camera_id) + " out of range (dataset has " +
                                                std::to_string(m.cameras.size()) + ")");
                cam = m.cameras[static_cast<std::size_t>(camera_id)];
                background = m.background;
            } else if (*pose_opt) {
                try {
                    cam = camera_from_json(nlohmann::json::parse(read_file_bytes(pose_path)));
                } catch (const nlohmann::json::exception& e) {
                    fail(ErrorKind::kParse, pose_path + ": " + e.what());
                }
            } else {
                fail(ErrorKind::kUsage, "render needs --camera-id or --pose");
            }
            RasterConfig rcfg;
            rcfg.eps_t = origin.cfg.eps_t;
            const ForwardState<double> st =
                render_forward(ck.scene, checkpoint_decay(origin, ck.net), cam, t_query, background, rcfg);
            write_ppm(img_out, st.output.color);
            if (!depth_out.empty()) write_ppm(depth_out, depth_image(st.output));
            return kExitOk;
        }

        if (*ev) {
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const CheckpointOrigin origin = checkpoint_origin(ck);
            const Dataset data = load_dataset(data_dir);
            RasterConfig rcfg;
            rcfg.eps_t = origin.cfg.eps_t;
            rcfg.threads = threads;
            const MetricReport rep =
                evaluate_split(ck.scene, checkpoint_decay(origin, ck.net), data, split == "train", rcfg, dssim_halved);
            write_file_bytes(report_path, rep.to_csv());
            std::printf("%s split: %zu frames  psnr %.4f  dssim1 %.6f  dssim2 %.6f\n", split.c_str(), rep.rows.size(), rep.psnr,
                        rep.dssim1, rep.dssim2);
            return kExitOk;
        }

        if (*ab) {
            TrainConfig cfg = load_config(config_path);
            if (iterations_override >= 0) cfg.iterations = static_cast<std::uint64_t>(iterations_override);
            if (threads != 0) cfg.threads = threads;
            cfg.validate();
            const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
            const Dataset data = load_dataset(data_dir);
            const Scene<double> gt = load_gt_scene(data);
            std::error_code ec;
            fs::create_directories(ablate_out, ec);
            if (ec) fail(ErrorKind::kIo, ablate_out + ": " + ec.message());
            const auto results = run_ablation(data, gt, cfg, seeds, [](const AblationVariant& v, const AblationRun& r) {
                std::printf("%-13s seed %llu  psnr %.3f  dssim1 %.5f  distractors %zu\n", v.name.c_str(),
                            static_cast<unsigned long long>(r.seed), r.psnr, r.dssim1, r.distractors_alive);
                std::fflush(stdout);
            });
            for (const auto& r : results) write_file_bytes(fs::path(ablate_out) / (r.variant.name + ".csv"), r.to_csv());
            return kExitOk;
        }

        if (*gc) {
            const GradcheckReport rep = run_gradcheck(gopt);
            for (const auto& c : rep.classes)
                std::printf("%-16s n=%-5zu max_rel=%.3e max_abs=%.3e %s\n", c.name.c_str(), c.count, c.max_rel, c.max_abs,
                            c.failures == 0 ? "ok" : "FAIL");
            std::printf("max relative error %.3e -> %s\n", rep.max_rel(), rep.pass() ? "pass" : "FAIL");
            return rep.pass() ? kExitOk : kExitVerification;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
