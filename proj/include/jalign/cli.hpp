#pragma once

// Command implementations behind the `jalign` executable. Each command reads its
// inputs, runs the library and writes its declared outputs into RunConfig::out_dir.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jalign/error.hpp"
#include "jalign/eval.hpp"
#include "jalign/formats.hpp"
#include "jalign/geometry.hpp"
#include "jalign/image_io.hpp"
#include "jalign/network.hpp"
#include "jalign/synthetic.hpp"
#include "jalign/trainer.hpp"

namespace jalign::cli {

namespace fs = std::filesystem;

/// Process exit codes per error class.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Io: return 2;
        case ErrorKind::Config: return 3;
        case ErrorKind::InsufficientTexture: return 4;
        case ErrorKind::InsufficientOverlap: return 5;
        case ErrorKind::Diverged: return 6;
        default: return 1;
    }
}

struct RunConfig {
    TrainConfig train;
    std::string image1;
    std::string image2;
    std::string init_h;     // align: initial homography (identity when empty)
    std::string true_h;     // synth input / eval, sweep ground truth
    std::string est_h;      // eval: estimated homography (defaults to the run's)
    std::string keypoints;  // eval, export: keypoint file
    std::string run_dir;    // eval, export: an align output directory
    std::string weights;    // eval: weight file (overrides run_dir)
    std::string out_dir = ".";
    double radius = 100.0;
    double step = 25.0;
    double perturb = 0.0;
    std::string descriptor = "learned";
    int eval_keypoints = 2000;
    int texture_width = 0;   // synth: procedural source when > 0
    int texture_height = 0;
    int texture_channels = 1;
    double gamma = 1.0;
    bool invert = false;
    double noise = 0.0;
    bool verbose = false;
};

inline void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw Error(ErrorKind::Io, std::string("missing ") + what + " path");
    if (!fs::is_regular_file(path)) throw Error(ErrorKind::Io, std::string(what) + " not found: " + path);
}

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::Io, "cannot create output directory " + dir);
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

inline std::string image_name(const std::string& stem, int channels) {
    return stem + (channels == 1 ? ".pgm" : ".ppm");
}

inline json image_info(const std::string& path, const Image& img) {
    return json{{"path", path}, {"width", img.width}, {"height", img.height}, {"channels", img.channels}};
}

/// A flat input image has no texture to train on.
inline Image normalize_input(const Image& raw, const std::string& path) {
    try {
        return normalize_image(raw);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ZeroVariance) throw Error(ErrorKind::InsufficientTexture, path + " is constant");
        throw;
    }
}

inline json psi_to_json(const PsiParams& p) { return json(p.psi); }

inline std::vector<double> psi_from_json(const json& j) { return j.get<std::vector<double>>(); }

// ---------------------------------------------------------------------------------------
// align

/// Runs coarse-to-fine joint alignment. Writes report.json, weights.bin, keypoints.txt and
/// an overlay image (equal-weight average of I and I' mapped back through H_est).
inline json cmd_align(const RunConfig& cfg) {
    cfg.train.validate();
    require_file(cfg.image1, "image1");
    require_file(cfg.image2, "image2");
    if (!cfg.init_h.empty()) require_file(cfg.init_h, "initial homography");

    const Image raw1 = read_pnm(cfg.image1);
    const Image raw2 = read_pnm(cfg.image2);
    if (raw1.channels != raw2.channels) throw Error(ErrorKind::Io, "images have different channel counts");
    const Image img1 = normalize_input(raw1, cfg.image1);
    const Image img2 = normalize_input(raw2, cfg.image2);
    const Homography H0 = cfg.init_h.empty() ? Homography() : load_homography(cfg.init_h);
    const PsiParams psi0 = homography_to_psi(H0, img1.width, img1.height, cfg.train.alpha);

    AlignOptions opts;
    if (cfg.verbose)
        opts.on_iteration = [](int level, int it, double loss, const PsiParams&) {
            if (it % 100 == 0) std::cerr << "level " << level << " iter " << it << " loss " << loss << "\n";
        };
    const auto t0 = std::chrono::steady_clock::now();
    const AlignResult r = align(img1, img2, psi0, cfg.train, opts);
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto exported = export_correspondences(r.psi, r.keypoints, bounds_of(img2));

    json report;
    report["homography"] = r.homography.row_major();
    report["psi"] = psi_to_json(r.psi);
    report["image1"] = image_info(cfg.image1, img1);
    report["image2"] = image_info(cfg.image2, img2);
    report["init_homography"] = H0.row_major();
    report["levels"] = json::array();
    json level_times = json::array();
    for (const auto& l : r.levels) {
        report["levels"].push_back({{"index", l.index},
                                    {"width", l.width},
                                    {"height", l.height},
                                    {"psi_init", psi_to_json(l.psi_init)},
                                    {"psi_final", psi_to_json(l.psi_final)},
                                    {"loss_trace", l.loss_trace}});
        level_times.push_back(l.seconds);
    }
    report["exportable_pairs"] = exported.size();
    report["config"] = config_to_json(cfg.train);
    report["seed"] = cfg.train.seed;
    report["timings"] = {{"total_seconds", total}, {"level_seconds", level_times}};

    ensure_out_dir(cfg.out_dir);
    save_weights(out_path(cfg, "weights.bin"), r.weights);
    save_keypoints(out_path(cfg, "keypoints.txt"), r.keypoints);
    Image overlay = warp_image(raw2, r.homography.inverse(), raw1.width, raw1.height);
    for (std::size_t i = 0; i < overlay.data.size(); ++i) overlay.data[i] = 0.5 * (overlay.data[i] + raw1.data[i]);
    write_pnm(out_path(cfg, image_name("overlay", raw1.channels)), overlay);
    write_json_file(out_path(cfg, "report.json"), report);
    return report;
}

// ---------------------------------------------------------------------------------------
// synth

/// Writes image1, image2 = warp(image1; H_true) with optional photometric changes,
/// h_true.json and h_init.json (H_true translated by perturb * max(w, h) pixels).
inline json cmd_synth(const RunConfig& cfg) {
    Image src;
    if (cfg.texture_width > 0 && cfg.texture_height > 0) {
        src = make_texture(cfg.texture_width, cfg.texture_height, cfg.train.seed, cfg.texture_channels);
    } else {
        require_file(cfg.image1, "source image");
        src = read_pnm(cfg.image1);
    }
    if (!cfg.true_h.empty()) require_file(cfg.true_h, "true homography");
    if (!(cfg.perturb >= 0.0)) throw Error(ErrorKind::Config, "perturb must be >= 0");
    const Homography H_true = cfg.true_h.empty() ? Homography() : load_homography(cfg.true_h);

    // quantize the source first so image1 on disk is exactly what image2 was warped from
    for (double& v : src.data) v = to_byte(v) / 255.0;
    Image warped = warp_image(src, H_true);
    if (cfg.gamma != 1.0 || cfg.invert) warped = apply_gamma(warped, cfg.gamma, cfg.invert);
    if (cfg.noise > 0.0) warped = add_noise(warped, cfg.noise, cfg.train.seed ^ 0x9e3779b97f4a7c15ULL);
    const Homography H_init =
        perturb_translation(H_true, cfg.perturb, src.width, src.height, cfg.train.seed + 0x51ed27ULL);

    ensure_out_dir(cfg.out_dir);
    const std::string p1 = out_path(cfg, image_name("image1", src.channels));
    const std::string p2 = out_path(cfg, image_name("image2", src.channels));
    write_pnm(p1, src);
    write_pnm(p2, warped);
    save_homography(out_path(cfg, "h_true.json"), H_true);
    save_homography(out_path(cfg, "h_init.json"), H_init);
    json info{{"image1", p1},
              {"image2", p2},
              {"h_true", H_true.row_major()},
              {"h_init", H_init.row_major()},
              {"perturb", cfg.perturb},
              {"seed", cfg.train.seed}};
    write_json_file(out_path(cfg, "synth.json"), info);
    return info;
}

// ---------------------------------------------------------------------------------------
// eval

inline DescriptorKind parse_descriptor(const std::string& s) {
    if (s == "learned") return DescriptorKind::Learned;
    if (s == "raw") return DescriptorKind::RawPatch;
    if (s == "center") return DescriptorKind::CenterPixel;
    throw Error(ErrorKind::Config, "unknown descriptor '" + s + "' (expected learned, raw or center)");
}

/// Matches descriptors of true correspondences (under H_true) and reports AP, plus the
/// homography error of an estimate when one is available.
inline json cmd_eval(const RunConfig& cfg) {
    require_file(cfg.image1, "image1");
    require_file(cfg.image2, "image2");
    require_file(cfg.true_h, "true homography");
    const DescriptorKind kind = parse_descriptor(cfg.descriptor);

    const Image img1 = normalize_input(read_pnm(cfg.image1), cfg.image1);
    const Image img2 = normalize_input(read_pnm(cfg.image2), cfg.image2);
    const Homography H_true = load_homography(cfg.true_h);

    std::optional<NetworkWeights> weights;
    std::optional<Homography> H_est;
    TrainConfig tcfg = cfg.train;
    if (!cfg.run_dir.empty()) {
        const std::string rep = (fs::path(cfg.run_dir) / "report.json").string();
        require_file(rep, "run report");
        const json r = read_json_file(rep);
        H_est = homography_from_json(json{{"h", r.at("homography")}});
        apply_config_json(r.at("config"), tcfg);
        if (kind == DescriptorKind::Learned) weights = load_weights((fs::path(cfg.run_dir) / "weights.bin").string());
    }
    if (!cfg.weights.empty()) {
        require_file(cfg.weights, "weights");
        weights = load_weights(cfg.weights);
    }
    if (!cfg.est_h.empty()) {
        require_file(cfg.est_h, "estimated homography");
        H_est = load_homography(cfg.est_h);
    }
    if (kind == DescriptorKind::Learned && !weights)
        throw Error(ErrorKind::Config, "learned descriptor needs --run or --weights");
    if (weights && weights->channels != img1.channels)
        throw Error(ErrorKind::Config, "weights channel count does not match the images");

    std::vector<Keypoint> kps;
    if (!cfg.keypoints.empty()) {
        require_file(cfg.keypoints, "keypoints");
        kps = load_keypoints(cfg.keypoints);
    } else {
        TrainConfig kcfg = tcfg;
        kcfg.keypoints_per_image = cfg.eval_keypoints;
        Rng rng(tcfg.seed);
        kps = sample_keypoints(img1, kcfg, rng);
    }

    const auto ev = evaluate_descriptor(img1, img2, H_true, kps, kind, weights ? &*weights : nullptr,
                                        tcfg.magnification);
    json out{{"descriptor", cfg.descriptor},
             {"ap", ev.ap},
             {"pairs", ev.pairs},
             {"keypoints", kps.size()},
             {"correct", std::count(ev.matches.correct.begin(), ev.matches.correct.end(), true)}};
    if (kind == DescriptorKind::CenterPixel) {
        const auto pairs = export_correspondences(homography_to_psi(H_true, img1.width, img1.height), kps,
                                                  bounds_of(img2));
        std::vector<Keypoint> k1;
        for (const auto& p : pairs) k1.push_back(p.first);
        auto centers = compute_descriptors(img1, k1, kind, nullptr, Branch::First, tcfg.magnification);
        std::vector<std::vector<double>> vals;
        for (const auto& d : centers) vals.emplace_back(d.data(), d.data() + d.size());
        std::sort(vals.begin(), vals.end());
        out["center_values_unique"] = std::adjacent_find(vals.begin(), vals.end()) == vals.end();
    }
    if (H_est) {
        std::vector<PointMatch> matches;
        const auto pairs = export_correspondences(homography_to_psi(H_true, img1.width, img1.height), kps,
                                                  bounds_of(img2));
        for (const auto& p : pairs) matches.push_back({{p.first.x, p.first.y}, {p.second.x, p.second.y}});
        const auto he = homography_error(*H_est, matches, img1.width, img1.height);
        out["homography_error"] = he.value;
        out["homography_error_excluded"] = he.excluded;
        out["estimated_homography"] = H_est->row_major();
    }
    ensure_out_dir(cfg.out_dir);
    write_json_file(out_path(cfg, "eval.json"), out);
    return out;
}

// ---------------------------------------------------------------------------------------
// sweep

/// Loss-surface sweep over translational offsets of the true homography. Writes
/// sweep.json and heatmap.pgm (one pixel per cell, min-max scaled, darker = lower loss).
inline json cmd_sweep(const RunConfig& cfg) {
    require_file(cfg.image1, "image1");
    require_file(cfg.image2, "image2");
    require_file(cfg.true_h, "true homography");
    cfg.train.validate();
    const Image img1 = normalize_input(read_pnm(cfg.image1), cfg.image1);
    const Image img2 = normalize_input(read_pnm(cfg.image2), cfg.image2);
    const Homography H_true = load_homography(cfg.true_h);
    const auto offsets = sweep_offsets(cfg.radius, cfg.step);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(offsets.size()))));

    const SweepGrid grid = loss_surface_sweep(
        img1, img2, homography_to_psi(H_true, img1.width, img1.height, cfg.train.alpha), offsets, cfg.train);

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : grid.cells)
        if (!c.error) {
            lo = std::min(lo, c.value);
            hi = std::max(hi, c.value);
        }
    Image heat(side, side, 1);
    json cells = json::array();
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& c = grid.cells[i];
        json jc{{"dx", c.dx}, {"dy", c.dy}};
        if (c.error) {
            jc["value"] = nullptr;
            jc["error"] = *c.error;
            heat.data[i] = 1.0;
        } else {
            jc["value"] = c.value;
            heat.data[i] = hi > lo ? (c.value - lo) / (hi - lo) : 0.0;
        }
        cells.push_back(jc);
    }
    json out{{"radius", cfg.radius}, {"step", cfg.step}, {"nx", side}, {"ny", side},
             {"cells", cells},       {"config", config_to_json(cfg.train)}};
    ensure_out_dir(cfg.out_dir);
    write_json_file(out_path(cfg, "sweep.json"), out);
    write_pnm(out_path(cfg, "heatmap.pgm"), heat);
    return out;
}

// ---------------------------------------------------------------------------------------
// export

/// Writes correspondences.txt for a completed align run: every keypoint whose warp under
/// the estimated homography lands inside I'.
inline json cmd_export(const RunConfig& cfg) {
    if (cfg.run_dir.empty()) throw Error(ErrorKind::Config, "export needs --run DIR");
    const std::string rep = (fs::path(cfg.run_dir) / "report.json").string();
    require_file(rep, "run report");
    const json r = read_json_file(rep);
    const std::string kp_path =
        cfg.keypoints.empty() ? (fs::path(cfg.run_dir) / "keypoints.txt").string() : cfg.keypoints;
    require_file(kp_path, "keypoints");
    const auto kps = load_keypoints(kp_path);

    PsiParams psi;
    const auto pv = psi_from_json(r.at("psi"));
    if (pv.size() != 8) throw Error(ErrorKind::Io, "report psi must have 8 entries");
    std::copy(pv.begin(), pv.end(), psi.psi.begin());
    psi.w = r.at("image1").at("width").get<double>();
    psi.h = r.at("image1").at("height").get<double>();
    psi.alpha = r.at("config").at("alpha").get<double>();
    const ImageBounds b2{r.at("image2").at("width").get<int>(), r.at("image2").at("height").get<int>()};

    const auto pairs = export_correspondences(psi, kps, b2);
    ensure_out_dir(cfg.out_dir);
    const std::string path = out_path(cfg, "correspondences.txt");
    save_correspondences(path, pairs);
    return json{{"pairs", pairs.size()}, {"path", path}};
}

}  // namespace jalign::cli
