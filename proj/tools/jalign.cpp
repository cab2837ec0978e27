// jalign: joint descriptor learning and homography alignment of an image pair.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "jalign/cli.hpp"

namespace {

using jalign::cli::RunConfig;

struct CommonFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::string mode;
    int iters = 0;
};

void add_common(CLI::App* cmd, RunConfig& cfg, CommonFlags& f) {
    cmd->add_option("--config", f.config, "JSON config with TrainConfig keys");
    cmd->add_option("--seed", f.seed, "RNG seed (overrides config)");
    cmd->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--mode", f.mode, "siamese|pseudo (overrides config)");
    cmd->add_option("--iters", f.iters, "iterations per pyramid level (overrides config)");
    cmd->add_flag("-v,--verbose", cfg.verbose, "log training progress to stderr");
}

// defaults < --config file < explicit flags
void resolve_config(CLI::App* cmd, RunConfig& cfg, const CommonFlags& f) {
    if (!f.config.empty()) {
        if (!std::filesystem::is_regular_file(f.config))
            throw jalign::Error(jalign::ErrorKind::Config, "config file not found: " + f.config);
        cfg.train = jalign::load_config(f.config);
    }
    if (cmd->count("--seed")) cfg.train.seed = f.seed;
    if (cmd->count("--mode")) cfg.train.mode = jalign::parse_mode(f.mode);
    if (cmd->count("--iters")) cfg.train.iters_per_level = f.iters;
    cfg.train.validate();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint patch-descriptor learning and homography alignment"};
    app.require_subcommand(1);

    RunConfig cfg;
    CommonFlags flags;

    auto* align = app.add_subcommand("align", "align an image pair coarse-to-fine");
    align->add_option("image1", cfg.image1, "first image (PGM/PPM)")->required();
    align->add_option("image2", cfg.image2, "second image (PGM/PPM)")->required();
    align->add_option("--init-h", cfg.init_h, "initial homography JSON (default identity)");
    add_common(align, cfg, flags);

    auto* synth = app.add_subcommand("synth", "generate a synthetic pair with known homography");
    synth->add_option("source", cfg.image1, "source image (PGM/PPM)");
    synth->add_option("--texture-width", cfg.texture_width, "procedural source width (instead of a file)");
    synth->add_option("--texture-height", cfg.texture_height, "procedural source height");
    synth->add_option("--texture-channels", cfg.texture_channels, "procedural source channels (1 or 3)");
    synth->add_option("--true-h", cfg.true_h, "homography JSON mapping image1 to image2 (default identity)");
    synth->add_option("--perturb", cfg.perturb, "initial translation error as a fraction of image size");
    synth->add_option("--gamma", cfg.gamma, "gamma applied to image2");
    synth->add_flag("--invert", cfg.invert, "invert image2 intensities after gamma");
    synth->add_option("--noise", cfg.noise, "Gaussian noise sigma added to image2 (intensity in [0,1])");
    add_common(synth, cfg, flags);

    auto* eval = app.add_subcommand("eval", "descriptor AP and homography error against ground truth");
    eval->add_option("image1", cfg.image1)->required();
    eval->add_option("image2", cfg.image2)->required();
    eval->add_option("--true-h", cfg.true_h, "ground-truth homography JSON")->required();
    eval->add_option("--run", cfg.run_dir, "align output directory (weights + estimate)");
    eval->add_option("--weights", cfg.weights, "weight file");
    eval->add_option("--est-h", cfg.est_h, "estimated homography JSON");
    eval->add_option("--keypoints", cfg.keypoints, "keypoint file (x y phi s per line)");
    eval->add_option("--num-keypoints", cfg.eval_keypoints, "sampled keypoints when no file is given")
        ->capture_default_str();
    eval->add_option("--descriptor", cfg.descriptor, "learned|raw|center")->capture_default_str();
    add_common(eval, cfg, flags);

    auto* sweep = app.add_subcommand("sweep", "final supervised loss over translational misalignments");
    sweep->add_option("image1", cfg.image1)->required();
    sweep->add_option("image2", cfg.image2)->required();
    sweep->add_option("--true-h", cfg.true_h, "ground-truth homography JSON")->required();
    sweep->add_option("--radius", cfg.radius, "offset radius in pixels")->capture_default_str();
    sweep->add_option("--step", cfg.step, "offset step in pixels")->capture_default_str();
    add_common(sweep, cfg, flags);

    auto* exp = app.add_subcommand("export", "write correspondences from a completed align run");
    exp->add_option("--run", cfg.run_dir, "align output directory")->required();
    exp->add_option("--keypoints", cfg.keypoints, "keypoint file (default: the run's keypoints.txt)");
    add_common(exp, cfg, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : jalign::cli::exit_code(jalign::ErrorKind::Config);
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        resolve_config(cmd, cfg, flags);
        jalign::json result;
        if (cmd == align) result = jalign::cli::cmd_align(cfg);
        else if (cmd == synth) result = jalign::cli::cmd_synth(cfg);
        else if (cmd == eval) result = jalign::cli::cmd_eval(cfg);
        else if (cmd == sweep) result = jalign::cli::cmd_sweep(cfg);
        else result = jalign::cli::cmd_export(cfg);
        if (cmd == align) {
            std::cout << "homography";
            for (double v : result["homography"]) std::cout << " " << v;
            std::cout << "\n";
        } else if (cmd != sweep) {
            std::cout << result.dump(2) << "\n";
        } else {
            std::cout << "wrote " << result["cells"].size() << " sweep cells to " << cfg.out_dir << "\n";
        }
    } catch (const jalign::Error& e) {
        std::cerr << "jalign: " << e.what() << "\n";
        return jalign::cli::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "jalign: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
