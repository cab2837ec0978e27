#pragma once

// On-disk formats: JSON training config, JSON homography files, and text keypoint /
// correspondence files.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jalign/error.hpp"
#include "jalign/geometry.hpp"
#include "jalign/trainer.hpp"

namespace jalign {

using json = nlohmann::json;

inline json config_to_json(const TrainConfig& c) {
    return json{{"keypoints_per_image", c.keypoints_per_image},
                {"grad_threshold", c.grad_threshold},
                {"log2_scale_range", {c.log2_scale_min, c.log2_scale_max}},
                {"tau", c.tau},
                {"negatives_per_positive", c.negatives_per_positive},
                {"batch_size", c.batch_size},
                {"momentum", c.momentum},
                {"lr0", c.lr0},
                {"lr_decay", c.lr_decay},
                {"iters_per_level", c.iters_per_level},
                {"pyramid_factor", c.pyramid_factor},
                {"pyramid_min_size", c.pyramid_min_size},
                {"alpha", c.alpha},
                {"mu", c.mu},
                {"magnification", c.magnification},
                {"seed", c.seed},
                {"mode", to_string(c.mode)}};
}

inline SharingMode parse_mode(const std::string& s) {
    if (s == "siamese") return SharingMode::Siamese;
    if (s == "pseudo" || s == "pseudo-siamese") return SharingMode::PseudoSiamese;
    throw Error(ErrorKind::Config, "unknown sharing mode '" + s + "' (expected siamese or pseudo)");
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_config_json(const json& j, TrainConfig& c) {
    if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "keypoints_per_image") c.keypoints_per_image = v.get<int>();
            else if (key == "grad_threshold") c.grad_threshold = v.get<double>();
            else if (key == "log2_scale_range") {
                if (!v.is_array() || v.size() != 2) throw Error(ErrorKind::Config, "log2_scale_range must be [min, max]");
                c.log2_scale_min = v[0].get<double>();
                c.log2_scale_max = v[1].get<double>();
            } else if (key == "tau") c.tau = v.get<double>();
            else if (key == "negatives_per_positive") c.negatives_per_positive = v.get<int>();
            else if (key == "batch_size") c.batch_size = v.get<int>();
            else if (key == "momentum") c.momentum = v.get<double>();
            else if (key == "lr0") c.lr0 = v.get<double>();
            else if (key == "lr_decay") c.lr_decay = v.get<double>();
            else if (key == "iters_per_level") c.iters_per_level = v.get<int>();
            else if (key == "pyramid_factor") c.pyramid_factor = v.get<double>();
            else if (key == "pyramid_min_size") c.pyramid_min_size = v.get<int>();
            else if (key == "alpha") c.alpha = v.get<double>();
            else if (key == "mu") c.mu = v.get<double>();
            else if (key == "magnification") c.magnification = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
            else throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, std::string("bad config value: ") + e.what());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Io, "malformed JSON in " + path + ": " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

inline TrainConfig load_config(const std::string& path) {
    TrainConfig c;
    const json j = [&] {
        try {
            return read_json_file(path);
        } catch (const Error& e) {
            throw Error(ErrorKind::Config, e.what());
        }
    }();
    apply_config_json(j, c);
    return c;
}

/// Homographies serialize as {"h": [9 row-major entries]}; the bottom-right entry is forced to 1.
inline json homography_to_json(const Homography& H) { return json{{"h", H.row_major()}}; }

inline Homography homography_from_json(const json& j) {
    const json& arr = j.is_object() && j.contains("h") ? j.at("h") : j;
    if (!arr.is_array() || arr.size() != 9) throw Error(ErrorKind::Io, "homography must be a 9-element array");
    std::array<double, 9> v{};
    for (int i = 0; i < 9; ++i) v[i] = arr[i].get<double>();
    return Homography::from_row_major(v);
}

inline Homography load_homography(const std::string& path) { return homography_from_json(read_json_file(path)); }

inline void save_homography(const std::string& path, const Homography& H) {
    write_json_file(path, homography_to_json(H));
}

inline std::string format_keypoint(const Keypoint& k) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g", k.x, k.y, k.phi, k.s);
    return buf;
}

/// One keypoint per line: "x y phi s". Blank lines and lines starting with '#' are skipped.
inline std::vector<Keypoint> parse_keypoints(std::istream& in, const std::string& name = "<stream>") {
    std::vector<Keypoint> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        double x, y, phi, s;
        if (!(ls >> x >> y >> phi >> s) || !(s > 0.0))
            throw Error(ErrorKind::Io, name + ":" + std::to_string(lineno) + ": expected 'x y phi s' with s > 0");
        out.push_back(Keypoint::make(x, y, phi, s));
    }
    return out;
}

inline std::vector<Keypoint> load_keypoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    return parse_keypoints(in, path);
}

inline void save_keypoints(const std::string& path, std::span<const Keypoint> kps) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    for (const auto& k : kps) out << format_keypoint(k) << "\n";
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

/// One correspondence per line: "x y phi s x' y' phi' s'".
inline void save_correspondences(const std::string& path, std::span<const PositivePair> pairs) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    for (const auto& p : pairs) out << format_keypoint(p.first) << " " << format_keypoint(p.second) << "\n";
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

inline std::vector<PositivePair> load_correspondences(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::vector<PositivePair> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double v[8];
        for (double& x : v)
            if (!(ls >> x)) throw Error(ErrorKind::Io, "malformed correspondence line in " + path);
        out.push_back({Keypoint::make(v[0], v[1], v[2], v[3]), Keypoint::make(v[4], v[5], v[6], v[7])});
    }
    return out;
}

}  // namespace jalign
