// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/io/image.hpp>
#include <colonsplat/scene/camera.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace colonsplat {

// One manifest row; image payloads stay on disk until load_dataset.
struct ManifestFrame {
    std::string rgb_path;
    std::string depth_path;
    double t = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    std::array<double, 16> world_to_camera{}; // row-major 4x4
    std::string split = "train";
};

struct Manifest {
    std::vector<ManifestFrame> frames;
    nlohmann::json generator; // opaque generator settings, may be null
};

inline void write_manifest(const std::string& dir, const Manifest& m)
{
    nlohmann::json j;
    j["frames"] = nlohmann::json::array();
    for (const auto& f : m.frames) {
        nlohmann::json e;
        e["rgb_path"] = f.rgb_path;
        e["depth_path"] = f.depth_path;
        e["t"] = f.t;
        e["fx"] = f.fx;
        e["fy"] = f.fy;
        e["cx"] = f.cx;
        e["cy"] = f.cy;
        e["width"] = f.width;
        e["height"] = f.height;
        e["world_to_camera"] = f.world_to_camera;
        e["split"] = f.split;
        j["frames"].push_back(std::move(e));
    }
    if (!m.generator.is_null()) j["generator"] = m.generator;
    std::ofstream out(std::filesystem::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest.json in " + dir);
    out << j.dump(2) << "\n";
}

// Manifest from an explicit file path. rgb/depth paths may be absent for
// camera-only manifests (external render trajectories).
inline Manifest load_manifest_file(const std::string& file)
{
    const std::filesystem::path path(file);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
    }
    Manifest m;
    try {
        for (const auto& e : j.at("frames")) {
            ManifestFrame f;
            f.rgb_path = e.value("rgb_path", std::string());
            f.depth_path = e.value("depth_path", std::string());
            f.t = e.at("t").get<double>();
            f.fx = e.at("fx").get<double>();
            f.fy = e.at("fy").get<double>();
            f.cx = e.at("cx").get<double>();
            f.cy = e.at("cy").get<double>();
            f.width = e.at("width").get<int>();
            f.height = e.at("height").get<int>();
            const auto w2c = e.at("world_to_camera");
            if (w2c.size() != 16) throw IoError("world_to_camera must hold 16 floats");
            for (int k = 0; k < 16; ++k) f.world_to_camera[static_cast<size_t>(k)] = w2c[static_cast<size_t>(k)].get<double>();
            f.split = e.value("split", std::string("train"));
            m.frames.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest schema in " + path.string() + ": " + e.what());
    }
    if (j.contains("generator")) m.generator = j["generator"];
    return m;
}

inline Manifest load_manifest(const std::string& dir)
{
    return load_manifest_file((std::filesystem::path(dir) / "manifest.json").string());
}

template <typename T>
Camera<T> camera_from(const ManifestFrame& f)
{
    Camera<T> cam;
    cam.fx = static_cast<T>(f.fx);
    cam.fy = static_cast<T>(f.fy);
    cam.cx = static_cast<T>(f.cx);
    cam.cy = static_cast<T>(f.cy);
    cam.width = f.width;
    cam.height = f.height;
    cam.t = static_cast<T>(f.t);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.R(r, c) = static_cast<T>(f.world_to_camera[static_cast<size_t>(r * 4 + c)]);
        cam.tvec[r] = static_cast<T>(f.world_to_camera[static_cast<size_t>(r * 4 + 3)]);
    }
    return cam;
}

template <typename T>
Dataset<T> load_dataset(const std::string& dir)
{
    const Manifest m = load_manifest(dir);
    Dataset<T> ds;
    double prev_t = -1.0;
    for (const auto& mf : m.frames) {
        if (mf.t < prev_t)
            throw UsageError("manifest timesteps must be non-decreasing");
        prev_t = mf.t;
        Frame<T> frame;
        frame.camera = camera_from<T>(mf);
        frame.is_test = (mf.split == "test");
        const auto root = std::filesystem::path(dir);
        Image<float> rgb = read_png_rgb((root / mf.rgb_path).string());
        Image<float> dep = read_pfm((root / mf.depth_path).string());
        if (rgb.width != mf.width || rgb.height != mf.height ||
            dep.width != mf.width || dep.height != mf.height)
            throw IoError("frame image dimensions disagree with manifest");
        if constexpr (std::is_same_v<T, float>) {
            frame.rgb = std::move(rgb);
            frame.depth_sup = std::move(dep);
        } else {
            frame.rgb = Image<T>(rgb.width, rgb.height, 3);
            for (size_t i = 0; i < rgb.data.size(); ++i) frame.rgb.data[i] = static_cast<T>(rgb.data[i]);
            frame.depth_sup = Image<T>(dep.width, dep.height, 1);
            for (size_t i = 0; i < dep.data.size(); ++i) frame.depth_sup.data[i] = static_cast<T>(dep.data[i]);
        }
        ds.frames.push_back(std::move(frame));
    }
    return ds;
}

} // namespace colonsplat
