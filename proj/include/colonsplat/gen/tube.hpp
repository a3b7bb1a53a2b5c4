// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/math.hpp>
#include <colonsplat/core/threading.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/io/image.hpp>
#include <colonsplat/io/manifest.hpp>
#include <colonsplat/io/ply.hpp>
#include <colonsplat/scene/camera.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace colonsplat {

// Procedural peristaltic tube: a cylinder of base radius whose wall radius
// carries a traveling sinusoidal wave, viewed from a camera moving along
// the axis. Serves as analytic ground truth for RGB, depth, and clouds.
struct TubeSpec {
    double length = 10.0;                  // axial extent, z in [0, length]
    double radius = 1.0;                   // base radius
    double amplitude = 0.15;               // radial wave amplitude fraction, < 1
    double wave_number = 2.0 * 3.14159265358979323846 / 5.0;
    double angular_speed = 2.0 * 3.14159265358979323846;
    int noise_octaves = 4;                 // albedo value-noise octaves
    std::uint64_t seed = 0;
    int frames = 64;
    int width = 64, height = 64;
    int truth_points = 20000;              // per-frame ground-truth cloud size
};

template <typename T>
T surface_radius(const TubeSpec& spec, T z, T t)
{
    return T(spec.radius) *
           (T(1) + T(spec.amplitude) * std::sin(T(spec.wave_number) * z - T(spec.angular_speed) * t));
}

namespace gen_detail {

inline std::uint64_t hash_mix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed)
{
    std::uint64_t h = seed;
    h = hash_mix(h ^ static_cast<std::uint64_t>(x));
    h = hash_mix(h ^ static_cast<std::uint64_t>(y));
    h = hash_mix(h ^ static_cast<std::uint64_t>(z));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0); // 53-bit mantissa
}

inline double smooth(double f) { return f * f * (3.0 - 2.0 * f); }

// Trilinear value noise in [0, 1].
template <typename T>
T value_noise(const Vec3<T>& p, std::uint64_t seed)
{
    const double px = static_cast<double>(p[0]), py = static_cast<double>(p[1]),
                 pz = static_cast<double>(p[2]);
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
    const std::int64_t z0 = static_cast<std::int64_t>(std::floor(pz));
    const double fx = smooth(px - static_cast<double>(x0));
    const double fy = smooth(py - static_cast<double>(y0));
    const double fz = smooth(pz - static_cast<double>(z0));
    double c[2][2][2];
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) c[i][j][k] = lattice_value(x0 + i, y0 + j, z0 + k, seed);
    const double x00 = c[0][0][0] + (c[1][0][0] - c[0][0][0]) * fx;
    const double x10 = c[0][1][0] + (c[1][1][0] - c[0][1][0]) * fx;
    const double x01 = c[0][0][1] + (c[1][0][1] - c[0][0][1]) * fx;
    const double x11 = c[0][1][1] + (c[1][1][1] - c[0][1][1]) * fx;
    const double y0v = x00 + (x10 - x00) * fy;
    const double y1v = x01 + (x11 - x01) * fy;
    return static_cast<T>(y0v + (y1v - y0v) * fz);
}

// Fractional Brownian stack of value noise, normalized back to [0, 1].
template <typename T>
T fbm(const Vec3<T>& p, int octaves, std::uint64_t seed)
{
    double amp = 1.0, freq = 1.0, acc = 0.0, norm = 0.0;
    for (int o = 0; o < octaves; ++o) {
        acc += amp * static_cast<double>(value_noise(Vec3<T>(p * T(freq)), seed + static_cast<std::uint64_t>(o)));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return static_cast<T>(acc / norm);
}

// Albedo sampled in material coordinates of the undeformed cylinder so the
// texture sticks to the wall as the radius wave travels.
template <typename T>
Vec3<T> albedo(const TubeSpec& spec, T phi, T z)
{
    const Vec3<T> m(std::cos(phi) * T(spec.radius) * T(2), std::sin(phi) * T(spec.radius) * T(2),
                    z * T(2));
    const T n1 = fbm(m, spec.noise_octaves, spec.seed);
    const T n2 = fbm(m, spec.noise_octaves, spec.seed + 101);
    const T n3 = fbm(m, spec.noise_octaves, spec.seed + 202);
    return Vec3<T>(T(0.55) + T(0.35) * n1, T(0.30) + T(0.30) * n2, T(0.25) + T(0.20) * n3);
}

} // namespace gen_detail

template <typename T>
struct RaycastResult {
    Image<T> rgb;   // H x W x 3
    Image<T> depth; // H x W; invalid pixels hold -1
    std::vector<std::uint8_t> valid;
};

// Independent ground-truth renderer: per pixel, march the ray from the
// camera to the first zero of |p_xy| - r(p_z, t), bisection-refined, then
// shade with the procedural albedo under a collocated headlight.
template <typename T>
RaycastResult<T> raycast_frame(const TubeSpec& spec, const Camera<T>& cam, T t,
                               const ThreadPool& pool = ThreadPool(1))
{
    const T r0 = T(spec.radius);
    const T len = T(spec.length);
    const Mat3<T> r_wc = cam.R;
    const Vec3<T> center = -(r_wc.transpose() * cam.tvec);
    {
        const T axis_dist = std::sqrt(center[0] * center[0] + center[1] * center[1]);
        if (center[2] < T(0) || center[2] > len ||
            axis_dist >= surface_radius(spec, center[2], t))
            throw CameraOutsideTube("raycast_frame");
    }

    RaycastResult<T> res;
    res.rgb = Image<T>(cam.width, cam.height, 3);
    res.depth = Image<T>(cam.width, cam.height, 1, T(-1));
    res.valid.assign(static_cast<size_t>(cam.width) * cam.height, 0);

    const T step = T(0.05) * r0;
    const T tol = T(1e-6) * r0;
    const T s_max = T(4) * len;
    const T dr_dz_scale = r0 * T(spec.amplitude) * T(spec.wave_number);

    pool.parallel_for(cam.height, [&](std::int64_t yb, std::int64_t ye, int) {
        for (std::int64_t y = yb; y < ye; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3<T> dir_cam((T(x) - cam.cx) / cam.fx, (T(y) - cam.cy) / cam.fy, T(1));
                const Vec3<T> dir = r_wc.transpose() * dir_cam;
                auto wall = [&](T s) {
                    const Vec3<T> p = center + s * dir;
                    return std::sqrt(p[0] * p[0] + p[1] * p[1]) - surface_radius(spec, p[2], t);
                };
                auto in_range = [&](T s) {
                    const T pz = center[2] + s * dir[2];
                    return pz >= T(0) && pz <= len;
                };
                T lo = T(0), hi = T(0);
                bool hit = false;
                for (T s = step; s <= s_max; s += step) {
                    if (!in_range(s)) break;
                    if (wall(s) >= T(0)) {
                        lo = s - step;
                        hi = s;
                        hit = true;
                        break;
                    }
                }
                if (!hit) continue;
                while (hi - lo > tol) {
                    const T mid = (lo + hi) / T(2);
                    if (wall(mid) >= T(0))
                        hi = mid;
                    else
                        lo = mid;
                }
                const T s_hit = (lo + hi) / T(2);
                const Vec3<T> p = center + s_hit * dir;
                const T rho = std::sqrt(p[0] * p[0] + p[1] * p[1]);
                Vec3<T> normal(p[0] / rho, p[1] / rho,
                               -dr_dz_scale * std::cos(T(spec.wave_number) * p[2] -
                                                       T(spec.angular_speed) * t));
                normal.normalize();
                const Vec3<T> d_hat = dir.normalized();
                if (normal.dot(d_hat) > T(0)) normal = -normal; // face the camera
                const T lambert = std::max(T(0), -normal.dot(d_hat));
                const T falloff = T(1) / (T(1) + s_hit * s_hit);
                const T phi = std::atan2(p[1], p[0]);
                const Vec3<T> alb = gen_detail::albedo<T>(spec, phi, p[2]);
                for (int c = 0; c < 3; ++c)
                    res.rgb.at(static_cast<int>(y), x, c) =
                        clip(alb[c] * lambert * falloff, T(0), T(1));
                res.depth.at(static_cast<int>(y), x) = s_hit;
                res.valid[static_cast<size_t>(y) * cam.width + static_cast<size_t>(x)] = 1;
            }
        }
    });
    return res;
}

// Stratified (z, phi) surface sampling; the jitter stream depends only on
// the seed and the point count, so clouds at wave-periodic times coincide.
template <typename T>
std::vector<Vec3<T>> sample_truth_cloud(const TubeSpec& spec, T t, int m_points)
{
    if (m_points < 1) throw InvalidCount("sample_truth_cloud needs at least 1 point");
    const int gz = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m_points))));
    const int gphi = (m_points + gz - 1) / gz;
    std::mt19937_64 rng(gen_detail::hash_mix(spec.seed ^ (static_cast<std::uint64_t>(m_points) << 17)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec3<T>> points;
    points.reserve(static_cast<size_t>(m_points));
    const T two_pi = T(2) * T(3.14159265358979323846);
    for (int i = 0; i < gz && static_cast<int>(points.size()) < m_points; ++i)
        for (int j = 0; j < gphi && static_cast<int>(points.size()) < m_points; ++j) {
            const T z = (T(i) + T(u(rng))) * T(spec.length) / T(gz);
            const T phi = (T(j) + T(u(rng))) * two_pi / T(gphi);
            const T r = surface_radius(spec, z, t);
            points.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
        }
    return points;
}

// Inside-tube camera path: axial translation with slight lateral sway.
template <typename T>
Camera<T> trajectory_camera(const TubeSpec& spec, int frame_index)
{
    const T tau = spec.frames > 1 ? T(frame_index) / T(spec.frames - 1) : T(0);
    const T two_pi = T(2) * T(3.14159265358979323846);
    Camera<T> cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.fx = cam.fy = T(spec.width) / T(2);
    cam.cx = (T(spec.width) - T(1)) / T(2);
    cam.cy = (T(spec.height) - T(1)) / T(2);
    cam.R = Mat3<T>::Identity();
    const Vec3<T> center(T(0.05) * T(spec.radius) * std::sin(two_pi * tau),
                         T(0.05) * T(spec.radius) * std::sin(two_pi * tau + T(1)),
                         T(1) + (T(spec.length) - T(3)) * tau);
    cam.tvec = -center;
    cam.t = tau;
    return cam;
}

// Writes manifest.json, frame_%04d.png, depth_%04d.pfm, truth_%04d.ply.
// Every 8th frame (index % 8 == 0) is tagged as the test split.
template <typename T>
Manifest generate_dataset(const TubeSpec& spec, const std::string& out_dir,
                          const ThreadPool& pool = ThreadPool(1))
{
    if (spec.frames < 2) throw UsageError("generator needs at least 2 frames");
    if (spec.amplitude < 0 || spec.amplitude >= 1)
        throw UsageError("amplitude must lie in [0, 1)");
    // Single-level create: a missing parent is an I/O error, not silently fixed.
    if (!std::filesystem::is_directory(out_dir)) {
        std::error_code ec;
        if (!std::filesystem::create_directory(out_dir, ec) || ec)
            throw IoError("cannot create output directory " + out_dir +
                          (ec ? ": " + ec.message() : std::string()));
    }

    Manifest manifest;
    manifest.generator = {{"length", spec.length},
                          {"radius", spec.radius},
                          {"amplitude", spec.amplitude},
                          {"wave_number", spec.wave_number},
                          {"angular_speed", spec.angular_speed},
                          {"noise_octaves", spec.noise_octaves},
                          {"seed", spec.seed},
                          {"frames", spec.frames},
                          {"width", spec.width},
                          {"height", spec.height},
                          {"truth_points", spec.truth_points}};

    char name[64];
    for (int i = 0; i < spec.frames; ++i) {
        const T t = spec.frames > 1 ? T(i) / T(spec.frames - 1) : T(0);
        const Camera<T> cam = trajectory_camera<T>(spec, i);
        const auto cast = raycast_frame(spec, cam, t, pool);

        std::snprintf(name, sizeof(name), "frame_%04d.png", i);
        const std::string rgb_name = name;
        std::snprintf(name, sizeof(name), "depth_%04d.pfm", i);
        const std::string depth_name = name;
        std::snprintf(name, sizeof(name), "truth_%04d.ply", i);
        const std::string truth_name = name;

        write_png_rgb((std::filesystem::path(out_dir) / rgb_name).string(),
                      image_cast<float>(cast.rgb));
        write_pfm((std::filesystem::path(out_dir) / depth_name).string(),
                  image_cast<float>(cast.depth));
        save_point_ply((std::filesystem::path(out_dir) / truth_name).string(),
                       sample_truth_cloud(spec, t, spec.truth_points));

        ManifestFrame mf;
        mf.rgb_path = rgb_name;
        mf.depth_path = depth_name;
        mf.t = static_cast<double>(t);
        mf.fx = static_cast<double>(cam.fx);
        mf.fy = static_cast<double>(cam.fy);
        mf.cx = static_cast<double>(cam.cx);
        mf.cy = static_cast<double>(cam.cy);
        mf.width = cam.width;
        mf.height = cam.height;
        const Mat4<T> w2c = cam.world_to_camera();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                mf.world_to_camera[static_cast<size_t>(r * 4 + c)] =
                    static_cast<double>(w2c(r, c));
        mf.split = (i % 8 == 0) ? "test" : "train";
        manifest.frames.push_back(std::move(mf));
    }
    write_manifest(out_dir, manifest);
    return manifest;
}

} // namespace colonsplat
