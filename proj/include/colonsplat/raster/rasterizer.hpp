// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/math.hpp>
#include <colonsplat/core/threading.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/scene/camera.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace colonsplat {

// 2D covariance floor (px^2) keeping conics invertible under minification.
inline constexpr double kAntiAliasFloor = 0.3;
// Ceiling on per-splat alpha; avoids infinite gradients at full saturation.
inline constexpr double kAlphaCeiling = 0.99;
// Splats dimmer than this at a pixel are skipped.
inline constexpr double kAlphaSkip = 1.0 / 255.0;
// Compositing stops once transmittance drops below this.
inline constexpr double kTransmittanceStop = 1e-4;
// Conservative culling margin on the 3-sigma screen radius.
inline constexpr double kCullMargin = 1.3;

template <typename T>
struct Splat2D {
    Vec2<T> mean;  // pixel coordinates
    Vec3<T> conic; // inverse 2D covariance (a, b, c) of [[a, b], [b, c]]
    T z;           // view-space depth
    T opacity;
    Vec3<T> color;
    int source; // gaussian index
};

struct RenderOptions {
    int tile_size = 16;
    bool depth_normalize_by_alpha = false;
};

template <typename T>
struct RenderOutput {
    Image<T> rgb;   // H x W x 3
    Image<T> depth; // H x W
    Image<T> alpha; // H x W
    // Adjoint-pass records.
    std::vector<std::int32_t> n_contrib; // composited splats per pixel
    std::vector<T> final_T;              // remaining transmittance per pixel
};

template <typename T>
struct RenderGrads {
    std::vector<Vec3<T>> d_position;
    std::vector<Vec3<T>> d_log_scale;
    std::vector<Quat<T>> d_rotation;
    std::vector<T> d_opacity_logit;
    std::vector<Vec3<T>> d_color;
    std::vector<Vec2<T>> d_mean2d; // pixel-space screen gradient, densification signal

    explicit RenderGrads(size_t n = 0) { resize(n); }
    void resize(size_t n)
    {
        d_position.assign(n, Vec3<T>::Zero());
        d_log_scale.assign(n, Vec3<T>::Zero());
        d_rotation.assign(n, Quat<T>::Zero());
        d_opacity_logit.assign(n, T(0));
        d_color.assign(n, Vec3<T>::Zero());
        d_mean2d.assign(n, Vec2<T>::Zero());
    }
};

namespace raster_detail {

// Largest eigenvalue of the symmetric 2x2 [[a, b], [b, c]].
template <typename T>
T eig_max(T a, T b, T c)
{
    const T mid = (a + c) / T(2);
    const T disc = std::sqrt(std::max(T(0), (a - c) * (a - c) / T(4) + b * b));
    return mid + disc;
}

// Projection intermediates shared by forward and adjoint.
template <typename T>
struct ProjFwd {
    Vec3<T> p_cam;
    Quat<T> q_unit;
    Mat3<T> sigma;     // world covariance
    Mat3<T> rot;       // R(q_unit)
    Vec3<T> axis_len;  // exp(log_scale)
    Eigen::Matrix<T, 2, 3> J;
    Mat2<T> cov2;      // J W Sigma W^T J^T + floor
    T det = T(0);
    Vec3<T> conic;
    Vec2<T> mean;
    bool ok = false;
};

template <typename T>
ProjFwd<T> project_one(const GaussianCloud<T>& cloud, size_t i, const Camera<T>& cam)
{
    ProjFwd<T> f;
    f.p_cam = cam.to_camera(cloud.positions[i]);
    const T z = f.p_cam[2];
    if (!(z > cam.znear && z < cam.zfar)) return f;

    const T qn = cloud.rotations[i].norm();
    if (!(qn > T(0))) return f;
    f.q_unit = cloud.rotations[i] / qn;
    f.rot = quat_to_rotation(f.q_unit);
    for (int k = 0; k < 3; ++k) f.axis_len[k] = std::exp(cloud.log_scales[i][k]);
    Vec3<T> var;
    for (int k = 0; k < 3; ++k) var[k] = f.axis_len[k] * f.axis_len[k];
    f.sigma = f.rot * var.asDiagonal() * f.rot.transpose();

    const T x = f.p_cam[0], y = f.p_cam[1];
    f.J.setZero();
    f.J(0, 0) = cam.fx / z;
    f.J(0, 2) = -cam.fx * x / (z * z);
    f.J(1, 1) = cam.fy / z;
    f.J(1, 2) = -cam.fy * y / (z * z);

    const Eigen::Matrix<T, 2, 3> jw = f.J * cam.R;
    f.cov2 = jw * f.sigma * jw.transpose();
    f.cov2(0, 0) += T(kAntiAliasFloor);
    f.cov2(1, 1) += T(kAntiAliasFloor);

    f.det = f.cov2(0, 0) * f.cov2(1, 1) - f.cov2(0, 1) * f.cov2(1, 0);
    if (!(f.det > T(0))) return f;
    f.conic = Vec3<T>(f.cov2(1, 1), -f.cov2(0, 1), f.cov2(0, 0)) / f.det;
    f.mean = Vec2<T>(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    f.ok = true;
    return f;
}

} // namespace raster_detail

// EWA projection of the (deformed or canonical) cloud into screen space.
// Culls behind-camera and far-out-of-frame Gaussians; output is sorted
// ascending by view depth with index ties kept stable.
template <typename T>
std::vector<Splat2D<T>> project(const GaussianCloud<T>& cloud, const Camera<T>& cam)
{
    std::vector<Splat2D<T>> splats;
    splats.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto f = raster_detail::project_one(cloud, i, cam);
        if (!f.ok) continue;
        const T radius = T(3) * std::sqrt(raster_detail::eig_max(f.cov2(0, 0), f.cov2(0, 1), f.cov2(1, 1)));
        const T margin = T(kCullMargin) * radius;
        if (f.mean[0] + margin < T(0) || f.mean[0] - margin > T(cam.width - 1) ||
            f.mean[1] + margin < T(0) || f.mean[1] - margin > T(cam.height - 1))
            continue;
        Splat2D<T> s;
        s.mean = f.mean;
        s.conic = f.conic;
        s.z = f.p_cam[2];
        s.opacity = sigmoid(cloud.opacity_logits[i]);
        s.color = cloud.base_colors[i];
        s.source = static_cast<int>(i);
        splats.push_back(s);
    }
    std::stable_sort(splats.begin(), splats.end(), [](const Splat2D<T>& a, const Splat2D<T>& b) {
        return a.z < b.z || (a.z == b.z && a.source < b.source);
    });
    return splats;
}

namespace raster_detail {

// Screen radius used for tile binning; matches the culling radius.
template <typename T>
T splat_radius(const Splat2D<T>& s)
{
    // lambda_min of the conic is 1 / lambda_max of the covariance
    const T mid = (s.conic[0] + s.conic[2]) / T(2);
    const T disc = std::sqrt(std::max(T(0), (s.conic[0] - s.conic[2]) * (s.conic[0] - s.conic[2]) / T(4) + s.conic[1] * s.conic[1]));
    const T lmin = mid - disc;
    if (!(lmin > T(0))) return T(0);
    return T(3) / std::sqrt(lmin);
}

// Splat indices per tile, preserving global depth order inside each bin.
template <typename T>
std::vector<std::vector<int>> bin_tiles(const std::vector<Splat2D<T>>& splats,
                                        int width, int height, int ts)
{
    const int tx = (width + ts - 1) / ts;
    const int ty = (height + ts - 1) / ts;
    std::vector<std::vector<int>> bins(static_cast<size_t>(tx) * ty);
    for (int si = 0; si < static_cast<int>(splats.size()); ++si) {
        const auto& s = splats[static_cast<size_t>(si)];
        const T r = splat_radius(s);
        if (!(r > T(0))) continue;
        const int x0 = std::clamp(static_cast<int>(std::floor((s.mean[0] - r) / T(ts))), 0, tx - 1);
        const int x1 = std::clamp(static_cast<int>(std::floor((s.mean[0] + r) / T(ts))), 0, tx - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor((s.mean[1] - r) / T(ts))), 0, ty - 1);
        const int y1 = std::clamp(static_cast<int>(std::floor((s.mean[1] + r) / T(ts))), 0, ty - 1);
        if (s.mean[0] + r < T(0) || s.mean[0] - r > T(width - 1) ||
            s.mean[1] + r < T(0) || s.mean[1] - r > T(height - 1))
            continue;
        for (int yt = y0; yt <= y1; ++yt)
            for (int xt = x0; xt <= x1; ++xt)
                bins[static_cast<size_t>(yt) * tx + xt].push_back(si);
    }
    return bins;
}

} // namespace raster_detail

// Front-to-back alpha compositing of depth-sorted splats.
template <typename T>
RenderOutput<T> render(const std::vector<Splat2D<T>>& splats, const Camera<T>& cam,
                       const RenderOptions& opt = {}, const ThreadPool& pool = ThreadPool(1))
{
    const int w = cam.width, h = cam.height, ts = opt.tile_size;
    RenderOutput<T> out;
    out.rgb = Image<T>(w, h, 3);
    out.depth = Image<T>(w, h, 1);
    out.alpha = Image<T>(w, h, 1);
    out.n_contrib.assign(static_cast<size_t>(w) * h, 0);
    out.final_T.assign(static_cast<size_t>(w) * h, T(1));

    const auto bins = raster_detail::bin_tiles(splats, w, h, ts);
    const int tx = (w + ts - 1) / ts;

    pool.parallel_for(static_cast<std::int64_t>(bins.size()), [&](std::int64_t b, std::int64_t e, int) {
        for (std::int64_t tile = b; tile < e; ++tile) {
            const auto& bin = bins[static_cast<size_t>(tile)];
            const int px0 = static_cast<int>(tile % tx) * ts;
            const int py0 = static_cast<int>(tile / tx) * ts;
            for (int y = py0; y < std::min(py0 + ts, h); ++y)
                for (int x = px0; x < std::min(px0 + ts, w); ++x) {
                    T trans = T(1);
                    Vec3<T> c_acc = Vec3<T>::Zero();
                    T d_acc = T(0);
                    std::int32_t n = 0;
                    for (int si : bin) {
                        const auto& s = splats[static_cast<size_t>(si)];
                        const T dx = T(x) - s.mean[0];
                        const T dy = T(y) - s.mean[1];
                        const T q = s.conic[0] * dx * dx + T(2) * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                        if (q < T(0)) continue;
                        const T a_raw = s.opacity * std::exp(-q / T(2));
                        const T a = a_raw < T(kAlphaCeiling) ? a_raw : T(kAlphaCeiling);
                        if (a < T(kAlphaSkip)) continue;
                        c_acc += s.color * (a * trans);
                        d_acc += s.z * (a * trans);
                        trans *= T(1) - a;
                        ++n;
                        if (trans < T(kTransmittanceStop)) break;
                    }
                    const size_t pix = static_cast<size_t>(y) * w + x;
                    const T alpha = T(1) - trans;
                    for (int k = 0; k < 3; ++k) out.rgb.at(y, x, k) = c_acc[k];
                    if (opt.depth_normalize_by_alpha)
                        out.depth.at(y, x) = alpha > T(1e-6) ? d_acc / alpha : T(0);
                    else
                        out.depth.at(y, x) = d_acc;
                    out.alpha.at(y, x) = alpha;
                    out.n_contrib[pix] = n;
                    out.final_T[pix] = trans;
                }
        }
    });
    return out;
}

// Exact adjoint of project+render. Output gradients arrive on the rgb,
// depth and alpha buffers; results are per-Gaussian gradients at the
// deformed state. The depth sort is treated as constant. Accumulation is
// reduced in (tile, bin entry) order, independent of the worker count.
template <typename T>
RenderGrads<T> render_backward(const Image<T>& d_rgb, const Image<T>& d_depth,
                               const Image<T>& d_alpha, const RenderOutput<T>& fwd,
                               const std::vector<Splat2D<T>>& splats,
                               const GaussianCloud<T>& cloud, const Camera<T>& cam,
                               const RenderOptions& opt = {},
                               const ThreadPool& pool = ThreadPool(1))
{
    const int w = cam.width, h = cam.height, ts = opt.tile_size;
    if (static_cast<int>(fwd.n_contrib.size()) != w * h ||
        static_cast<int>(fwd.final_T.size()) != w * h || d_rgb.width != w || d_rgb.height != h ||
        d_rgb.channels != 3 || d_depth.width != w || d_depth.height != h || d_alpha.width != w ||
        d_alpha.height != h)
        throw AuxMismatch("render_backward buffers disagree with camera dimensions");
    for (const auto& s : splats)
        if (s.source < 0 || s.source >= static_cast<int>(cloud.size()))
            throw AuxMismatch("splat source index out of range");

    const auto bins = raster_detail::bin_tiles(splats, w, h, ts);
    const int tx = (w + ts - 1) / ts;

    struct SplatGrad {
        Vec2<T> mean = Vec2<T>::Zero();
        Vec3<T> conic = Vec3<T>::Zero();
        T z = T(0), opacity = T(0);
        Vec3<T> color = Vec3<T>::Zero();
    };
    std::vector<std::vector<SplatGrad>> tile_grads(bins.size());

    struct Rec {
        int entry;
        T alpha, trans;
    };

    pool.parallel_for(static_cast<std::int64_t>(bins.size()), [&](std::int64_t b, std::int64_t e, int) {
        std::vector<Rec> recs;
        for (std::int64_t tile = b; tile < e; ++tile) {
            const auto& bin = bins[static_cast<size_t>(tile)];
            auto& grads = tile_grads[static_cast<size_t>(tile)];
            grads.assign(bin.size(), SplatGrad());
            if (bin.empty()) continue;
            const int px0 = static_cast<int>(tile % tx) * ts;
            const int py0 = static_cast<int>(tile / tx) * ts;
            for (int y = py0; y < std::min(py0 + ts, h); ++y)
                for (int x = px0; x < std::min(px0 + ts, w); ++x) {
                    const size_t pix = static_cast<size_t>(y) * w + x;
                    const std::int32_t n_fwd = fwd.n_contrib[pix];
                    if (n_fwd == 0) continue;

                    // Replay the forward compositing for this pixel.
                    recs.clear();
                    T trans = T(1);
                    T d_raw = T(0);
                    for (int ei = 0; ei < static_cast<int>(bin.size()) &&
                                     static_cast<int>(recs.size()) < n_fwd; ++ei) {
                        const auto& s = splats[static_cast<size_t>(bin[static_cast<size_t>(ei)])];
                        const T dx = T(x) - s.mean[0];
                        const T dy = T(y) - s.mean[1];
                        const T q = s.conic[0] * dx * dx + T(2) * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                        if (q < T(0)) continue;
                        const T a_raw = s.opacity * std::exp(-q / T(2));
                        const T a = a_raw < T(kAlphaCeiling) ? a_raw : T(kAlphaCeiling);
                        if (a < T(kAlphaSkip)) continue;
                        recs.push_back(Rec{ei, a, trans});
                        d_raw += s.z * (a * trans);
                        trans *= T(1) - a;
                    }

                    Vec3<T> gc;
                    for (int k = 0; k < 3; ++k) gc[k] = d_rgb.at(y, x, k);
                    T gd = d_depth.at(y, x);
                    T ga = d_alpha.at(y, x);
                    if (opt.depth_normalize_by_alpha) {
                        const T alpha = T(1) - fwd.final_T[pix];
                        if (alpha > T(1e-6)) {
                            ga += -gd * d_raw / (alpha * alpha);
                            gd = gd / alpha;
                        } else {
                            gd = T(0);
                        }
                    }

                    // Suffix-sum reverse sweep.
                    Vec3<T> sc = Vec3<T>::Zero();
                    T sz = T(0), sa = T(0);
                    for (size_t j = recs.size(); j-- > 0;) {
                        const Rec& r = recs[j];
                        const auto& s = splats[static_cast<size_t>(bin[static_cast<size_t>(r.entry)])];
                        auto& g = grads[static_cast<size_t>(r.entry)];
                        const T om = T(1) - r.alpha;
                        const T d_a = gc.dot(s.color * r.trans - sc / om) +
                                      gd * (s.z * r.trans - sz / om) + ga * (r.trans - sa / om);
                        g.color += gc * (r.alpha * r.trans);
                        g.z += gd * (r.alpha * r.trans);
                        sc += s.color * (r.alpha * r.trans);
                        sz += s.z * (r.alpha * r.trans);
                        sa += r.alpha * r.trans;

                        const T dx = T(x) - s.mean[0];
                        const T dy = T(y) - s.mean[1];
                        const T q = s.conic[0] * dx * dx + T(2) * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                        const T ex = std::exp(-q / T(2));
                        const T a_raw = s.opacity * ex;
                        if (a_raw >= T(kAlphaCeiling)) continue; // ceiling gates the alpha path
                        g.opacity += d_a * ex;
                        const T d_q = -(a_raw / T(2)) * d_a;
                        g.mean[0] += -d_q * (T(2) * s.conic[0] * dx + T(2) * s.conic[1] * dy);
                        g.mean[1] += -d_q * (T(2) * s.conic[1] * dx + T(2) * s.conic[2] * dy);
                        g.conic += d_q * Vec3<T>(dx * dx, T(2) * dx * dy, dy * dy);
                    }
                }
        }
    });

    // Deterministic reduction to per-splat gradients.
    std::vector<SplatGrad> sg(splats.size());
    for (size_t tile = 0; tile < bins.size(); ++tile)
        for (size_t e = 0; e < bins[tile].size(); ++e) {
            const auto& g = tile_grads[tile][e];
            auto& acc = sg[static_cast<size_t>(bins[tile][e])];
            acc.mean += g.mean;
            acc.conic += g.conic;
            acc.z += g.z;
            acc.opacity += g.opacity;
            acc.color += g.color;
        }

    // Projection adjoint, one output slot per splat: race free.
    RenderGrads<T> out(cloud.size());
    pool.parallel_for(static_cast<std::int64_t>(splats.size()), [&](std::int64_t b, std::int64_t e, int) {
        for (std::int64_t si = b; si < e; ++si) {
            const auto& s = splats[static_cast<size_t>(si)];
            const auto& g = sg[static_cast<size_t>(si)];
            const size_t gi = static_cast<size_t>(s.source);
            const auto f = raster_detail::project_one(cloud, gi, cam);
            if (!f.ok) continue;

            out.d_color[gi] = g.color;
            out.d_opacity_logit[gi] = g.opacity * s.opacity * (T(1) - s.opacity);
            out.d_mean2d[gi] = g.mean;

            // conic -> 2D covariance
            Mat2<T> lam;
            lam << f.conic[0], f.conic[1], f.conic[1], f.conic[2];
            Mat2<T> glam;
            glam << g.conic[0], g.conic[1] / T(2), g.conic[1] / T(2), g.conic[2];
            const Mat2<T> g2 = -(lam * glam * lam).eval();

            // 2D covariance -> world covariance and Jacobian,
            // via cov2 = J (W Sigma W^T) J^T
            const Mat3<T> sig_cam = cam.R * f.sigma * cam.R.transpose();
            const Eigen::Matrix<T, 2, 3> g_j = T(2) * g2 * f.J * sig_cam;
            const Mat3<T> g_sigma = cam.R.transpose() * (f.J.transpose() * g2 * f.J) * cam.R;

            // world covariance -> rotation + log scale
            Mat3<T> m = f.rot;
            for (int k = 0; k < 3; ++k) m.col(k) *= f.axis_len[k];
            const Mat3<T> g_m = T(2) * g_sigma * m;
            Mat3<T> g_r = g_m;
            for (int k = 0; k < 3; ++k) g_r.col(k) *= f.axis_len[k];
            Vec3<T> d_s;
            for (int k = 0; k < 3; ++k)
                d_s[k] = f.axis_len[k] * f.rot.col(k).dot(g_m.col(k));
            out.d_log_scale[gi] = d_s;

            const Quat<T> g_q_unit = quat_rotation_backward(f.q_unit, g_r);
            out.d_rotation[gi] = quat_normalize_backward(cloud.rotations[gi], g_q_unit);

            // pixel mean, depth and Jacobian -> camera-space position
            const T x = f.p_cam[0], y = f.p_cam[1], z = f.p_cam[2];
            Vec3<T> g_pcam = Vec3<T>::Zero();
            g_pcam[0] += g.mean[0] * cam.fx / z;
            g_pcam[1] += g.mean[1] * cam.fy / z;
            g_pcam[2] += -g.mean[0] * cam.fx * x / (z * z) - g.mean[1] * cam.fy * y / (z * z);
            g_pcam[2] += g.z;
            g_pcam[0] += g_j(0, 2) * (-cam.fx / (z * z));
            g_pcam[1] += g_j(1, 2) * (-cam.fy / (z * z));
            g_pcam[2] += g_j(0, 0) * (-cam.fx / (z * z)) + g_j(1, 1) * (-cam.fy / (z * z)) +
                         g_j(0, 2) * (T(2) * cam.fx * x / (z * z * z)) +
                         g_j(1, 2) * (T(2) * cam.fy * y / (z * z * z));
            out.d_position[gi] = cam.R.transpose() * g_pcam;
        }
    });
    return out;
}

} // namespace colonsplat
