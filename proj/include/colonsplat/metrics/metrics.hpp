// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/deform/field.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>
#include <colonsplat/spatial/kdtree.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace colonsplat {

// ------------------------------------------------------------- image metrics

template <typename T>
T psnr(const Image<T>& a, const Image<T>& b)
{
    if (!a.same_shape(b)) throw DimMismatch("psnr image shapes differ");
    T mse = T(0);
    for (size_t i = 0; i < a.data.size(); ++i) {
        const T d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= T(a.data.size());
    if (mse < T(1e-10)) return T(100);
    return T(10) * std::log10(T(1) / mse);
}

namespace metrics_detail {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
template <typename T>
const std::vector<T>& ssim_window()
{
    static const std::vector<T> w = [] {
        std::vector<T> k(121);
        T sum = T(0);
        for (int y = -5; y <= 5; ++y)
            for (int x = -5; x <= 5; ++x) {
                const T v = std::exp(-(T(x) * T(x) + T(y) * T(y)) / (T(2) * T(1.5) * T(1.5)));
                k[static_cast<size_t>((y + 5) * 11 + (x + 5))] = v;
                sum += v;
            }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return w;
}

} // namespace metrics_detail

// Single-scale SSIM, channel-averaged, evaluated where the full 11x11
// window fits (no padding).
template <typename T>
T ssim(const Image<T>& a, const Image<T>& b)
{
    if (!a.same_shape(b)) throw DimMismatch("ssim image shapes differ");
    if (a.width < 11 || a.height < 11) throw DimMismatch("ssim needs at least 11x11 images");
    const auto& win = metrics_detail::ssim_window<T>();
    const T c1 = T(0.01) * T(0.01), c2 = T(0.03) * T(0.03);
    T acc = T(0);
    size_t count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y = 5; y < a.height - 5; ++y)
            for (int x = 5; x < a.width - 5; ++x) {
                T mx = T(0), my = T(0), sxx = T(0), syy = T(0), sxy = T(0);
                for (int dy = -5; dy <= 5; ++dy)
                    for (int dx = -5; dx <= 5; ++dx) {
                        const T w = win[static_cast<size_t>((dy + 5) * 11 + (dx + 5))];
                        const T va = a.at(y + dy, x + dx, c);
                        const T vb = b.at(y + dy, x + dx, c);
                        mx += w * va;
                        my += w * vb;
                        sxx += w * va * va;
                        syy += w * vb * vb;
                        sxy += w * va * vb;
                    }
                const T vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
                acc += ((T(2) * mx * my + c1) * (T(2) * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return acc / T(count);
}

// --------------------------------------------------------------- cloud metrics

namespace metrics_detail {

template <typename T>
std::vector<T> directed_nn(const std::vector<Vec3<T>>& from, const std::vector<Vec3<T>>& to)
{
    KdTree<T> tree(to);
    std::vector<T> d(from.size());
    for (size_t i = 0; i < from.size(); ++i) d[i] = tree.nearest_dist(from[i]);
    return d;
}

// Nearest-rank percentile on ascending data.
template <typename T>
T nearest_rank(std::vector<T> d, double pct)
{
    std::sort(d.begin(), d.end());
    const size_t rank = static_cast<size_t>(std::ceil(pct * static_cast<double>(d.size())));
    return d[std::min(d.size() - 1, std::max<size_t>(rank, 1) - 1)];
}

} // namespace metrics_detail

template <typename T>
T chamfer(const std::vector<Vec3<T>>& p, const std::vector<Vec3<T>>& q)
{
    if (p.empty() || q.empty()) throw EmptyCloud("chamfer");
    const auto dp = metrics_detail::directed_nn(p, q);
    const auto dq = metrics_detail::directed_nn(q, p);
    T mp = T(0), mq = T(0);
    for (auto v : dp) mp += v;
    for (auto v : dq) mq += v;
    return (mp / T(dp.size()) + mq / T(dq.size())) / T(2);
}

template <typename T>
T hd95(const std::vector<Vec3<T>>& p, const std::vector<Vec3<T>>& q)
{
    if (p.empty() || q.empty()) throw EmptyCloud("hd95");
    const auto dp = metrics_detail::directed_nn(p, q);
    const auto dq = metrics_detail::directed_nn(q, p);
    return std::max(metrics_detail::nearest_rank(dp, 0.95),
                    metrics_detail::nearest_rank(dq, 0.95));
}

// Deformed means of Gaussians whose (deformed) opacity clears the filter.
template <typename T>
std::vector<Vec3<T>> cloud_from_gaussians(const GaussianCloud<T>& cloud,
                                          const DeformationField<T>& field, T t,
                                          T opacity_min = T(0.05))
{
    const auto deformed = deform(field, cloud, t, false);
    std::vector<Vec3<T>> pts;
    for (size_t i = 0; i < deformed.cloud.size(); ++i)
        if (deformed.cloud.opacity(i) >= opacity_min) pts.push_back(deformed.cloud.positions[i]);
    return pts;
}

// --------------------------------------------------------------- depth metric

inline constexpr double kMetricDepthRangeEps = 1e-8;

// Per-frame min-max normalized MSE over valid pixels, averaged over frames.
template <typename T>
T depth_mse(const std::vector<Image<T>>& rendered, const std::vector<Image<T>>& truth,
            const std::vector<std::vector<std::uint8_t>>& masks)
{
    if (rendered.size() != truth.size() || rendered.size() != masks.size())
        throw DimMismatch("depth_mse frame counts differ");
    if (rendered.empty()) throw NoValidPixels("depth_mse needs at least one frame");
    T acc = T(0);
    for (size_t f = 0; f < rendered.size(); ++f) {
        const auto& r = rendered[f];
        const auto& s = truth[f];
        const auto& m = masks[f];
        if (!r.same_shape(s) || m.size() != r.data.size())
            throw DimMismatch("depth_mse frame shapes differ");
        T rmn = T(0), rmx = T(0), smn = T(0), smx = T(0);
        size_t valid = 0;
        for (size_t i = 0; i < r.data.size(); ++i) {
            if (!m[i]) continue;
            if (valid == 0) {
                rmn = rmx = r.data[i];
                smn = smx = s.data[i];
            } else {
                rmn = std::min(rmn, r.data[i]);
                rmx = std::max(rmx, r.data[i]);
                smn = std::min(smn, s.data[i]);
                smx = std::max(smx, s.data[i]);
            }
            ++valid;
        }
        if (valid == 0) throw NoValidPixels("depth_mse frame without valid pixels");
        const T rrng = std::max(rmx - rmn, T(kMetricDepthRangeEps));
        const T srng = std::max(smx - smn, T(kMetricDepthRangeEps));
        T mse = T(0);
        for (size_t i = 0; i < r.data.size(); ++i) {
            if (!m[i]) continue;
            const T d = (r.data[i] - rmn) / rrng - (s.data[i] - smn) / srng;
            mse += d * d;
        }
        acc += mse / T(valid);
    }
    return acc / T(rendered.size());
}

// --------------------------------------------------------------- eval report

struct EvalRow {
    int frame = 0;
    double t = 0, psnr = 0, ssim = 0, cd = 0, hd95 = 0;
};

struct EvalSummary {
    double psnr = 0, ssim = 0, cd = 0, hd95 = 0, mse_d = 0;
};

// Metrics that could not be computed (no truth clouds, no depth) surface as
// NaN; the report prints them as empty CSV cells and JSON nulls.
inline std::string eval_cell(double v)
{
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline nlohmann::json eval_value(double v)
{
    if (!std::isfinite(v)) return nullptr;
    return v;
}

inline void write_eval_report(const std::string& csv_path, const std::string& json_path,
                              const std::vector<EvalRow>& rows, const EvalSummary& summary)
{
    {
        std::ofstream os(csv_path);
        if (!os) throw IoError("cannot open for writing: " + csv_path);
        os << "frame,t,psnr,ssim,cd,hd95\n";
        for (const auto& r : rows)
            os << r.frame << ',' << eval_cell(r.t) << ',' << eval_cell(r.psnr) << ','
               << eval_cell(r.ssim) << ',' << eval_cell(r.cd) << ',' << eval_cell(r.hd95)
               << '\n';
        os << "mean,," << eval_cell(summary.psnr) << ',' << eval_cell(summary.ssim) << ','
           << eval_cell(summary.cd) << ',' << eval_cell(summary.hd95) << '\n';
        os << "mse_d,," << eval_cell(summary.mse_d) << ",,,\n";
        if (!os) throw IoError("write failed: " + csv_path);
    }
    nlohmann::json j;
    j["frames"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["frames"].push_back({{"frame", r.frame},
                               {"t", r.t},
                               {"psnr", eval_value(r.psnr)},
                               {"ssim", eval_value(r.ssim)},
                               {"cd", eval_value(r.cd)},
                               {"hd95", eval_value(r.hd95)}});
    j["summary"] = {{"psnr", eval_value(summary.psnr)},
                    {"ssim", eval_value(summary.ssim)},
                    {"cd", eval_value(summary.cd)},
                    {"hd95", eval_value(summary.hd95)},
                    {"mse_d", eval_value(summary.mse_d)}};
    std::ofstream os(json_path);
    if (!os) throw IoError("cannot open for writing: " + json_path);
    os << j.dump(2) << "\n";
}

} // namespace colonsplat
