// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>
#include <colonsplat/spatial/kdtree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace colonsplat {

// Weights of the five regularizers; the RGB term always has weight 1.
struct LossWeights {
    double tv = 0.01;
    double knn = 1.0;
    double depth = 0.5;
    double co = 0.01;
    double cv = 0.001;
};

namespace loss_detail {

template <typename T>
T sgn(T v)
{
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

} // namespace loss_detail

// ---------------------------------------------------------------- rgb (L1)

template <typename T>
T loss_rgb(const Image<T>& rendered, const Image<T>& target)
{
    if (!rendered.same_shape(target)) throw DimMismatch("loss_rgb image shapes differ");
    T acc = T(0);
    for (size_t i = 0; i < rendered.data.size(); ++i)
        acc += std::abs(rendered.data[i] - target.data[i]);
    return acc / T(rendered.data.size());
}

template <typename T>
void loss_rgb_backward(const Image<T>& rendered, const Image<T>& target, T g, Image<T>& d_rendered)
{
    if (!rendered.same_shape(target) || !rendered.same_shape(d_rendered))
        throw DimMismatch("loss_rgb_backward image shapes differ");
    const T scale = g / T(rendered.data.size());
    for (size_t i = 0; i < rendered.data.size(); ++i)
        d_rendered.data[i] += scale * loss_detail::sgn(rendered.data[i] - target.data[i]);
}

// ------------------------------------------------- total variation (L1, anisotropic)

template <typename T>
size_t tv_term_count(const Image<T>& img)
{
    const size_t h = static_cast<size_t>(img.height), w = static_cast<size_t>(img.width);
    const size_t pairs = h * (w - 1) + (h - 1) * w;
    return pairs * static_cast<size_t>(img.channels);
}

template <typename T>
T loss_tv(const Image<T>& img)
{
    const size_t terms = tv_term_count(img);
    if (terms == 0) return T(0);
    T acc = T(0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                if (x + 1 < img.width) acc += std::abs(img.at(y, x + 1, c) - img.at(y, x, c));
                if (y + 1 < img.height) acc += std::abs(img.at(y + 1, x, c) - img.at(y, x, c));
            }
    return acc / T(terms);
}

template <typename T>
void loss_tv_backward(const Image<T>& img, T g, Image<T>& d_img)
{
    if (!img.same_shape(d_img)) throw DimMismatch("loss_tv_backward image shapes differ");
    const size_t terms = tv_term_count(img);
    if (terms == 0) return;
    const T scale = g / T(terms);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                if (x + 1 < img.width) {
                    const T s = loss_detail::sgn(img.at(y, x + 1, c) - img.at(y, x, c));
                    d_img.at(y, x + 1, c) += scale * s;
                    d_img.at(y, x, c) -= scale * s;
                }
                if (y + 1 < img.height) {
                    const T s = loss_detail::sgn(img.at(y + 1, x, c) - img.at(y, x, c));
                    d_img.at(y + 1, x, c) += scale * s;
                    d_img.at(y, x, c) -= scale * s;
                }
            }
}

// ------------------------------------------------------------ knn smoothness

// K-nearest-neighbor lists in canonical space; each node has exactly
// min(k, N-1) neighbors, distance ties broken by lower index.
struct NeighborIndex {
    int k = 0;
    size_t n = 0;
    std::vector<int> idx;   // flat, stride k, first count[i] entries valid
    std::vector<int> count; // per node
};

template <typename T>
NeighborIndex build_knn(const std::vector<Vec3<T>>& positions, int k)
{
    const size_t n = positions.size();
    if (n < 2) throw TooFewGaussians("build_knn needs at least 2 points");
    NeighborIndex ni;
    ni.k = k;
    ni.n = n;
    ni.idx.assign(n * static_cast<size_t>(k), -1);
    ni.count.assign(n, 0);
    KdTree<T> tree(positions);
    std::vector<int> out;
    for (size_t i = 0; i < n; ++i) {
        tree.knn(positions[i], std::min<int>(k, static_cast<int>(n) - 1),
                 static_cast<int>(i), out);
        ni.count[i] = static_cast<int>(out.size());
        std::copy(out.begin(), out.end(), ni.idx.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(k)));
    }
    return ni;
}

template <typename T>
NeighborIndex build_knn(const GaussianCloud<T>& cloud, int k)
{
    return build_knn(cloud.positions, k);
}

template <typename T>
T loss_knn(const std::vector<Vec3<T>>& x, const NeighborIndex& ni)
{
    if (x.size() != ni.n) throw DimMismatch("loss_knn index size mismatch");
    const size_t n = x.size();
    if (n == 0) return T(0);
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        Vec3<T> mean = Vec3<T>::Zero();
        const int ki = ni.count[i];
        for (int j = 0; j < ki; ++j) mean += x[static_cast<size_t>(ni.idx[i * static_cast<size_t>(ni.k) + static_cast<size_t>(j)])];
        mean /= T(ki);
        acc += (x[i] - mean).squaredNorm();
    }
    return acc / T(n);
}

template <typename T>
void loss_knn_backward(const std::vector<Vec3<T>>& x, const NeighborIndex& ni, T g,
                       std::vector<Vec3<T>>& d_x)
{
    if (x.size() != ni.n || d_x.size() != ni.n) throw DimMismatch("loss_knn_backward size mismatch");
    const size_t n = x.size();
    if (n == 0) return;
    const T two_over_n = g * T(2) / T(n);
    for (size_t i = 0; i < n; ++i) {
        Vec3<T> mean = Vec3<T>::Zero();
        const int ki = ni.count[i];
        for (int j = 0; j < ki; ++j) mean += x[static_cast<size_t>(ni.idx[i * static_cast<size_t>(ni.k) + static_cast<size_t>(j)])];
        mean /= T(ki);
        const Vec3<T> res = x[i] - mean;
        d_x[i] += two_over_n * res;
        const Vec3<T> spread = (two_over_n / T(ki)) * res;
        for (int j = 0; j < ki; ++j)
            d_x[static_cast<size_t>(ni.idx[i * static_cast<size_t>(ni.k) + static_cast<size_t>(j)])] -= spread;
    }
}

// ---------------------------------------------------- color regularizers

template <typename T>
T loss_color_offset(const std::vector<Vec3<T>>& delta_c)
{
    if (delta_c.empty()) return T(0);
    T acc = T(0);
    for (const auto& d : delta_c) acc += d.squaredNorm();
    return acc / T(delta_c.size());
}

template <typename T>
void loss_color_offset_backward(const std::vector<Vec3<T>>& delta_c, T g,
                                std::vector<Vec3<T>>& d_delta_c)
{
    if (delta_c.empty()) return;
    const T scale = g * T(2) / T(delta_c.size());
    for (size_t i = 0; i < delta_c.size(); ++i) d_delta_c[i] += scale * delta_c[i];
}

namespace loss_detail {

// Mean computed relative to the first element; identical inputs yield the
// first element exactly, making the variance vanish exactly in that case.
template <typename T>
Vec3<T> shifted_mean(const std::vector<Vec3<T>>& v)
{
    Vec3<T> acc = Vec3<T>::Zero();
    for (const auto& c : v) acc += c - v.front();
    return v.front() + acc / T(v.size());
}

} // namespace loss_detail

template <typename T>
T loss_color_variance(const std::vector<Vec3<T>>& colors)
{
    if (colors.empty()) return T(0);
    const Vec3<T> mean = loss_detail::shifted_mean(colors);
    T acc = T(0);
    for (const auto& c : colors) acc += (c - mean).squaredNorm();
    return acc / T(colors.size());
}

// The mean's own dependence cancels: sum of residuals is zero, so the exact
// gradient is (2/N)(c_i - mean).
template <typename T>
void loss_color_variance_backward(const std::vector<Vec3<T>>& colors, T g,
                                  std::vector<Vec3<T>>& d_colors)
{
    if (colors.empty()) return;
    const Vec3<T> mean = loss_detail::shifted_mean(colors);
    const T scale = g * T(2) / T(colors.size());
    for (size_t i = 0; i < colors.size(); ++i) d_colors[i] += scale * (colors[i] - mean);
}

// ----------------------------------------------------------------- depth

inline constexpr double kDepthRangeEps = 1e-8;

namespace loss_detail {

template <typename T>
struct DepthNorm {
    T mn = T(0), range_true = T(0), range = T(1);
    int argmin = -1, argmax = -1; // first valid pixel attaining the extremum
    size_t valid = 0;
};

template <typename T>
DepthNorm<T> depth_norm(const Image<T>& map, const std::vector<std::uint8_t>& valid)
{
    DepthNorm<T> s;
    T mx = T(0);
    for (size_t i = 0; i < map.data.size(); ++i) {
        if (!valid[i]) continue;
        const T v = map.data[i];
        if (s.valid == 0) {
            s.mn = mx = v;
            s.argmin = s.argmax = static_cast<int>(i);
        } else {
            if (v < s.mn) {
                s.mn = v;
                s.argmin = static_cast<int>(i);
            }
            if (v > mx) {
                mx = v;
                s.argmax = static_cast<int>(i);
            }
        }
        ++s.valid;
    }
    s.range_true = mx - s.mn;
    s.range = std::max(s.range_true, T(kDepthRangeEps));
    return s;
}

} // namespace loss_detail

template <typename T>
T loss_depth(const Image<T>& rendered, const Image<T>& sup, const std::vector<std::uint8_t>& valid)
{
    if (!rendered.same_shape(sup)) throw DimMismatch("loss_depth image shapes differ");
    if (valid.size() != rendered.data.size()) throw DimMismatch("loss_depth mask size mismatch");
    const auto nr = loss_detail::depth_norm(rendered, valid);
    const auto ns = loss_detail::depth_norm(sup, valid);
    if (nr.valid == 0) throw NoValidPixels("loss_depth has no valid pixels");
    T acc = T(0);
    for (size_t i = 0; i < rendered.data.size(); ++i) {
        if (!valid[i]) continue;
        const T rn = (rendered.data[i] - nr.mn) / nr.range;
        const T sn = (sup.data[i] - ns.mn) / ns.range;
        acc += std::abs(rn - sn);
    }
    return acc / T(nr.valid);
}

// Gradient w.r.t. the rendered map. min, max, and the range are functions of
// the rendered pixels; their subgradients route to the first valid pixel
// attaining each extremum. A degenerate rendered range (<= eps) pins the
// gradient to zero.
template <typename T>
void loss_depth_backward(const Image<T>& rendered, const Image<T>& sup,
                         const std::vector<std::uint8_t>& valid, T g, Image<T>& d_rendered)
{
    if (!rendered.same_shape(sup) || !rendered.same_shape(d_rendered))
        throw DimMismatch("loss_depth_backward image shapes differ");
    if (valid.size() != rendered.data.size()) throw DimMismatch("loss_depth mask size mismatch");
    const auto nr = loss_detail::depth_norm(rendered, valid);
    const auto ns = loss_detail::depth_norm(sup, valid);
    if (nr.valid == 0) throw NoValidPixels("loss_depth_backward has no valid pixels");
    if (nr.range_true <= T(kDepthRangeEps)) return;

    const T inv = T(1) / (T(nr.valid) * nr.range);
    T sum_sign = T(0), sum_sign_rn = T(0);
    for (size_t i = 0; i < rendered.data.size(); ++i) {
        if (!valid[i]) continue;
        const T rn = (rendered.data[i] - nr.mn) / nr.range;
        const T sn = (sup.data[i] - ns.mn) / ns.range;
        const T s = loss_detail::sgn(rn - sn);
        d_rendered.data[i] += g * s * inv;
        sum_sign += s;
        sum_sign_rn += s * rn;
    }
    d_rendered.data[static_cast<size_t>(nr.argmin)] += g * (sum_sign_rn - sum_sign) * inv;
    d_rendered.data[static_cast<size_t>(nr.argmax)] -= g * sum_sign_rn * inv;
}

// ----------------------------------------------------------------- total

template <typename T>
T total_loss(T rgb, T tv, T knn, T depth, T co, T cv, const LossWeights& w)
{
    return rgb + T(w.tv) * tv + T(w.knn) * knn + T(w.depth) * depth + T(w.co) * co + T(w.cv) * cv;
}

} // namespace colonsplat
