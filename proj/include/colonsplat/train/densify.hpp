// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/math.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace colonsplat {

struct DensifyConfig {
    double grad_threshold = 2e-4;        // mean NDC positional gradient trigger
    double opacity_prune_threshold = 0.005;
    double scale_prune_fraction = 0.10;  // prune when a linear scale exceeds this x extent
    double split_scale_fraction = 0.01;  // split (vs clone) above this x extent
    double split_scale_shrink = 1.6;     // children scale divisor
};

struct DensifyReport {
    std::vector<int> src; // per new-cloud row: old index, or -1 for fresh rows
    bool changed = false;
    bool guard_tripped = false;
    int n_cloned = 0, n_split = 0, n_pruned = 0;
};

namespace densify_detail {

template <typename T>
Vec3<T> unit_ball_sample(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        Vec3<T> v(static_cast<T>(u(rng)), static_cast<T>(u(rng)), static_cast<T>(u(rng)));
        if (v.squaredNorm() <= T(1)) return v;
    }
}

template <typename T>
void copy_row(const GaussianCloud<T>& from, size_t i, GaussianCloud<T>& to)
{
    to.positions.push_back(from.positions[i]);
    to.log_scales.push_back(from.log_scales[i]);
    to.rotations.push_back(from.rotations[i]);
    to.opacity_logits.push_back(from.opacity_logits[i]);
    to.base_colors.push_back(from.base_colors[i]);
    to.embeddings.insert(to.embeddings.end(), from.embedding(i),
                         from.embedding(i) + from.embedding_dim);
}

} // namespace densify_detail

// Adaptive density control. Gaussians whose mean screen-space positional
// gradient exceeds the threshold are cloned (small) or split into two
// children inside the parent's 1-sigma ellipsoid (large; parent removed).
// Afterwards, low-opacity or oversized Gaussians are pruned; if that would
// empty the cloud, the highest-opacity candidate is kept and the guard flag
// is raised. report.src maps new rows to old rows for moment remapping.
template <typename T>
DensifyReport densify_and_prune(GaussianCloud<T>& cloud, const std::vector<T>& avg_grad,
                                T extent, const DensifyConfig& cfg, std::mt19937_64& rng)
{
    const size_t n = cloud.size();
    DensifyReport report;

    GaussianCloud<T> cand;
    cand.embedding_dim = cloud.embedding_dim;
    std::vector<int> cand_src;
    const T split_above = T(cfg.split_scale_fraction) * extent;

    std::vector<size_t> appended_from; // parents of clones/split-children, in order
    std::vector<bool> is_split_child;
    for (size_t i = 0; i < n; ++i) {
        const bool dense = avg_grad[i] > T(cfg.grad_threshold);
        const T max_scale = std::exp(cloud.log_scales[i].maxCoeff());
        const bool split = dense && max_scale > split_above;
        if (!split) {
            densify_detail::copy_row(cloud, i, cand);
            cand_src.push_back(static_cast<int>(i));
        }
        if (dense && !split) {
            appended_from.push_back(i);
            is_split_child.push_back(false);
            ++report.n_cloned;
        } else if (split) {
            appended_from.push_back(i);
            appended_from.push_back(i);
            is_split_child.push_back(true);
            is_split_child.push_back(true);
            ++report.n_split;
        }
    }
    for (size_t a = 0; a < appended_from.size(); ++a) {
        const size_t i = appended_from[a];
        densify_detail::copy_row(cloud, i, cand);
        cand_src.push_back(-1);
        if (is_split_child[a]) {
            const Vec3<T> xi = densify_detail::unit_ball_sample<T>(rng);
            const Mat3<T> rot = quat_to_rotation(Quat<T>(cloud.rotations[i].normalized()));
            const Vec3<T> radii = cloud.log_scales[i].array().exp().matrix();
            cand.positions.back() = cloud.positions[i] + rot * (radii.cwiseProduct(xi));
            cand.log_scales.back() =
                cloud.log_scales[i] - Vec3<T>::Constant(std::log(T(cfg.split_scale_shrink)));
        }
    }

    // Prune pass over the candidates.
    GaussianCloud<T> kept;
    kept.embedding_dim = cloud.embedding_dim;
    for (size_t i = 0; i < cand.size(); ++i) {
        const bool low_opacity = cand.opacity(i) < T(cfg.opacity_prune_threshold);
        const bool oversized =
            std::exp(cand.log_scales[i].maxCoeff()) > T(cfg.scale_prune_fraction) * extent;
        if (low_opacity || oversized) {
            ++report.n_pruned;
            continue;
        }
        densify_detail::copy_row(cand, i, kept);
        report.src.push_back(cand_src[i]);
    }
    if (kept.size() == 0 && cand.size() > 0) {
        size_t best = 0;
        for (size_t i = 1; i < cand.size(); ++i)
            if (cand.opacity_logits[i] > cand.opacity_logits[best]) best = i;
        densify_detail::copy_row(cand, best, kept);
        report.src.push_back(cand_src[best]);
        report.n_pruned = static_cast<int>(cand.size()) - 1;
        report.guard_tripped = true;
    }

    report.changed = report.n_cloned > 0 || report.n_split > 0 || report.n_pruned > 0;
    if (report.changed) {
        cloud = std::move(kept);
    } else {
        report.src.resize(n);
        for (size_t i = 0; i < n; ++i) report.src[i] = static_cast<int>(i);
    }
    return report;
}

} // namespace colonsplat
