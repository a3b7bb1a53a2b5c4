// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/threading.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/deform/field.hpp>
#include <colonsplat/loss/losses.hpp>
#include <colonsplat/raster/rasterizer.hpp>
#include <colonsplat/scene/camera.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>

#include <cstdint>
#include <vector>

namespace colonsplat {

template <typename T>
struct ObjectiveTerms {
    T rgb = T(0), tv = T(0), knn = T(0), depth = T(0), co = T(0), cv = T(0), total = T(0);
};

template <typename T>
std::vector<std::uint8_t> depth_valid_mask(const Image<T>& depth_sup)
{
    std::vector<std::uint8_t> mask(depth_sup.data.size(), 0);
    for (size_t i = 0; i < depth_sup.data.size(); ++i)
        mask[i] = depth_sup.data[i] > T(0) ? 1 : 0;
    return mask;
}

namespace objective_detail {

inline size_t count_valid(const std::vector<std::uint8_t>& mask)
{
    size_t v = 0;
    for (auto m : mask) v += m;
    return v;
}

} // namespace objective_detail

// One full evaluation of the training objective on a single frame.
// use_field = false renders the canonical cloud under the identity map
// (warmup / frozen-field mode). knn_index == nullptr drops the knn term.
template <typename T>
ObjectiveTerms<T> objective_forward(const GaussianCloud<T>& cloud,
                                    const DeformationField<T>& field, bool use_field,
                                    const Frame<T>& frame, const NeighborIndex* knn_index,
                                    const LossWeights& weights, const RenderOptions& ropts,
                                    const ThreadPool& pool, RenderOutput<T>* render_out = nullptr)
{
    DeformResult<T> deformed;
    if (use_field)
        deformed = deform(field, cloud, frame.camera.t, false, pool);
    else
        deformed.cloud = cloud;

    const auto splats = project(deformed.cloud, frame.camera);
    auto out = render(splats, frame.camera, ropts, pool);

    ObjectiveTerms<T> terms;
    terms.rgb = loss_rgb(out.rgb, frame.rgb);
    terms.tv = loss_tv(out.rgb);
    if (knn_index) terms.knn = loss_knn(deformed.cloud.positions, *knn_index);
    if (!frame.depth_sup.data.empty()) {
        const auto mask = depth_valid_mask(frame.depth_sup);
        if (objective_detail::count_valid(mask) > 0)
            terms.depth = loss_depth(out.depth, frame.depth_sup, mask);
    }
    terms.co = loss_color_offset(deformed.aux.dc);
    terms.cv = loss_color_variance(deformed.cloud.base_colors);
    terms.total = total_loss(terms.rgb, terms.tv, terms.knn, terms.depth, terms.co, terms.cv,
                             weights);
    if (render_out) *render_out = std::move(out);
    return terms;
}

// Forward plus full adjoint. Canonical-cloud gradients accumulate into cg,
// field gradients into field_grads (both pre-zeroed by the caller). With
// use_field = false the identity map routes deformed-state gradients
// straight onto the canonical parameters and the field stays untouched.
template <typename T>
ObjectiveTerms<T> objective_backward(const GaussianCloud<T>& cloud,
                                     const DeformationField<T>& field, bool use_field,
                                     const Frame<T>& frame, const NeighborIndex* knn_index,
                                     const LossWeights& weights, const RenderOptions& ropts,
                                     const ThreadPool& pool, CloudGrads<T>& cg,
                                     DeformationField<T>& field_grads,
                                     RenderGrads<T>* rg_out = nullptr)
{
    DeformResult<T> deformed;
    if (use_field)
        deformed = deform(field, cloud, frame.camera.t, true, pool);
    else
        deformed.cloud = cloud;

    const auto splats = project(deformed.cloud, frame.camera);
    auto out = render(splats, frame.camera, ropts, pool);

    ObjectiveTerms<T> terms;
    terms.rgb = loss_rgb(out.rgb, frame.rgb);
    terms.tv = loss_tv(out.rgb);
    if (knn_index) terms.knn = loss_knn(deformed.cloud.positions, *knn_index);
    std::vector<std::uint8_t> mask;
    bool depth_active = false;
    if (!frame.depth_sup.data.empty()) {
        mask = depth_valid_mask(frame.depth_sup);
        depth_active = objective_detail::count_valid(mask) > 0;
        if (depth_active) terms.depth = loss_depth(out.depth, frame.depth_sup, mask);
    }
    terms.co = loss_color_offset(deformed.aux.dc);
    terms.cv = loss_color_variance(deformed.cloud.base_colors);
    terms.total = total_loss(terms.rgb, terms.tv, terms.knn, terms.depth, terms.co, terms.cv,
                             weights);

    // Image-space adjoints.
    Image<T> d_rgb(frame.camera.width, frame.camera.height, 3);
    Image<T> d_depth(frame.camera.width, frame.camera.height, 1);
    Image<T> d_alpha(frame.camera.width, frame.camera.height, 1);
    loss_rgb_backward(out.rgb, frame.rgb, T(1), d_rgb);
    loss_tv_backward(out.rgb, T(weights.tv), d_rgb);
    if (depth_active)
        loss_depth_backward(out.depth, frame.depth_sup, mask, T(weights.depth), d_depth);

    auto rg = render_backward(d_rgb, d_depth, d_alpha, out, splats, deformed.cloud,
                              frame.camera, ropts, pool);

    // Deformed-state upstream gradients.
    if (knn_index)
        loss_knn_backward(deformed.cloud.positions, *knn_index, T(weights.knn), rg.d_position);
    loss_color_variance_backward(deformed.cloud.base_colors, T(weights.cv), rg.d_color);

    if (use_field) {
        std::vector<Vec3<T>> d_delta_c(cloud.size(), Vec3<T>::Zero());
        loss_color_offset_backward(deformed.aux.dc, T(weights.co), d_delta_c);
        deform_backward(field, cloud, frame.camera.t, deformed, rg.d_position, rg.d_log_scale,
                        rg.d_rotation, rg.d_color, rg.d_opacity_logit, d_delta_c, field_grads,
                        cg, pool);
    } else {
        for (size_t i = 0; i < cloud.size(); ++i) {
            cg.d_position[i] += rg.d_position[i];
            cg.d_log_scale[i] += rg.d_log_scale[i];
            cg.d_rotation[i] += rg.d_rotation[i];
            cg.d_color[i] += rg.d_color[i];
            cg.d_opacity_logit[i] += rg.d_opacity_logit[i];
        }
    }
    if (rg_out) *rg_out = std::move(rg);
    return terms;
}

} // namespace colonsplat
