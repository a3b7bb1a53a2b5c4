// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/threading.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/deform/checkpoint.hpp>
#include <colonsplat/deform/field.hpp>
#include <colonsplat/io/ply.hpp>
#include <colonsplat/loss/losses.hpp>
#include <colonsplat/scene/camera.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>
#include <colonsplat/train/adam.hpp>
#include <colonsplat/train/densify.hpp>
#include <colonsplat/train/objective.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace colonsplat {

struct TrainConfig {
    int iterations = 6000;
    int warmup_iterations = 1000; // canonical-only phase, field untouched

    double lr_positions = 1.6e-4;
    double lr_positions_final = 0.01; // exp decay multiplier reached at the last step
    double lr_log_scales = 5e-3;
    double lr_rotations = 1e-3;
    double lr_opacity = 5e-2;
    double lr_colors = 2.5e-3;
    double lr_embeddings = 1e-3;
    double lr_grids = 1.6e-3;
    double lr_mlp = 1.6e-4;
    AdamParams adam; // (0.9, 0.999, 1e-15)

    int densify_start = 500, densify_stop = 4000, densify_interval = 200;
    DensifyConfig densify;

    LossWeights weights;
    int knn_k = 8;

    bool no_constraints = false;
    bool no_knn = false;
    bool no_delta_c = false;
    bool freeze_deform = false; // keep the field at identity for the whole run
    bool deterministic = false; // round-robin frame order instead of uniform sampling
    std::uint64_t seed = 0;

    int checkpoint_interval = 0;  // 0: final checkpoint only
    std::string checkpoint_dir;  // empty: nothing written
    RenderOptions render;
    FieldConfig field;
    int threads = 1;
};

struct TrainLogRow {
    int iter = 0;
    double rgb = 0, tv = 0, knn = 0, depth = 0, co = 0, cv = 0, total = 0;
    size_t n = 0;
};

template <typename T>
struct TrainResult {
    GaussianCloud<T> cloud;
    DeformationField<T> field;
    std::vector<TrainLogRow> log;
};

namespace train_detail {

inline void write_log_csv(const std::string& path, const std::vector<TrainLogRow>& log)
{
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw IoError("cannot open for writing: " + tmp);
        os << "iter,rgb,tv,knn,depth,co,cv,total,n\n";
        char buf[256];
        for (const auto& r : log) {
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                          r.iter, r.rgb, r.tv, r.knn, r.depth, r.co, r.cv, r.total, r.n);
            os << buf;
        }
        if (!os) throw IoError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("rename failed: " + tmp + " -> " + path);
}

template <typename T>
void save_cloud_atomic(const std::string& path, const GaussianCloud<T>& cloud)
{
    const std::string tmp = path + ".tmp";
    save_ply(tmp, cloud);
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("rename failed: " + tmp + " -> " + path);
}

template <typename T>
void write_checkpoint(const TrainConfig& cfg, int iter, const GaussianCloud<T>& cloud,
                      const DeformationField<T>& field)
{
    if (cfg.checkpoint_dir.empty()) return;
    std::uint32_t extra = 0;
    if (cfg.no_knn) extra |= kFieldNoKnn;
    if (cfg.freeze_deform) extra |= kFieldFrozen;
    save_cloud_atomic(cfg.checkpoint_dir + "/point_cloud_" + std::to_string(iter) + ".ply",
                      cloud);
    save_field(cfg.checkpoint_dir + "/deform_" + std::to_string(iter) + ".bin", field, extra);
}

} // namespace train_detail

// Full optimization loop: per-iteration single-frame objective, Adam per
// parameter group, warmup with the field held out, densify/prune window,
// invariant re-projection after every step, atomic checkpoints.
template <typename T>
TrainResult<T> train(const Dataset<T>& dataset, GaussianCloud<T> cloud, TrainConfig cfg)
{
    static_assert(sizeof(Vec3<T>) == 3 * sizeof(T), "Vec3 must be contiguous scalars");
    static_assert(sizeof(Quat<T>) == 4 * sizeof(T), "Quat must be contiguous scalars");

    if (cfg.iterations < 0) throw UsageError("iterations must be >= 0");
    if (cfg.iterations > 0 && cfg.warmup_iterations >= cfg.iterations)
        throw UsageError("warmup_iterations must be < iterations");
    for (double lr : {cfg.lr_positions, cfg.lr_log_scales, cfg.lr_rotations, cfg.lr_opacity,
                      cfg.lr_colors, cfg.lr_embeddings, cfg.lr_grids, cfg.lr_mlp})
        if (lr <= 0) throw UsageError("learning rates must be > 0");

    const auto train_idx = dataset.train_indices();
    if (train_idx.empty()) throw EmptyTrainSplit("train");

    cfg.field.no_constraints = cfg.no_constraints;
    cfg.field.no_delta_c = cfg.no_delta_c;
    cfg.field.embedding_dim = cloud.embedding_dim;

    TrainResult<T> res;
    res.field = make_field(cfg.field, cloud, cfg.seed);
    DeformationField<T> field_grads = zero_like(res.field);

    const size_t emb_dim = static_cast<size_t>(cloud.embedding_dim);
    ThreadPool pool(cfg.threads);
    std::mt19937_64 rng(cfg.seed);

    // Optimizer state: one group per cloud tensor, one per field tensor.
    AdamState<T> st_pos, st_scale, st_rot, st_opac, st_color, st_emb;
    auto init_cloud_states = [&](size_t n) {
        st_pos.m.assign(n * 3, T(0));
        st_pos.v.assign(n * 3, T(0));
        st_scale.m.assign(n * 3, T(0));
        st_scale.v.assign(n * 3, T(0));
        st_rot.m.assign(n * 4, T(0));
        st_rot.v.assign(n * 4, T(0));
        st_opac.m.assign(n, T(0));
        st_opac.v.assign(n, T(0));
        st_color.m.assign(n * 3, T(0));
        st_color.v.assign(n * 3, T(0));
        st_emb.m.assign(n * emb_dim, T(0));
        st_emb.v.assign(n * emb_dim, T(0));
    };
    init_cloud_states(cloud.size());

    std::vector<AdamState<T>> st_field;
    std::vector<double> field_lrs;
    res.field.for_each_tensor([&](int group, std::vector<T>& data) {
        AdamState<T> st;
        st.init(data.size());
        st_field.push_back(std::move(st));
        field_lrs.push_back(group == 0 ? cfg.lr_grids : cfg.lr_mlp);
    });

    bool knn_active = !cfg.no_knn && cloud.size() >= 2;
    NeighborIndex ni;
    if (knn_active) ni = build_knn(cloud, cfg.knn_k);

    std::vector<T> grad_acc(cloud.size(), T(0));
    std::vector<int> grad_cnt(cloud.size(), 0);

    CloudGrads<T> cg(cloud.size(), cloud.embedding_dim);
    RenderGrads<T> rg;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const int fi = cfg.deterministic
                           ? train_idx[static_cast<size_t>(iter) % train_idx.size()]
                           : train_idx[std::uniform_int_distribution<size_t>(
                                 0, train_idx.size() - 1)(rng)];
        const Frame<T>& frame = dataset.frames[static_cast<size_t>(fi)];
        const bool use_field = iter >= cfg.warmup_iterations && !cfg.freeze_deform;

        cg.resize(cloud.size(), cloud.embedding_dim);
        if (use_field) zero_tensors(field_grads);
        const auto terms =
            objective_backward(cloud, res.field, use_field, frame, knn_active ? &ni : nullptr,
                               cfg.weights, cfg.render, pool, cg, field_grads, &rg);
        if (!std::isfinite(static_cast<double>(terms.total)))
            throw NonFiniteLoss(iter, "total training loss is not finite");

        // Densification statistics: mean NDC-space positional gradient.
        const T half_w = T(frame.camera.width) / T(2), half_h = T(frame.camera.height) / T(2);
        for (size_t i = 0; i < cloud.size(); ++i) {
            const Vec2<T> g(rg.d_mean2d[i][0] * half_w, rg.d_mean2d[i][1] * half_h);
            const T norm = g.norm();
            if (norm > T(0)) {
                grad_acc[i] += norm;
                grad_cnt[i] += 1;
            }
        }

        // Adam updates; the position lr decays exponentially over the run.
        const double decay_t =
            cfg.iterations > 1 ? static_cast<double>(iter) / (cfg.iterations - 1) : 0.0;
        const T lr_pos = T(cfg.lr_positions * std::pow(cfg.lr_positions_final, decay_t));
        const size_t n = cloud.size();
        adam_step(st_pos, reinterpret_cast<T*>(cloud.positions.data()),
                  reinterpret_cast<const T*>(cg.d_position.data()), n * 3, lr_pos, cfg.adam);
        adam_step(st_scale, reinterpret_cast<T*>(cloud.log_scales.data()),
                  reinterpret_cast<const T*>(cg.d_log_scale.data()), n * 3, T(cfg.lr_log_scales),
                  cfg.adam);
        adam_step(st_rot, reinterpret_cast<T*>(cloud.rotations.data()),
                  reinterpret_cast<const T*>(cg.d_rotation.data()), n * 4, T(cfg.lr_rotations),
                  cfg.adam);
        adam_step(st_opac, cloud.opacity_logits.data(), cg.d_opacity_logit.data(), n,
                  T(cfg.lr_opacity), cfg.adam);
        adam_step(st_color, reinterpret_cast<T*>(cloud.base_colors.data()),
                  reinterpret_cast<const T*>(cg.d_color.data()), n * 3, T(cfg.lr_colors),
                  cfg.adam);
        adam_step(st_emb, cloud.embeddings.data(), cg.d_embedding.data(), n * emb_dim,
                  T(cfg.lr_embeddings), cfg.adam);
        if (use_field) {
            size_t ti = 0;
            std::vector<std::vector<T>*> params, grads;
            res.field.for_each_tensor([&](int, std::vector<T>& d) { params.push_back(&d); });
            field_grads.for_each_tensor([&](int, std::vector<T>& d) { grads.push_back(&d); });
            for (; ti < params.size(); ++ti)
                adam_step(st_field[ti], params[ti]->data(), grads[ti]->data(),
                          params[ti]->size(), T(field_lrs[ti]), cfg.adam);
        }

        // Re-establish type invariants; cap canonical scales so the deformed
        // per-axis linear scale stays within its fraction of the extent.
        cloud.normalize_invariants();
        if (!cfg.no_constraints) {
            const T extent = scene_extent(cloud);
            if (extent > T(0)) {
                const T log_cap = std::log(T(cfg.field.scale_cap_fraction) * extent);
                for (auto& s : cloud.log_scales)
                    for (int k = 0; k < 3; ++k) s[k] = std::min(s[k], log_cap);
            }
        }

        const int it1 = iter + 1;
        if (cfg.densify_interval > 0 && it1 >= cfg.densify_start && it1 <= cfg.densify_stop &&
            it1 % cfg.densify_interval == 0) {
            std::vector<T> avg(cloud.size(), T(0));
            for (size_t i = 0; i < cloud.size(); ++i)
                if (grad_cnt[i] > 0) avg[i] = grad_acc[i] / T(grad_cnt[i]);
            const T extent = scene_extent(cloud);
            const auto report = densify_and_prune(cloud, avg, extent, cfg.densify, rng);
            if (report.changed) {
                adam_remap(st_pos, report.src, 3);
                adam_remap(st_scale, report.src, 3);
                adam_remap(st_rot, report.src, 4);
                adam_remap(st_opac, report.src, 1);
                adam_remap(st_color, report.src, 3);
                adam_remap(st_emb, report.src, static_cast<int>(emb_dim));
                knn_active = !cfg.no_knn && cloud.size() >= 2;
                if (knn_active) ni = build_knn(cloud, cfg.knn_k);
            }
            grad_acc.assign(cloud.size(), T(0));
            grad_cnt.assign(cloud.size(), 0);
        }

        TrainLogRow row;
        row.iter = iter + 1; // matches the 1-based checkpoint numbering
        row.rgb = static_cast<double>(terms.rgb);
        row.tv = static_cast<double>(terms.tv);
        row.knn = static_cast<double>(terms.knn);
        row.depth = static_cast<double>(terms.depth);
        row.co = static_cast<double>(terms.co);
        row.cv = static_cast<double>(terms.cv);
        row.total = static_cast<double>(terms.total);
        row.n = cloud.size();
        res.log.push_back(row);

        if (cfg.checkpoint_interval > 0 && it1 % cfg.checkpoint_interval == 0 &&
            it1 < cfg.iterations)
            train_detail::write_checkpoint(cfg, it1, cloud, res.field);
    }

    res.cloud = std::move(cloud);
    train_detail::write_checkpoint(cfg, cfg.iterations, res.cloud, res.field);
    if (!cfg.checkpoint_dir.empty())
        train_detail::write_log_csv(cfg.checkpoint_dir + "/train_log.csv", res.log);
    return res;
}

} // namespace colonsplat
