// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/math.hpp>
#include <colonsplat/core/threading.hpp>
#include <colonsplat/core/types.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace colonsplat {

struct FieldConfig {
    int levels = 2;        // multi-resolution levels, each doubling resolution
    int base_spatial = 32; // R_s at level 0
    int base_temporal = 16;// R_t at level 0
    int features = 16;     // F per plane
    int width = 64;        // trunk width
    int depth = 2;         // trunk layer count
    int embedding_dim = 8; // per-Gaussian embedding consumed by the color head
    double tau_s = 0.05;   // clip bound on log-scale deltas
    double tau_r = 0.05;   // clip bound on quaternion deltas
    double scale_cap_fraction = 0.05; // linear-scale ceiling, fraction of scene extent
    bool no_constraints = false; // ablation: no clips, no cap, trainable opacity delta
    bool no_delta_c = false;     // ablation: bypass the color head
};

template <typename T>
struct Plane {
    int ru = 0, rv = 0, f = 0;
    std::vector<T> w; // [(v * ru + u) * f + k]
};

template <typename T>
struct Linear {
    int in = 0, out = 0;
    std::vector<T> w; // row-major [out][in]
    std::vector<T> b; // [out]
};

// Plane p samples coordinate pair kPlanePairs[p] out of (x, y, z, t).
// The first three planes are purely spatial, the last three spatio-temporal.
inline constexpr int kPlanePairs[6][2] = {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}};

template <typename T>
struct DeformationField {
    FieldConfig cfg;
    std::vector<std::array<Plane<T>, 6>> levels;
    Vec3<T> bbox_min = Vec3<T>::Zero();
    Vec3<T> bbox_max = Vec3<T>::Ones();
    std::vector<Linear<T>> trunk;
    Linear<T> head_dx, head_ds, head_dr, head_dc, head_da;

    int feature_dim() const { return 2 * cfg.features * cfg.levels; }

    // Enumerates every parameter tensor; group 0 = grids, 1 = mlp.
    template <typename Fn>
    void for_each_tensor(Fn&& fn)
    {
        for (auto& level : levels)
            for (auto& plane : level) fn(0, plane.w);
        for (auto& layer : trunk) {
            fn(1, layer.w);
            fn(1, layer.b);
        }
        for (Linear<T>* head : {&head_dx, &head_ds, &head_dr, &head_dc, &head_da}) {
            fn(1, head->w);
            fn(1, head->b);
        }
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const
    {
        for (const auto& level : levels)
            for (const auto& plane : level) fn(0, plane.w);
        for (const auto& layer : trunk) {
            fn(1, layer.w);
            fn(1, layer.b);
        }
        for (const Linear<T>* head : {&head_dx, &head_ds, &head_dr, &head_dc, &head_da}) {
            fn(1, head->w);
            fn(1, head->b);
        }
    }
};

namespace field_detail {

template <typename T>
Linear<T> make_linear(int in, int out)
{
    Linear<T> l;
    l.in = in;
    l.out = out;
    l.w.assign(static_cast<size_t>(in) * out, T(0));
    l.b.assign(static_cast<size_t>(out), T(0));
    return l;
}

template <typename T>
void kaiming_init(Linear<T>& l, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / l.in));
    for (auto& v : l.w) v = static_cast<T>(dist(rng));
}

template <typename T>
void linear_forward(const Linear<T>& l, const T* in, T* out)
{
    for (int o = 0; o < l.out; ++o) {
        const T* row = l.w.data() + static_cast<size_t>(o) * l.in;
        T acc = l.b[static_cast<size_t>(o)];
#pragma omp simd reduction(+ : acc)
        for (int j = 0; j < l.in; ++j) acc += row[j] * in[j];
        out[o] = acc;
    }
}

// Accumulates weight/bias gradients; d_in (accumulated) may be null.
template <typename T>
void linear_backward(const Linear<T>& l, const T* in, const T* d_out, Linear<T>& g, T* d_in)
{
    for (int o = 0; o < l.out; ++o) {
        const T go = d_out[o];
        g.b[static_cast<size_t>(o)] += go;
        T* grow = g.w.data() + static_cast<size_t>(o) * l.in;
#pragma omp simd
        for (int j = 0; j < l.in; ++j) grow[j] += go * in[j];
    }
    if (d_in) {
        for (int o = 0; o < l.out; ++o) {
            const T go = d_out[o];
            const T* row = l.w.data() + static_cast<size_t>(o) * l.in;
#pragma omp simd
            for (int j = 0; j < l.in; ++j) d_in[j] += row[j] * go;
        }
    }
}

// Bilinear sample with align-corners mapping of [0,1] onto [0, R-1].
template <typename T>
void sample_plane(const Plane<T>& pl, T cu, T cv, T* out, int* corner, T* frac)
{
    const T gu = cu * T(pl.ru - 1);
    const T gv = cv * T(pl.rv - 1);
    int iu = std::min(static_cast<int>(std::floor(gu)), pl.ru - 2);
    int iv = std::min(static_cast<int>(std::floor(gv)), pl.rv - 2);
    iu = std::max(iu, 0);
    iv = std::max(iv, 0);
    const T fu = gu - T(iu), fv = gv - T(iv);
    const T w00 = (T(1) - fu) * (T(1) - fv), w10 = fu * (T(1) - fv);
    const T w01 = (T(1) - fu) * fv, w11 = fu * fv;
    const T* c00 = pl.w.data() + (static_cast<size_t>(iv) * pl.ru + iu) * pl.f;
    const T* c10 = c00 + pl.f;
    const T* c01 = c00 + static_cast<size_t>(pl.ru) * pl.f;
    const T* c11 = c01 + pl.f;
#pragma omp simd
    for (int k = 0; k < pl.f; ++k)
        out[k] = w00 * c00[k] + w10 * c10[k] + w01 * c01[k] + w11 * c11[k];
    corner[0] = iu;
    corner[1] = iv;
    frac[0] = fu;
    frac[1] = fv;
}

} // namespace field_detail

// Fresh field over the canonical cloud: grids near one (product fusion),
// Kaiming trunk, zero heads so the deformation starts as the exact identity.
// The normalization bbox wraps canonical positions with a 5% margin.
template <typename T>
DeformationField<T> make_field(const FieldConfig& cfg, const GaussianCloud<T>& canonical,
                               std::uint64_t seed)
{
    if (canonical.size() == 0) throw EmptyCloud("make_field");
    DeformationField<T> f;
    f.cfg = cfg;
    f.cfg.embedding_dim = canonical.embedding_dim;

    Vec3<T> lo = canonical.positions.front(), hi = lo;
    for (const auto& p : canonical.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3<T> margin = T(0.05) * (hi - lo) + Vec3<T>::Constant(T(1e-6));
    f.bbox_min = lo - margin;
    f.bbox_max = hi + margin;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> grid_dist(0.9, 1.1);
    f.levels.resize(static_cast<size_t>(cfg.levels));
    for (int l = 0; l < cfg.levels; ++l) {
        const int rs = cfg.base_spatial << l;
        const int rt = cfg.base_temporal << l;
        for (int p = 0; p < 6; ++p) {
            Plane<T>& pl = f.levels[static_cast<size_t>(l)][static_cast<size_t>(p)];
            pl.ru = rs;
            pl.rv = (p < 3) ? rs : rt;
            pl.f = cfg.features;
            pl.w.resize(static_cast<size_t>(pl.ru) * pl.rv * pl.f);
            for (auto& v : pl.w) v = static_cast<T>(grid_dist(rng));
        }
    }

    int in = f.feature_dim();
    for (int d = 0; d < cfg.depth; ++d) {
        f.trunk.push_back(field_detail::make_linear<T>(in, cfg.width));
        field_detail::kaiming_init(f.trunk.back(), rng);
        in = cfg.width;
    }
    f.head_dx = field_detail::make_linear<T>(cfg.width, 3);
    f.head_ds = field_detail::make_linear<T>(cfg.width, 3);
    f.head_dr = field_detail::make_linear<T>(cfg.width, 4);
    f.head_dc = field_detail::make_linear<T>(cfg.width + f.cfg.embedding_dim, 3);
    f.head_da = field_detail::make_linear<T>(cfg.width, 1);
    return f;
}

template <typename T>
void zero_tensors(DeformationField<T>& f)
{
    f.for_each_tensor([](int, std::vector<T>& data) { std::fill(data.begin(), data.end(), T(0)); });
}

template <typename T>
DeformationField<T> zero_like(const DeformationField<T>& f)
{
    DeformationField<T> z = f;
    zero_tensors(z);
    return z;
}

// Intermediates recorded by deform for the adjoint pass.
template <typename T>
struct DeformAux {
    int n = 0;
    int feat_dim = 0, planes = 0, width = 0;
    bool full = false;          // heavy buffers recorded
    std::vector<T> feat;        // n x feat_dim
    std::vector<T> plane_feat;  // n x planes x F
    std::vector<int> corner;    // n x planes x 2
    std::vector<T> frac;        // n x planes x 2
    std::vector<T> gate;        // n x 3, bbox clamp pass-through gate
    std::vector<T> pre;         // n x depth x width
    std::vector<Vec3<T>> dx, ds, dc; // head outputs (raw, pre-clip)
    std::vector<Quat<T>> dr;
    std::vector<T> da;
};

template <typename T>
struct DeformResult {
    GaussianCloud<T> cloud;
    DeformAux<T> aux;
};

// Hard per-axis log-scale bound: never below the canonical value (so a
// clipped delta can always be undone) and never above the linear cap.
template <typename T>
T scale_cap(T canonical_log_scale, T log_cap)
{
    return std::max(canonical_log_scale, log_cap);
}

// Encoder feature for a single query; grids of all levels sampled and fused
// by element-wise products of the spatial and of the temporal plane groups.
template <typename T>
std::vector<T> encode(const DeformationField<T>& field, const Vec3<T>& position, T t)
{
    const int fdim = field.feature_dim();
    const int fpl = field.cfg.features;
    std::vector<T> feat(static_cast<size_t>(fdim));
    std::vector<T> pf(static_cast<size_t>(6) * fpl);
    int corner[2];
    T frac[2];

    T coords[4];
    const Vec3<T> ext = field.bbox_max - field.bbox_min;
    for (int k = 0; k < 3; ++k)
        coords[k] = clip((position[k] - field.bbox_min[k]) / ext[k], T(0), T(1));
    coords[3] = clip(t, T(0), T(1));

    for (size_t l = 0; l < field.levels.size(); ++l) {
        for (int p = 0; p < 6; ++p)
            field_detail::sample_plane(field.levels[l][static_cast<size_t>(p)],
                                       coords[kPlanePairs[p][0]], coords[kPlanePairs[p][1]],
                                       pf.data() + static_cast<size_t>(p) * fpl, corner, frac);
        T* sp = feat.data() + l * 2 * fpl;
        T* tp = sp + fpl;
        for (int k = 0; k < fpl; ++k) {
            sp[k] = pf[static_cast<size_t>(k)] * pf[static_cast<size_t>(fpl + k)] * pf[static_cast<size_t>(2 * fpl + k)];
            tp[k] = pf[static_cast<size_t>(3 * fpl + k)] * pf[static_cast<size_t>(4 * fpl + k)] * pf[static_cast<size_t>(5 * fpl + k)];
        }
    }
    return feat;
}

// Time-conditioned deformation of the whole cloud. Zero-initialized heads
// reproduce the canonical cloud bit for bit. with_aux records everything
// deform_backward needs.
template <typename T>
DeformResult<T> deform(const DeformationField<T>& field, const GaussianCloud<T>& cloud, T t,
                       bool with_aux = false, const ThreadPool& pool = ThreadPool(1))
{
    const auto& cfg = field.cfg;
    const size_t n = cloud.size();
    const int fdim = field.feature_dim();
    const int fpl = cfg.features;
    const int planes = 6 * cfg.levels;
    const int w = cfg.width;
    const int depth = cfg.depth;

    DeformResult<T> res;
    res.cloud = cloud;
    if (n == 0) return res;
    auto& aux = res.aux;
    aux.n = static_cast<int>(n);
    aux.feat_dim = fdim;
    aux.planes = planes;
    aux.width = w;
    aux.full = with_aux;
    aux.dx.assign(n, Vec3<T>::Zero());
    aux.ds.assign(n, Vec3<T>::Zero());
    aux.dc.assign(n, Vec3<T>::Zero());
    aux.dr.assign(n, Quat<T>::Zero());
    aux.da.assign(n, T(0));
    if (with_aux) {
        aux.feat.assign(n * static_cast<size_t>(fdim), T(0));
        aux.plane_feat.assign(n * static_cast<size_t>(planes) * fpl, T(0));
        aux.corner.assign(n * static_cast<size_t>(planes) * 2, 0);
        aux.frac.assign(n * static_cast<size_t>(planes) * 2, T(0));
        aux.gate.assign(n * 3, T(0));
        aux.pre.assign(n * static_cast<size_t>(depth) * w, T(0));
    }

    const Vec3<T> ext = field.bbox_max - field.bbox_min;
    T extent = T(0);
    {
        Vec3<T> lo = cloud.positions.front(), hi = lo;
        for (const auto& p : cloud.positions) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        extent = (hi - lo).norm();
    }
    const T log_cap = extent > T(0) ? std::log(T(cfg.scale_cap_fraction) * extent)
                                    : std::numeric_limits<T>::infinity();
    const T tc = clip(t, T(0), T(1));
    const T tau_s = T(cfg.tau_s), tau_r = T(cfg.tau_r);

    pool.parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t b, std::int64_t e, int) {
        std::vector<T> pf_local(static_cast<size_t>(planes) * fpl);
        std::vector<int> corner_local(static_cast<size_t>(planes) * 2);
        std::vector<T> frac_local(static_cast<size_t>(planes) * 2);
        std::vector<T> feat_local(static_cast<size_t>(fdim));
        std::vector<T> pre_local(static_cast<size_t>(depth) * w);
        std::vector<T> act(static_cast<size_t>(w)), act_prev(static_cast<size_t>(w));
        std::vector<T> dc_in(static_cast<size_t>(w + cfg.embedding_dim));

        for (std::int64_t gi = b; gi < e; ++gi) {
            const size_t i = static_cast<size_t>(gi);
            // ---- encode
            T coords[4];
            T gate[3];
            for (int k = 0; k < 3; ++k) {
                const T raw = (cloud.positions[i][k] - field.bbox_min[k]) / ext[k];
                coords[k] = clip(raw, T(0), T(1));
                gate[k] = (raw >= T(0) && raw <= T(1)) ? T(1) : T(0);
            }
            coords[3] = tc;
            for (int l = 0; l < cfg.levels; ++l)
                for (int p = 0; p < 6; ++p) {
                    const int pi = l * 6 + p;
                    field_detail::sample_plane(
                        field.levels[static_cast<size_t>(l)][static_cast<size_t>(p)],
                        coords[kPlanePairs[p][0]], coords[kPlanePairs[p][1]],
                        pf_local.data() + static_cast<size_t>(pi) * fpl,
                        corner_local.data() + static_cast<size_t>(pi) * 2,
                        frac_local.data() + static_cast<size_t>(pi) * 2);
                }
            for (int l = 0; l < cfg.levels; ++l) {
                T* sp = feat_local.data() + static_cast<size_t>(l) * 2 * fpl;
                T* tp = sp + fpl;
                const T* base = pf_local.data() + static_cast<size_t>(l) * 6 * fpl;
                for (int k = 0; k < fpl; ++k) {
                    sp[k] = base[k] * base[fpl + k] * base[2 * fpl + k];
                    tp[k] = base[3 * fpl + k] * base[4 * fpl + k] * base[5 * fpl + k];
                }
            }
            // ---- trunk
            const T* in_ptr = feat_local.data();
            for (int d = 0; d < depth; ++d) {
                T* pre = pre_local.data() + static_cast<size_t>(d) * w;
                field_detail::linear_forward(field.trunk[static_cast<size_t>(d)], in_ptr, pre);
                for (int k = 0; k < w; ++k) act[static_cast<size_t>(k)] = pre[k] > T(0) ? pre[k] : T(0);
                std::swap(act, act_prev);
                in_ptr = act_prev.data();
            }
            const T* h = in_ptr;
            // ---- heads
            Vec3<T> dx, ds, dcv;
            Quat<T> dr;
            T da = T(0);
            field_detail::linear_forward(field.head_dx, h, dx.data());
            field_detail::linear_forward(field.head_ds, h, ds.data());
            field_detail::linear_forward(field.head_dr, h, dr.data());
            if (!cfg.no_delta_c) {
                std::copy(h, h + w, dc_in.begin());
                std::copy(cloud.embedding(i), cloud.embedding(i) + cfg.embedding_dim,
                          dc_in.begin() + w);
                field_detail::linear_forward(field.head_dc, dc_in.data(), dcv.data());
            } else {
                dcv.setZero();
            }
            if (cfg.no_constraints)
                field_detail::linear_forward(field.head_da, h, &da);

            aux.dx[i] = dx;
            aux.ds[i] = ds;
            aux.dr[i] = dr;
            aux.dc[i] = dcv;
            aux.da[i] = da;
            if (with_aux) {
                std::copy(feat_local.begin(), feat_local.end(),
                          aux.feat.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(fdim)));
                std::copy(pf_local.begin(), pf_local.end(),
                          aux.plane_feat.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(planes) * fpl));
                std::copy(corner_local.begin(), corner_local.end(),
                          aux.corner.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(planes) * 2));
                std::copy(frac_local.begin(), frac_local.end(),
                          aux.frac.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(planes) * 2));
                std::copy(pre_local.begin(), pre_local.end(),
                          aux.pre.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(depth) * w));
                for (int k = 0; k < 3; ++k) aux.gate[i * 3 + static_cast<size_t>(k)] = gate[k];
            }

            // ---- apply deltas
            auto& out = res.cloud;
            out.positions[i] = cloud.positions[i] + dx;
            if (cfg.no_constraints) {
                out.log_scales[i] = cloud.log_scales[i] + ds;
                out.opacity_logits[i] = cloud.opacity_logits[i] + da;
            } else {
                for (int k = 0; k < 3; ++k) {
                    const T dsc = clip(ds[k], -tau_s, tau_s);
                    const T cap = scale_cap(cloud.log_scales[i][k], log_cap);
                    out.log_scales[i][k] = std::min(cloud.log_scales[i][k] + dsc, cap);
                }
            }
            Quat<T> drc;
            for (int k = 0; k < 4; ++k)
                drc[k] = cfg.no_constraints ? dr[k] : clip(dr[k], -tau_r, tau_r);
            if (drc[0] == T(0) && drc[1] == T(0) && drc[2] == T(0) && drc[3] == T(0)) {
                out.rotations[i] = cloud.rotations[i]; // exact identity fast path
            } else {
                const Quat<T> u = cloud.rotations[i] + drc;
                const T un = u.norm();
                out.rotations[i] = un > T(0) ? Quat<T>(u / un) : cloud.rotations[i];
            }
            if (cfg.no_delta_c) {
                out.base_colors[i] = cloud.base_colors[i];
            } else {
                for (int k = 0; k < 3; ++k)
                    out.base_colors[i][k] =
                        clip(cloud.base_colors[i][k] * (T(1) + dcv[k]), T(0), T(1));
            }
        }
    });
    return res;
}

// Gradients of the canonical cloud produced by deform_backward.
template <typename T>
struct CloudGrads {
    std::vector<Vec3<T>> d_position, d_log_scale, d_color;
    std::vector<Quat<T>> d_rotation;
    std::vector<T> d_opacity_logit;
    std::vector<T> d_embedding; // n x embedding_dim

    explicit CloudGrads(size_t n = 0, int emb_dim = 0) { resize(n, emb_dim); }
    void resize(size_t n, int emb_dim)
    {
        d_position.assign(n, Vec3<T>::Zero());
        d_log_scale.assign(n, Vec3<T>::Zero());
        d_color.assign(n, Vec3<T>::Zero());
        d_rotation.assign(n, Quat<T>::Zero());
        d_opacity_logit.assign(n, T(0));
        d_embedding.assign(n * static_cast<size_t>(emb_dim), T(0));
    }
};

// Exact adjoint of deform. Upstream gradients arrive on the deformed state
// (x', s', r', c', opacity logit) plus an optional direct gradient on the
// raw color delta (the color-offset regularizer). Accumulates into
// field_grads (same shape as the field, pre-zeroed by the caller) and cg.
// Clips gate to zero outside (-tau, tau). The scale cap routes to the
// canonical log-scale when the cap is the canonical value; when the
// extent-derived bound is active the gradient flows through log(extent)
// into the bounding-box extreme positions.
template <typename T>
void deform_backward(const DeformationField<T>& field, const GaussianCloud<T>& cloud, T t,
                     const DeformResult<T>& fwd, const std::vector<Vec3<T>>& d_x2,
                     const std::vector<Vec3<T>>& d_s2, const std::vector<Quat<T>>& d_r2,
                     const std::vector<Vec3<T>>& d_c2, const std::vector<T>& d_logit2,
                     const std::vector<Vec3<T>>& d_delta_c, DeformationField<T>& field_grads,
                     CloudGrads<T>& cg, const ThreadPool& pool = ThreadPool(1))
{
    const auto& cfg = field.cfg;
    const size_t n = cloud.size();
    if (n == 0) return;
    const auto& aux = fwd.aux;
    if (!aux.full || aux.n != static_cast<int>(n))
        throw AuxMismatch("deform_backward needs a matching deform(..., with_aux=true) result");

    const int fdim = field.feature_dim();
    const int fpl = cfg.features;
    const int planes = 6 * cfg.levels;
    const int w = cfg.width;
    const int depth = cfg.depth;
    const Vec3<T> ext = field.bbox_max - field.bbox_min;
    Vec3<T> lo_pos = cloud.positions.front(), hi_pos = lo_pos;
    for (const auto& p : cloud.positions) {
        lo_pos = lo_pos.cwiseMin(p);
        hi_pos = hi_pos.cwiseMax(p);
    }
    const T extent = (hi_pos - lo_pos).norm();
    const T log_cap = extent > T(0) ? std::log(T(cfg.scale_cap_fraction) * extent)
                                    : std::numeric_limits<T>::infinity();
    const T tau_s = T(cfg.tau_s), tau_r = T(cfg.tau_r);

    const int workers = std::max(1, std::min<int>(pool.workers(), static_cast<int>(n)));
    std::vector<DeformationField<T>> partials;
    for (int k = 1; k < workers; ++k) partials.push_back(zero_like(field));
    std::vector<T> cap_flow(static_cast<size_t>(workers), T(0));

    pool.parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t b, std::int64_t e, int worker) {
        DeformationField<T>& fg = worker == 0 ? field_grads : partials[static_cast<size_t>(worker - 1)];
        std::vector<T> act0(static_cast<size_t>(w)), act1(static_cast<size_t>(w));
        std::vector<T> d_h(static_cast<size_t>(w)), d_pre(static_cast<size_t>(w));
        std::vector<T> d_feat(static_cast<size_t>(fdim));
        std::vector<T> dc_in(static_cast<size_t>(w + cfg.embedding_dim));
        std::vector<T> d_dc_in(static_cast<size_t>(w + cfg.embedding_dim));
        std::vector<T> d_pf(static_cast<size_t>(planes) * fpl);

        for (std::int64_t gii = b; gii < e; ++gii) {
            const size_t i = static_cast<size_t>(gii);
            const Vec3<T> dx = aux.dx[i];
            const Vec3<T> ds = aux.ds[i];
            const Quat<T> dr = aux.dr[i];
            const Vec3<T> dcv = aux.dc[i];

            // ---- head-output gradients from the deformed-state upstream
            Vec3<T> g_dx = d_x2[i]; // x' = x + dx
            cg.d_position[i] += d_x2[i];

            Vec3<T> g_ds = Vec3<T>::Zero();
            if (cfg.no_constraints) {
                g_ds = d_s2[i];
                cg.d_log_scale[i] += d_s2[i];
            } else {
                for (int k = 0; k < 3; ++k) {
                    const T dsc = clip(ds[k], -tau_s, tau_s);
                    const T cap = scale_cap(cloud.log_scales[i][k], log_cap);
                    const T summed = cloud.log_scales[i][k] + dsc;
                    if (summed <= cap) { // min picked the additive branch
                        cg.d_log_scale[i][k] += d_s2[i][k];
                        if (ds[k] > -tau_s && ds[k] < tau_s) g_ds[k] = d_s2[i][k];
                    } else if (cap == cloud.log_scales[i][k]) { // cap is the canonical value
                        cg.d_log_scale[i][k] += d_s2[i][k];
                    } else { // extent-derived cap: collect the flow into log(extent)
                        cap_flow[static_cast<size_t>(worker)] += d_s2[i][k];
                    }
                }
            }

            Quat<T> drc;
            for (int k = 0; k < 4; ++k)
                drc[k] = cfg.no_constraints ? dr[k] : clip(dr[k], -tau_r, tau_r);
            Quat<T> g_u;
            if (drc[0] == T(0) && drc[1] == T(0) && drc[2] == T(0) && drc[3] == T(0))
                g_u = quat_normalize_backward(cloud.rotations[i], d_r2[i]);
            else
                g_u = quat_normalize_backward(Quat<T>(cloud.rotations[i] + drc), d_r2[i]);
            cg.d_rotation[i] += g_u;
            Quat<T> g_dr = Quat<T>::Zero();
            for (int k = 0; k < 4; ++k)
                if (cfg.no_constraints || (dr[k] > -tau_r && dr[k] < tau_r)) g_dr[k] = g_u[k];

            Vec3<T> g_dc = Vec3<T>::Zero();
            if (cfg.no_delta_c) {
                cg.d_color[i] += d_c2[i];
            } else {
                for (int k = 0; k < 3; ++k) {
                    const T pre_clamp = cloud.base_colors[i][k] * (T(1) + dcv[k]);
                    const T gate = (pre_clamp >= T(0) && pre_clamp <= T(1)) ? T(1) : T(0);
                    const T d_w = d_c2[i][k] * gate;
                    cg.d_color[i][k] += d_w * (T(1) + dcv[k]);
                    g_dc[k] = d_w * cloud.base_colors[i][k];
                }
                if (!d_delta_c.empty()) g_dc += d_delta_c[i];
            }

            T g_da = T(0);
            cg.d_opacity_logit[i] += d_logit2[i];
            if (cfg.no_constraints) g_da = d_logit2[i];

            // ---- heads -> trunk feature gradient
            const T* pre = aux.pre.data() + i * static_cast<size_t>(depth) * w;
            const T* pre_last = pre + static_cast<size_t>(depth - 1) * w;
            for (int k = 0; k < w; ++k)
                act1[static_cast<size_t>(k)] = pre_last[k] > T(0) ? pre_last[k] : T(0);
            const T* h = act1.data();

            std::fill(d_h.begin(), d_h.end(), T(0));
            field_detail::linear_backward(field.head_dx, h, g_dx.data(), fg.head_dx, d_h.data());
            field_detail::linear_backward(field.head_ds, h, g_ds.data(), fg.head_ds, d_h.data());
            field_detail::linear_backward(field.head_dr, h, g_dr.data(), fg.head_dr, d_h.data());
            if (!cfg.no_delta_c) {
                std::copy(h, h + w, dc_in.begin());
                std::copy(cloud.embedding(i), cloud.embedding(i) + cfg.embedding_dim,
                          dc_in.begin() + w);
                std::fill(d_dc_in.begin(), d_dc_in.end(), T(0));
                field_detail::linear_backward(field.head_dc, dc_in.data(), g_dc.data(),
                                              fg.head_dc, d_dc_in.data());
                for (int k = 0; k < w; ++k) d_h[static_cast<size_t>(k)] += d_dc_in[static_cast<size_t>(k)];
                for (int k = 0; k < cfg.embedding_dim; ++k)
                    cg.d_embedding[i * static_cast<size_t>(cfg.embedding_dim) + static_cast<size_t>(k)] +=
                        d_dc_in[static_cast<size_t>(w + k)];
            }
            if (cfg.no_constraints)
                field_detail::linear_backward(field.head_da, h, &g_da, fg.head_da, d_h.data());

            // ---- trunk backward
            const T* feat = aux.feat.data() + i * static_cast<size_t>(fdim);
            for (int d = depth - 1; d >= 0; --d) {
                const T* pre_d = pre + static_cast<size_t>(d) * w;
                for (int k = 0; k < w; ++k)
                    d_pre[static_cast<size_t>(k)] = pre_d[k] > T(0) ? d_h[static_cast<size_t>(k)] : T(0);
                const T* layer_in;
                if (d == 0) {
                    layer_in = feat;
                } else {
                    const T* pre_prev = pre + static_cast<size_t>(d - 1) * w;
                    for (int k = 0; k < w; ++k)
                        act0[static_cast<size_t>(k)] = pre_prev[k] > T(0) ? pre_prev[k] : T(0);
                    layer_in = act0.data();
                }
                if (d == 0) {
                    std::fill(d_feat.begin(), d_feat.end(), T(0));
                    field_detail::linear_backward(field.trunk[static_cast<size_t>(d)], layer_in,
                                                  d_pre.data(), fg.trunk[static_cast<size_t>(d)],
                                                  d_feat.data());
                } else {
                    std::fill(d_h.begin(), d_h.end(), T(0));
                    field_detail::linear_backward(field.trunk[static_cast<size_t>(d)], layer_in,
                                                  d_pre.data(), fg.trunk[static_cast<size_t>(d)],
                                                  d_h.data());
                }
            }

            // ---- encoder backward
            const T* pf = aux.plane_feat.data() + i * static_cast<size_t>(planes) * fpl;
            std::fill(d_pf.begin(), d_pf.end(), T(0));
            for (int l = 0; l < cfg.levels; ++l) {
                const T* d_sp = d_feat.data() + static_cast<size_t>(l) * 2 * fpl;
                const T* d_tp = d_sp + fpl;
                const T* base = pf + static_cast<size_t>(l) * 6 * fpl;
                T* d_base = d_pf.data() + static_cast<size_t>(l) * 6 * fpl;
                for (int k = 0; k < fpl; ++k) {
                    d_base[k] += d_sp[k] * base[fpl + k] * base[2 * fpl + k];
                    d_base[fpl + k] += d_sp[k] * base[k] * base[2 * fpl + k];
                    d_base[2 * fpl + k] += d_sp[k] * base[k] * base[fpl + k];
                    d_base[3 * fpl + k] += d_tp[k] * base[4 * fpl + k] * base[5 * fpl + k];
                    d_base[4 * fpl + k] += d_tp[k] * base[3 * fpl + k] * base[5 * fpl + k];
                    d_base[5 * fpl + k] += d_tp[k] * base[3 * fpl + k] * base[4 * fpl + k];
                }
            }
            Vec3<T> d_coord = Vec3<T>::Zero(); // normalized-coordinate gradient (t discarded)
            for (int l = 0; l < cfg.levels; ++l)
                for (int p = 0; p < 6; ++p) {
                    const int pi = l * 6 + p;
                    const Plane<T>& pl = field.levels[static_cast<size_t>(l)][static_cast<size_t>(p)];
                    Plane<T>& gpl = fg.levels[static_cast<size_t>(l)][static_cast<size_t>(p)];
                    const int iu = aux.corner[(i * static_cast<size_t>(planes) + static_cast<size_t>(pi)) * 2];
                    const int iv = aux.corner[(i * static_cast<size_t>(planes) + static_cast<size_t>(pi)) * 2 + 1];
                    const T fu = aux.frac[(i * static_cast<size_t>(planes) + static_cast<size_t>(pi)) * 2];
                    const T fv = aux.frac[(i * static_cast<size_t>(planes) + static_cast<size_t>(pi)) * 2 + 1];
                    const T* dk = d_pf.data() + static_cast<size_t>(pi) * fpl;
                    const size_t o00 = (static_cast<size_t>(iv) * pl.ru + iu) * pl.f;
                    const size_t o10 = o00 + static_cast<size_t>(pl.f);
                    const size_t o01 = o00 + static_cast<size_t>(pl.ru) * pl.f;
                    const size_t o11 = o01 + static_cast<size_t>(pl.f);
                    const T w00 = (T(1) - fu) * (T(1) - fv), w10 = fu * (T(1) - fv);
                    const T w01 = (T(1) - fu) * fv, w11 = fu * fv;
                    T d_gu = T(0), d_gv = T(0);
                    const T* g00 = pl.w.data() + o00;
                    const T* g10 = pl.w.data() + o10;
                    const T* g01 = pl.w.data() + o01;
                    const T* g11 = pl.w.data() + o11;
#pragma omp simd reduction(+ : d_gu, d_gv)
                    for (int k = 0; k < fpl; ++k) {
                        gpl.w[o00 + static_cast<size_t>(k)] += w00 * dk[k];
                        gpl.w[o10 + static_cast<size_t>(k)] += w10 * dk[k];
                        gpl.w[o01 + static_cast<size_t>(k)] += w01 * dk[k];
                        gpl.w[o11 + static_cast<size_t>(k)] += w11 * dk[k];
                        d_gu += dk[k] * ((g10[k] - g00[k]) * (T(1) - fv) + (g11[k] - g01[k]) * fv);
                        d_gv += dk[k] * ((g01[k] - g00[k]) * (T(1) - fu) + (g11[k] - g10[k]) * fu);
                    }
                    const int ca = kPlanePairs[p][0], cb = kPlanePairs[p][1];
                    if (ca < 3) d_coord[ca] += d_gu * T(pl.ru - 1);
                    if (cb < 3) d_coord[cb] += d_gv * T(pl.rv - 1);
                }
            for (int k = 0; k < 3; ++k)
                cg.d_position[i][k] += aux.gate[i * 3 + static_cast<size_t>(k)] * d_coord[k] / ext[k];
        }
    });

    // Active extent-derived caps: route the collected flow through
    // log(extent) onto the positions that realize the bounding box,
    // d log_cap / d hi_k = (hi_k - lo_k) / extent^2 (first index on ties).
    T cap_total = T(0);
    for (const T v : cap_flow) cap_total += v;
    if (cap_total != T(0) && extent > T(0)) {
        for (int k = 0; k < 3; ++k) {
            size_t imin = 0, imax = 0;
            for (size_t i = 1; i < n; ++i) {
                if (cloud.positions[i][k] < cloud.positions[imin][k]) imin = i;
                if (cloud.positions[i][k] > cloud.positions[imax][k]) imax = i;
            }
            const T g = cap_total * (hi_pos[k] - lo_pos[k]) / (extent * extent);
            cg.d_position[imax][k] += g;
            cg.d_position[imin][k] -= g;
        }
    }

    // Worker partials reduced in a fixed order.
    std::vector<std::vector<T>*> dst;
    field_grads.for_each_tensor([&](int, std::vector<T>& v) { dst.push_back(&v); });
    for (auto& part : partials) {
        std::vector<std::vector<T>*> src;
        part.for_each_tensor([&](int, std::vector<T>& v) { src.push_back(&v); });
        for (size_t k = 0; k < dst.size(); ++k)
            for (size_t j = 0; j < dst[k]->size(); ++j) (*dst[k])[j] += (*src[k])[j];
    }
}

} // namespace colonsplat
