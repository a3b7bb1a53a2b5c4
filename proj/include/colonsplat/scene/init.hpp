// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/scene/camera.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>
#include <colonsplat/spatial/kdtree.hpp>

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace colonsplat {

struct InitOptions {
    int stride = 8;              // pixel step of the back-projection grid
    double k_init = 1.0;         // scale factor on the mean 3-NN distance
    double merge_radius = -1.0;  // <0: 1e-4 x collected bbox diagonal; 0 disables merging
    double opacity_init = 0.1;   // initial opacity (stored as its logit)
    int embedding_dim = 8;
};

namespace init_detail {

inline std::int64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z)
{
    return (x * 73856093) ^ (y * 19349663) ^ (z * 83492791);
}

} // namespace init_detail

// Back-projects every stride-th valid depth pixel of each training frame,
// merges near-duplicates, and sizes each Gaussian by its local point spacing.
template <typename T>
GaussianCloud<T> init_from_depth(const std::vector<Frame<T>>& frames, const InitOptions& opt = {})
{
    std::vector<Vec3<T>> pts, cols;
    for (const auto& frame : frames) {
        if (frame.is_test) continue;
        const auto& cam = frame.camera;
        for (int y = 0; y < cam.height; y += opt.stride)
            for (int x = 0; x < cam.width; x += opt.stride) {
                const T d = frame.depth_sup.at(y, x);
                if (d <= T(0)) continue;
                const Vec3<T> p_cam((T(x) - cam.cx) / cam.fx * d,
                                    (T(y) - cam.cy) / cam.fy * d, d);
                pts.push_back(cam.to_world(p_cam));
                cols.push_back(Vec3<T>(frame.rgb.at(y, x, 0), frame.rgb.at(y, x, 1),
                                       frame.rgb.at(y, x, 2)));
            }
    }
    if (pts.empty()) throw NoValidDepth("no stride-sampled pixel carries depth");

    Vec3<T> lo = pts.front(), hi = pts.front();
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const T eps = opt.merge_radius < 0 ? T(1e-4) * (hi - lo).norm()
                                       : static_cast<T>(opt.merge_radius);

    // Greedy clustering on a uniform grid; representatives carry running means.
    std::vector<Vec3<T>> rp, rc;
    std::vector<int> rn;
    if (eps > T(0)) {
        std::unordered_map<std::int64_t, std::vector<int>> cells;
        auto coord = [&](T v) { return static_cast<std::int64_t>(std::floor(v / eps)); };
        for (size_t i = 0; i < pts.size(); ++i) {
            const Vec3<T>& p = pts[i];
            const std::int64_t cx = coord(p[0]), cy = coord(p[1]), cz = coord(p[2]);
            int best = -1;
            T best_d2 = eps * eps;
            for (std::int64_t dx = -1; dx <= 1; ++dx)
                for (std::int64_t dy = -1; dy <= 1; ++dy)
                    for (std::int64_t dz = -1; dz <= 1; ++dz) {
                        auto it = cells.find(init_detail::cell_key(cx + dx, cy + dy, cz + dz));
                        if (it == cells.end()) continue;
                        for (int r : it->second) {
                            const T d2 = (rp[r] - p).squaredNorm();
                            if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && r < best)) {
                                best = r;
                                best_d2 = d2;
                            }
                        }
                    }
            if (best >= 0) {
                const T w = T(1) / T(rn[best] + 1);
                rp[best] += (p - rp[best]) * w;
                rc[best] += (cols[i] - rc[best]) * w;
                rn[best] += 1;
            } else {
                const int r = static_cast<int>(rp.size());
                rp.push_back(p);
                rc.push_back(cols[i]);
                rn.push_back(1);
                cells[init_detail::cell_key(cx, cy, cz)].push_back(r);
            }
        }
    } else {
        rp = pts;
        rc = cols;
    }

    const size_t n = rp.size();
    GaussianCloud<T> cloud;
    cloud.embedding_dim = opt.embedding_dim;
    cloud.resize(n);
    cloud.positions = rp;
    cloud.base_colors = rc;

    KdTree<T> tree(rp);
    std::vector<int> nbr;
    for (size_t i = 0; i < n; ++i) {
        T mean_d = T(1e-2); // spacing fallback for a lone point
        if (n > 1) {
            tree.knn(rp[i], 3, static_cast<int>(i), nbr);
            T s = T(0);
            for (int j : nbr) s += (rp[j] - rp[i]).norm();
            mean_d = s / T(nbr.size());
        }
        const T scale = std::max(static_cast<T>(opt.k_init) * mean_d, T(1e-8));
        cloud.log_scales[i] = Vec3<T>::Constant(std::log(scale));
        cloud.opacity_logits[i] = logit(static_cast<T>(opt.opacity_init));
    }
    return cloud;
}

} // namespace colonsplat
