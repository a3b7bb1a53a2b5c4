// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/math.hpp>
#include <colonsplat/core/types.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

namespace colonsplat {

// Canonical per-Gaussian parameters as parallel arrays of length N.
// Scales live in log space, opacities as logits, rotations as unit
// quaternions (w, x, y, z), embeddings as a flat N x embedding_dim block.
template <typename T>
struct GaussianCloud {
    std::vector<Vec3<T>> positions;
    std::vector<Vec3<T>> log_scales;
    std::vector<Quat<T>> rotations;
    std::vector<T> opacity_logits;
    std::vector<Vec3<T>> base_colors;
    std::vector<T> embeddings;
    int embedding_dim = 8;

    size_t size() const { return positions.size(); }

    void resize(size_t n)
    {
        positions.resize(n, Vec3<T>::Zero());
        log_scales.resize(n, Vec3<T>::Zero());
        rotations.resize(n, Quat<T>(T(1), T(0), T(0), T(0)));
        opacity_logits.resize(n, T(0));
        base_colors.resize(n, Vec3<T>::Zero());
        embeddings.resize(n * embedding_dim, T(0));
    }

    T* embedding(size_t i) { return embeddings.data() + i * embedding_dim; }
    const T* embedding(size_t i) const { return embeddings.data() + i * embedding_dim; }

    T opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

    // Re-establishes the type invariants after an unconstrained update.
    void normalize_invariants()
    {
        for (auto& q : rotations) {
            const T n = q.norm();
            if (n > T(0)) q /= n;
            else q = Quat<T>(T(1), T(0), T(0), T(0));
        }
        for (auto& c : base_colors)
            for (int k = 0; k < 3; ++k) c[k] = clip(c[k], T(0), T(1));
    }
};

// Sigma = R diag(exp(2 s)) R^T. Requires a unit quaternion.
template <typename T>
Mat3<T> covariance_from(const Vec3<T>& log_scale, const Quat<T>& rotation)
{
    // Sum of outer products keeps (i,j) and (j,i) bit-identical.
    const Mat3<T> r = quat_to_rotation(rotation);
    Mat3<T> sigma = Mat3<T>::Zero();
    for (int k = 0; k < 3; ++k) {
        const T var = std::exp(T(2) * log_scale[k]);
        const Vec3<T> axis = r.col(k);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) sigma(i, j) += var * (axis[i] * axis[j]);
    }
    return sigma;
}

// Diagonal length of the axis-aligned bounding box of canonical positions.
template <typename T>
T scene_extent(const GaussianCloud<T>& cloud)
{
    if (cloud.positions.empty()) throw EmptyCloud("scene_extent");
    Vec3<T> lo = cloud.positions.front(), hi = cloud.positions.front();
    for (const auto& p : cloud.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

} // namespace colonsplat
