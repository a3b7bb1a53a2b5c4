// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/types.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

namespace colonsplat {

// Median-split k-d tree over 3D points. Queries are exact; equal distances
// are broken toward the lower point index, which makes results independent
// of tree layout.
template <typename T>
class KdTree {
public:
    explicit KdTree(std::vector<Vec3<T>> points) : mPts(std::move(points))
    {
        const size_t n = mPts.size();
        mPerm.resize(n);
        mAxis.assign(n, 0);
        std::iota(mPerm.begin(), mPerm.end(), 0);
        if (n > 0) build(0, n);
    }

    size_t size() const { return mPts.size(); }
    const std::vector<Vec3<T>>& points() const { return mPts; }

    // k nearest neighbors of q by (distance, index), excluding `exclude`
    // (pass -1 to keep all). Returns min(k, available) indices ascending
    // by (distance^2, index).
    void knn(const Vec3<T>& q, int k, int exclude, std::vector<int>& out) const
    {
        out.clear();
        if (k <= 0 || mPts.empty()) return;
        Heap heap;
        search(0, mPts.size(), q, static_cast<size_t>(k), exclude, heap);
        out.resize(heap.size());
        for (size_t i = heap.size(); i-- > 0;) {
            out[i] = heap.top().second;
            heap.pop();
        }
    }

    // Distance to the nearest point (excluding `exclude`).
    T nearest_dist(const Vec3<T>& q, int exclude = -1) const
    {
        Heap heap;
        search(0, mPts.size(), q, 1, exclude, heap);
        return heap.empty() ? T(0) : std::sqrt(heap.top().first);
    }

private:
    using Entry = std::pair<T, int>; // (distance^2, index)
    using Heap = std::priority_queue<Entry>;

    void build(size_t b, size_t e)
    {
        if (e - b <= 1) return;
        Vec3<T> lo = mPts[mPerm[b]], hi = lo;
        for (size_t i = b + 1; i < e; ++i) {
            lo = lo.cwiseMin(mPts[mPerm[i]]);
            hi = hi.cwiseMax(mPts[mPerm[i]]);
        }
        int ax = 0;
        const Vec3<T> ext = hi - lo;
        if (ext[1] > ext[ax]) ax = 1;
        if (ext[2] > ext[ax]) ax = 2;
        const size_t m = (b + e) / 2;
        std::nth_element(mPerm.begin() + b, mPerm.begin() + m, mPerm.begin() + e,
                         [&](int a, int c) {
                             const T va = mPts[a][ax], vc = mPts[c][ax];
                             return va < vc || (va == vc && a < c);
                         });
        mAxis[m] = ax;
        build(b, m);
        build(m + 1, e);
    }

    void search(size_t b, size_t e, const Vec3<T>& q, size_t k, int exclude, Heap& heap) const
    {
        if (b >= e) return;
        const size_t m = (b + e) / 2;
        const int i = mPerm[m];
        const int ax = mAxis[m];

        if (i != exclude) {
            const T d2 = (mPts[i] - q).squaredNorm();
            const Entry cand(d2, i);
            if (heap.size() < k) {
                heap.push(cand);
            } else if (cand < heap.top()) {
                heap.pop();
                heap.push(cand);
            }
        }
        const T diff = q[ax] - mPts[i][ax];
        const size_t nb = diff < T(0) ? b : m + 1;
        const size_t ne = diff < T(0) ? m : e;
        const size_t fb = diff < T(0) ? m + 1 : b;
        const size_t fe = diff < T(0) ? e : m;
        search(nb, ne, q, k, exclude, heap);
        if (heap.size() < k || diff * diff <= heap.top().first)
            search(fb, fe, q, k, exclude, heap);
    }

    std::vector<Vec3<T>> mPts;
    std::vector<int> mPerm;
    std::vector<int> mAxis;
};

} // namespace colonsplat
