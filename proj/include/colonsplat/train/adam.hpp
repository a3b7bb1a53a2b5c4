// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace colonsplat {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

// First/second moment buffers for one parameter tensor. The step counter
// drives bias correction and survives densification remaps.
template <typename T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;

    void init(size_t n)
    {
        m.assign(n, T(0));
        v.assign(n, T(0));
        step = 0;
    }
};

template <typename T>
void adam_step(AdamState<T>& st, T* param, const T* grad, size_t n, T lr, const AdamParams& ap)
{
    ++st.step;
    const T b1 = T(ap.beta1), b2 = T(ap.beta2), eps = T(ap.eps);
    const T bc1 = T(1) - std::pow(b1, T(st.step));
    const T bc2 = T(1) - std::pow(b2, T(st.step));
    for (size_t i = 0; i < n; ++i) {
        const T g = grad[i];
        st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
        st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
        const T mh = st.m[i] / bc1;
        const T vh = st.v[i] / bc2;
        param[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// Rebuilds per-row moment buffers after the cloud changes size. src[i] is
// the old row feeding new row i, or -1 for a fresh row (zero moments).
template <typename T>
void adam_remap(AdamState<T>& st, const std::vector<int>& src, int stride)
{
    std::vector<T> m(src.size() * static_cast<size_t>(stride), T(0));
    std::vector<T> v(src.size() * static_cast<size_t>(stride), T(0));
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i] < 0) continue;
        for (int k = 0; k < stride; ++k) {
            m[i * static_cast<size_t>(stride) + static_cast<size_t>(k)] =
                st.m[static_cast<size_t>(src[i]) * static_cast<size_t>(stride) + static_cast<size_t>(k)];
            v[i * static_cast<size_t>(stride) + static_cast<size_t>(k)] =
                st.v[static_cast<size_t>(src[i]) * static_cast<size_t>(stride) + static_cast<size_t>(k)];
        }
    }
    st.m = std::move(m);
    st.v = std::move(v);
}

} // namespace colonsplat
