// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/types.hpp>

#include <cmath>

namespace colonsplat {

template <typename T>
T sigmoid(T x)
{
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T logit(T p)
{
    return std::log(p / (T(1) - p));
}

template <typename T>
T clip(T v, T lo, T hi)
{
    return v < lo ? lo : (v > hi ? hi : v);
}

// Rotation matrix of a unit quaternion (w, x, y, z).
template <typename T>
Mat3<T> quat_to_rotation(const Quat<T>& q)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r(0, 0) = T(1) - T(2) * (y * y + z * z);
    r(0, 1) = T(2) * (x * y - w * z);
    r(0, 2) = T(2) * (x * z + w * y);
    r(1, 0) = T(2) * (x * y + w * z);
    r(1, 1) = T(1) - T(2) * (x * x + z * z);
    r(1, 2) = T(2) * (y * z - w * x);
    r(2, 0) = T(2) * (x * z - w * y);
    r(2, 1) = T(2) * (y * z + w * x);
    r(2, 2) = T(1) - T(2) * (x * x + y * y);
    return r;
}

// Adjoint of quat_to_rotation at unit q: maps dL/dR to dL/dq.
template <typename T>
Quat<T> quat_rotation_backward(const Quat<T>& q, const Mat3<T>& g)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Quat<T> d;
    d[0] = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - T(2) * x * g(2, 2));
    d[2] = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - T(2) * y * g(2, 2));
    d[3] = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - T(2) * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

// Adjoint of q_n = q / ||q||: maps dL/dq_n to dL/dq.
template <typename T>
Quat<T> quat_normalize_backward(const Quat<T>& q, const Quat<T>& g_n)
{
    const T n = q.norm();
    const Quat<T> qn = q / n;
    return (g_n - qn * qn.dot(g_n)) / n;
}

} // namespace colonsplat
