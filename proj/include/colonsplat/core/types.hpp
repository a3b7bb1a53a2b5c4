// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace colonsplat {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;

// Quaternion stored as (w, x, y, z).
template <typename T> using Quat = Eigen::Matrix<T, 4, 1>;

// Dense row-major image, index (y, x, c).
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c, T fill = T(0))
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    T& at(int y, int x, int c = 0)
    {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    const T& at(int y, int x, int c = 0) const
    {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const
    {
        return width == o.width && height == o.height && channels == o.channels;
    }
    size_t size() const { return data.size(); }
};

} // namespace colonsplat
