// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/types.hpp>

namespace colonsplat {

// Pinhole camera. Pixel (x, y) samples the image plane at integer
// coordinates: a world point p projects to (fx*px/pz + cx, fy*py/pz + cy)
// with p_cam = R*p + t. The timestep t rides along with the view.
template <typename T>
struct Camera {
    T fx = T(0), fy = T(0), cx = T(0), cy = T(0);
    int width = 0, height = 0;
    Mat3<T> R = Mat3<T>::Identity();
    Vec3<T> tvec = Vec3<T>::Zero();
    T znear = T(1e-2), zfar = T(1e3);
    T t = T(0);

    Vec3<T> to_camera(const Vec3<T>& p_world) const { return R * p_world + tvec; }
    Vec3<T> to_world(const Vec3<T>& p_cam) const { return R.transpose() * (p_cam - tvec); }

    Mat4<T> world_to_camera() const
    {
        Mat4<T> m = Mat4<T>::Identity();
        m.template block<3, 3>(0, 0) = R;
        m.template block<3, 1>(0, 3) = tvec;
        return m;
    }
    static Camera with_pose(const Mat4<T>& w2c, Camera base)
    {
        base.R = w2c.template block<3, 3>(0, 0);
        base.tvec = w2c.template block<3, 1>(0, 3);
        return base;
    }
};

template <typename T>
struct Frame {
    Camera<T> camera;
    Image<T> rgb;       // H x W x 3 in [0,1]
    Image<T> depth_sup; // H x W, scene units; <= 0 marks "no supervision"
    bool is_test = false;
};

template <typename T>
struct Dataset {
    std::vector<Frame<T>> frames;

    std::vector<int> train_indices() const
    {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(frames.size()); ++i)
            if (!frames[i].is_test) idx.push_back(i);
        return idx;
    }
    std::vector<int> test_indices() const
    {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(frames.size()); ++i)
            if (frames[i].is_test) idx.push_back(i);
        return idx;
    }
};

} // namespace colonsplat
