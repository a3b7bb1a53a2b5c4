// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace colonsplat {

namespace ply_detail {

struct Header {
    long vertex_count = -1;
    std::vector<std::string> properties; // float32 scalars, in declaration order
    int embedding_dim = -1;              // from the comment line, if present
};

inline Header read_header(std::istream& in, const std::string& path)
{
    Header h;
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw MalformedPly("missing magic in " + path);
    bool le = false, ended = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            le = (fmt == "binary_little_endian");
            if (!le) throw MalformedPly("unsupported format '" + fmt + "' in " + path);
        } else if (tok == "comment") {
            std::string key;
            ls >> key;
            if (key == "colonsplat_embedding_dim") ls >> h.embedding_dim;
        } else if (tok == "element") {
            std::string kind;
            long n = 0;
            ls >> kind >> n;
            if (kind != "vertex") throw MalformedPly("unsupported element '" + kind + "' in " + path);
            h.vertex_count = n;
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float" && type != "float32")
                throw MalformedPly("unsupported property type '" + type + "' in " + path);
            h.properties.push_back(name);
        } else if (tok == "end_header") {
            ended = true;
            break;
        }
    }
    if (!ended || !le || h.vertex_count < 0) throw MalformedPly("truncated header in " + path);
    return h;
}

inline int require(const Header& h, const std::string& name, const std::string& path)
{
    for (size_t i = 0; i < h.properties.size(); ++i)
        if (h.properties[i] == name) return static_cast<int>(i);
    throw MalformedPly("missing property '" + name + "' in " + path);
}

} // namespace ply_detail

template <typename T>
void save_ply(const std::string& path, const GaussianCloud<T>& cloud)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const int d = cloud.embedding_dim;
    out << "ply\nformat binary_little_endian 1.0\n"
        << "comment colonsplat_embedding_dim " << d << "\n"
        << "element vertex " << cloud.size() << "\n";
    const char* base[] = {"x", "y", "z", "log_scale_0", "log_scale_1", "log_scale_2",
                          "rot_w", "rot_x", "rot_y", "rot_z", "opacity_logit",
                          "red", "green", "blue"};
    for (const char* p : base) out << "property float " << p << "\n";
    for (int k = 0; k < d; ++k) out << "property float emb_" << k << "\n";
    out << "end_header\n";

    std::vector<float> row(14 + d);
    for (size_t i = 0; i < cloud.size(); ++i) {
        float* r = row.data();
        for (int k = 0; k < 3; ++k) *r++ = static_cast<float>(cloud.positions[i][k]);
        for (int k = 0; k < 3; ++k) *r++ = static_cast<float>(cloud.log_scales[i][k]);
        for (int k = 0; k < 4; ++k) *r++ = static_cast<float>(cloud.rotations[i][k]);
        *r++ = static_cast<float>(cloud.opacity_logits[i]);
        for (int k = 0; k < 3; ++k) *r++ = static_cast<float>(cloud.base_colors[i][k]);
        for (int k = 0; k < d; ++k) *r++ = static_cast<float>(cloud.embedding(i)[k]);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()) * sizeof(float));
    }
    if (!out) throw IoError("short write: " + path);
}

template <typename T>
GaussianCloud<T> load_ply(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const auto h = ply_detail::read_header(in, path);
    if (h.vertex_count == 0) throw InvalidCount("0 vertices in " + path);

    int d = h.embedding_dim;
    if (d < 0) { // fall back to counting emb_* properties
        d = 0;
        for (const auto& p : h.properties)
            if (p.rfind("emb_", 0) == 0) ++d;
    }

    const char* base[] = {"x", "y", "z", "log_scale_0", "log_scale_1", "log_scale_2",
                          "rot_w", "rot_x", "rot_y", "rot_z", "opacity_logit",
                          "red", "green", "blue"};
    std::vector<int> idx;
    for (const char* p : base) idx.push_back(ply_detail::require(h, p, path));
    for (int k = 0; k < d; ++k) idx.push_back(ply_detail::require(h, "emb_" + std::to_string(k), path));

    GaussianCloud<T> cloud;
    cloud.embedding_dim = d;
    cloud.resize(static_cast<size_t>(h.vertex_count));

    std::vector<float> row(h.properties.size());
    for (long i = 0; i < h.vertex_count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size()) * sizeof(float));
        if (!in) throw MalformedPly("truncated vertex data in " + path);
        const float* r = row.data();
        auto get = [&](int slot) { return static_cast<T>(r[idx[static_cast<size_t>(slot)]]); };
        for (int k = 0; k < 3; ++k) cloud.positions[i][k] = get(k);
        for (int k = 0; k < 3; ++k) cloud.log_scales[i][k] = get(3 + k);
        for (int k = 0; k < 4; ++k) cloud.rotations[i][k] = get(6 + k);
        cloud.opacity_logits[i] = get(10);
        for (int k = 0; k < 3; ++k) cloud.base_colors[i][k] = get(11 + k);
        for (int k = 0; k < d; ++k) cloud.embedding(i)[k] = get(14 + k);
    }
    return cloud;
}

// Bare x/y/z point clouds (ground-truth surface samples).
template <typename T>
void save_point_ply(const std::string& path, const std::vector<Vec3<T>>& points)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    for (const auto& p : points) {
        const float xyz[3] = {static_cast<float>(p[0]), static_cast<float>(p[1]),
                              static_cast<float>(p[2])};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    if (!out) throw IoError("short write: " + path);
}

template <typename T>
std::vector<Vec3<T>> load_point_ply(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const auto h = ply_detail::read_header(in, path);
    const int ix = ply_detail::require(h, "x", path);
    const int iy = ply_detail::require(h, "y", path);
    const int iz = ply_detail::require(h, "z", path);
    std::vector<Vec3<T>> pts(static_cast<size_t>(h.vertex_count));
    std::vector<float> row(h.properties.size());
    for (long i = 0; i < h.vertex_count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size()) * sizeof(float));
        if (!in) throw MalformedPly("truncated vertex data in " + path);
        pts[i] = Vec3<T>(static_cast<T>(row[ix]), static_cast<T>(row[iy]),
                         static_cast<T>(row[iz]));
    }
    return pts;
}

} // namespace colonsplat
