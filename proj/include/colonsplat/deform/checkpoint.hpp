// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/deform/field.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace colonsplat {

inline constexpr char kFieldMagic[8] = {'C', 'S', 'P', 'L', 'A', 'T', 'D', 'F'};
inline constexpr std::uint32_t kFieldVersion = 1;

// Flag bits persisted alongside the field. Bits 0 and 1 mirror the field
// config; higher bits are caller-defined (training-mode markers).
enum FieldFlags : std::uint32_t {
    kFieldNoConstraints = 1u << 0,
    kFieldNoDeltaC = 1u << 1,
    kFieldNoKnn = 1u << 2,       // trainer marker: knn loss disabled
    kFieldFrozen = 1u << 3,      // trainer marker: field held at identity
};

namespace checkpoint_detail {

template <typename V>
void write_pod(std::ostream& os, const V& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what)
{
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IoError(std::string("truncated field checkpoint reading ") + what);
    return v;
}

template <typename T>
void write_tensor(std::ostream& os, const std::vector<T>& data)
{
    std::vector<float> buf(data.size());
    for (size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <typename T>
void read_tensor(std::istream& is, std::vector<T>& data, const char* what)
{
    std::vector<float> buf(data.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw IoError(std::string("truncated field checkpoint reading ") + what);
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(buf[i]);
}

} // namespace checkpoint_detail

// Serializes the field (little-endian, float32 payload) atomically via a
// temp file + rename. extra_flags lets callers persist training-mode bits.
template <typename T>
void save_field(const std::string& path, const DeformationField<T>& field,
                std::uint32_t extra_flags = 0)
{
    namespace cd = checkpoint_detail;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot open for writing: " + tmp);
        os.write(kFieldMagic, 8);
        cd::write_pod(os, kFieldVersion);
        const auto& cfg = field.cfg;
        cd::write_pod(os, static_cast<std::int32_t>(cfg.levels));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.base_spatial));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.base_temporal));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.features));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.width));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.depth));
        cd::write_pod(os, static_cast<std::int32_t>(cfg.embedding_dim));
        cd::write_pod(os, static_cast<float>(cfg.tau_s));
        cd::write_pod(os, static_cast<float>(cfg.tau_r));
        cd::write_pod(os, static_cast<float>(cfg.scale_cap_fraction));
        std::uint32_t flags = extra_flags & ~(kFieldNoConstraints | kFieldNoDeltaC);
        if (cfg.no_constraints) flags |= kFieldNoConstraints;
        if (cfg.no_delta_c) flags |= kFieldNoDeltaC;
        cd::write_pod(os, flags);
        for (int k = 0; k < 3; ++k) cd::write_pod(os, static_cast<float>(field.bbox_min[k]));
        for (int k = 0; k < 3; ++k) cd::write_pod(os, static_cast<float>(field.bbox_max[k]));
        field.for_each_tensor(
            [&](int, const std::vector<T>& data) { cd::write_tensor(os, data); });
        if (!os) throw IoError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("rename failed: " + tmp + " -> " + path);
}

template <typename T>
DeformationField<T> load_field(const std::string& path, std::uint32_t* flags_out = nullptr)
{
    namespace cd = checkpoint_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kFieldMagic, 8) != 0)
        throw IoError("bad field checkpoint magic: " + path);
    const auto version = cd::read_pod<std::uint32_t>(is, "version");
    if (version != kFieldVersion)
        throw IoError("unsupported field checkpoint version in " + path);

    FieldConfig cfg;
    cfg.levels = cd::read_pod<std::int32_t>(is, "levels");
    cfg.base_spatial = cd::read_pod<std::int32_t>(is, "base_spatial");
    cfg.base_temporal = cd::read_pod<std::int32_t>(is, "base_temporal");
    cfg.features = cd::read_pod<std::int32_t>(is, "features");
    cfg.width = cd::read_pod<std::int32_t>(is, "width");
    cfg.depth = cd::read_pod<std::int32_t>(is, "depth");
    cfg.embedding_dim = cd::read_pod<std::int32_t>(is, "embedding_dim");
    cfg.tau_s = cd::read_pod<float>(is, "tau_s");
    cfg.tau_r = cd::read_pod<float>(is, "tau_r");
    cfg.scale_cap_fraction = cd::read_pod<float>(is, "scale_cap_fraction");
    const auto flags = cd::read_pod<std::uint32_t>(is, "flags");
    cfg.no_constraints = (flags & kFieldNoConstraints) != 0;
    cfg.no_delta_c = (flags & kFieldNoDeltaC) != 0;
    if (flags_out) *flags_out = flags;
    if (cfg.levels <= 0 || cfg.base_spatial < 2 || cfg.base_temporal < 2 || cfg.features <= 0 ||
        cfg.width <= 0 || cfg.depth <= 0 || cfg.embedding_dim < 0)
        throw IoError("invalid field checkpoint header in " + path);

    DeformationField<T> f;
    f.cfg = cfg;
    for (int k = 0; k < 3; ++k) f.bbox_min[k] = static_cast<T>(cd::read_pod<float>(is, "bbox"));
    for (int k = 0; k < 3; ++k) f.bbox_max[k] = static_cast<T>(cd::read_pod<float>(is, "bbox"));

    f.levels.resize(static_cast<size_t>(cfg.levels));
    for (int l = 0; l < cfg.levels; ++l)
        for (int p = 0; p < 6; ++p) {
            Plane<T>& pl = f.levels[static_cast<size_t>(l)][static_cast<size_t>(p)];
            pl.ru = cfg.base_spatial << l;
            pl.rv = (p < 3) ? (cfg.base_spatial << l) : (cfg.base_temporal << l);
            pl.f = cfg.features;
            pl.w.resize(static_cast<size_t>(pl.ru) * pl.rv * pl.f);
        }
    int in = f.feature_dim();
    for (int d = 0; d < cfg.depth; ++d) {
        f.trunk.push_back(field_detail::make_linear<T>(in, cfg.width));
        in = cfg.width;
    }
    f.head_dx = field_detail::make_linear<T>(cfg.width, 3);
    f.head_ds = field_detail::make_linear<T>(cfg.width, 3);
    f.head_dr = field_detail::make_linear<T>(cfg.width, 4);
    f.head_dc = field_detail::make_linear<T>(cfg.width + cfg.embedding_dim, 3);
    f.head_da = field_detail::make_linear<T>(cfg.width, 1);
    f.for_each_tensor([&](int, std::vector<T>& data) {
        cd::read_tensor(is, data, "tensor payload");
    });
    return f;
}

} // namespace colonsplat
