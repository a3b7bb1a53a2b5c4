// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#include <colonsplat/gen/tube.hpp>
#include <colonsplat/io/image.hpp>
#include <colonsplat/io/manifest.hpp>
#include <colonsplat/io/ply.hpp>
#include <colonsplat/scene/gaussian_cloud.hpp>
#include <colonsplat/scene/init.hpp>
#include <colonsplat/spatial/kdtree.hpp>

#include <catch2/catch_amalgamated.hpp>
#include "test_util.hpp"

#include <Eigen/Cholesky>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace colonsplat;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag)
{
    const auto dir = fs::temp_directory_path() / ("colonsplat_scene_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

} // namespace

TEST_CASE("covariance_from identity inputs give the identity matrix")
{
    const Vec3<double> s(0, 0, 0);
    const Quat<double> q(1, 0, 0, 0);
    const Mat3<double> sigma = covariance_from(s, q);
    CHECK((sigma - Mat3<double>::Identity()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("covariance_from scales one axis by exp(2 log_scale)")
{
    const Vec3<double> s(std::log(2.0), 0, 0);
    const Quat<double> q(1, 0, 0, 0);
    const Mat3<double> sigma = covariance_from(s, q);
    Mat3<double> want = Mat3<double>::Identity();
    want(0, 0) = 4.0;
    CHECK((sigma - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance_from is rotation invariant for isotropic scales")
{
    const Vec3<double> s(0, 0, 0);
    const double c = std::cos(M_PI / 4), z = std::sin(M_PI / 4); // 90 deg about z
    const Quat<double> q(c, 0, 0, z);
    const Mat3<double> sigma = covariance_from(s, q);
    CHECK((sigma - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance_from is exactly symmetric and positive definite")
{
    std::mt19937_64 rng(11);
    for (int it = 0; it < 200; ++it) {
        Quat<double> q;
        for (int k = 0; k < 4; ++k) q[k] = test_util::nrand(rng);
        if (q.norm() < 1e-6) q[0] = 1;
        q /= q.norm();
        Vec3<double> s;
        for (int k = 0; k < 3; ++k) s[k] = test_util::urand(rng, -10.0, 3.0);
        const Mat3<double> sigma = covariance_from(s, q);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
        Eigen::LLT<Mat3<double>> llt(sigma);
        CHECK(llt.info() == Eigen::Success);
    }
}

TEST_CASE("scene_extent is the bounding-box diagonal")
{
    GaussianCloud<double> cloud;
    cloud.resize(1);
    cloud.positions[0] = Vec3<double>(3, -2, 5);
    CHECK(scene_extent(cloud) == 0.0);

    cloud.resize(2);
    cloud.positions[0] = Vec3<double>(0, 0, 0);
    cloud.positions[1] = Vec3<double>(1, 0, 0);
    CHECK(scene_extent(cloud) == 1.0);

    cloud.positions[1] = Vec3<double>(1, 1, 1);
    CHECK(scene_extent(cloud) == Catch::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("scene_extent is invariant under box-preserving rigid motions")
{
    // Axis-aligned boxes are preserved by translations and by rotations that
    // permute/flip axes; the diagonal must be unchanged under that subgroup.
    std::mt19937_64 rng(12);
    GaussianCloud<double> cloud;
    cloud.resize(40);
    for (auto& p : cloud.positions)
        for (int k = 0; k < 3; ++k) p[k] = test_util::urand(rng, -4.0, 4.0);
    const double base = scene_extent(cloud);

    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (int it = 0; it < 100; ++it) {
        const auto& perm = perms[static_cast<size_t>(test_util::urand(rng, 0, 5.999))];
        Vec3<double> sign, shift;
        for (int k = 0; k < 3; ++k) {
            sign[k] = test_util::urand(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
            shift[k] = test_util::nrand(rng, 10.0);
        }
        GaussianCloud<double> moved = cloud;
        for (size_t i = 0; i < cloud.size(); ++i)
            for (int k = 0; k < 3; ++k)
                moved.positions[i][k] = sign[k] * cloud.positions[i][perm[k]] + shift[k];
        CHECK(scene_extent(moved) == Catch::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("scene_extent rejects an empty cloud")
{
    GaussianCloud<double> cloud;
    CHECK_THROWS_AS(scene_extent(cloud), EmptyCloud);
}

TEST_CASE("normalize_invariants restores unit quaternions and clamps colors")
{
    GaussianCloud<double> cloud;
    cloud.resize(3);
    cloud.rotations[0] = Quat<double>(2, 0, 0, 0);
    cloud.rotations[1] = Quat<double>(0, 0, 0, 0); // degenerate, reset to identity
    cloud.rotations[2] = Quat<double>(1, 2, 3, 4);
    cloud.base_colors[0] = Vec3<double>(-0.5, 0.5, 1.5);
    cloud.normalize_invariants();
    for (size_t i = 0; i < 3; ++i) CHECK(cloud.rotations[i].norm() == Catch::Approx(1.0).margin(1e-12));
    CHECK(cloud.rotations[1][0] == 1.0);
    CHECK(cloud.base_colors[0][0] == 0.0);
    CHECK(cloud.base_colors[0][1] == 0.5);
    CHECK(cloud.base_colors[0][2] == 1.0);
}

TEST_CASE("init_from_depth back-projects a single pixel through the pinhole")
{
    Frame<double> frame;
    frame.camera.fx = frame.camera.fy = 1;
    frame.camera.cx = frame.camera.cy = 0;
    frame.camera.width = frame.camera.height = 1;
    frame.camera.R.setIdentity();
    frame.camera.tvec.setZero();
    frame.rgb = Image<double>(1, 1, 3, 0.25);
    frame.depth_sup = Image<double>(1, 1, 1, 1.0);

    const auto cloud = init_from_depth<double>({frame});
    REQUIRE(cloud.size() == 1);
    CHECK((cloud.positions[0] - Vec3<double>(0, 0, 1)).norm() < 1e-15);
    CHECK(cloud.base_colors[0][0] == 0.25);
    CHECK(cloud.opacity(0) == Catch::Approx(0.1).epsilon(1e-12));
    CHECK((cloud.rotations[0] - Quat<double>(1, 0, 0, 0)).norm() == 0.0);
    for (int k = 0; k < cloud.embedding_dim; ++k) CHECK(cloud.embedding(0)[k] == 0.0);
}

TEST_CASE("init_from_depth rejects frames with no valid depth")
{
    Frame<double> frame;
    frame.camera.fx = frame.camera.fy = 1;
    frame.camera.cx = frame.camera.cy = 0;
    frame.camera.width = frame.camera.height = 1;
    frame.rgb = Image<double>(1, 1, 3, 0.0);
    frame.depth_sup = Image<double>(1, 1, 1, -1.0);
    CHECK_THROWS_AS(init_from_depth<double>({frame}), NoValidDepth);
}

TEST_CASE("init_from_depth reprojects onto the source pixels at the source depth")
{
    std::mt19937_64 rng(13);
    Frame<double> frame;
    frame.camera.fx = frame.camera.fy = 8;
    frame.camera.cx = frame.camera.cy = 7.5;
    frame.camera.width = frame.camera.height = 16;
    frame.camera.R = Eigen::AngleAxisd(0.3, Vec3<double>(1, 2, 2).normalized()).toRotationMatrix();
    frame.camera.tvec = Vec3<double>(0.2, -0.1, 0.4);
    frame.rgb = Image<double>(16, 16, 3);
    frame.depth_sup = Image<double>(16, 16, 1);
    for (auto& v : frame.rgb.data) v = test_util::urand(rng, 0.0, 1.0);
    for (auto& v : frame.depth_sup.data) v = test_util::urand(rng, 1.0, 3.0);

    InitOptions opt;
    opt.stride = 4;
    opt.merge_radius = 0; // keep source pixels identifiable
    const auto cloud = init_from_depth(std::vector<Frame<double>>{frame}, opt);
    REQUIRE(cloud.size() == 16);

    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3<double> p_cam = frame.camera.to_camera(cloud.positions[i]);
        const double px = frame.camera.fx * p_cam[0] / p_cam[2] + frame.camera.cx;
        const double py = frame.camera.fy * p_cam[1] / p_cam[2] + frame.camera.cy;
        const int xi = static_cast<int>(std::lround(px));
        const int yi = static_cast<int>(std::lround(py));
        CHECK(std::abs(px - xi) <= 0.5);
        CHECK(std::abs(py - yi) <= 0.5);
        REQUIRE(xi % opt.stride == 0);
        REQUIRE(yi % opt.stride == 0);
        CHECK(p_cam[2] == Catch::Approx(frame.depth_sup.at(yi, xi)).epsilon(1e-5));
        for (int c = 0; c < 3; ++c)
            CHECK(cloud.base_colors[i][c] == Catch::Approx(frame.rgb.at(yi, xi, c)).margin(1e-12));
    }
}

TEST_CASE("init_from_depth hugs the analytic tube surface")
{
    TubeSpec spec;
    spec.frames = 2;
    spec.width = spec.height = 64;
    spec.amplitude = 0.0;
    ThreadPool pool(1);

    std::vector<Frame<double>> frames;
    double depth_sum = 0;
    size_t depth_count = 0;
    for (int i = 0; i < 2; ++i) {
        Frame<double> frame;
        frame.camera = trajectory_camera<double>(spec, i);
        const auto rc = raycast_frame(spec, frame.camera, frame.camera.t, pool);
        frame.rgb = rc.rgb;
        frame.depth_sup = rc.depth;
        for (const auto d : rc.depth.data)
            if (d > 0) {
                depth_sum += d;
                ++depth_count;
            }
        frames.push_back(std::move(frame));
    }
    REQUIRE(depth_count > 0);

    InitOptions opt;
    opt.stride = 4;
    const auto cloud = init_from_depth(frames, opt);
    REQUIRE(cloud.size() >= 10);

    const auto truth = sample_truth_cloud<double>(spec, 0.0, 20000);
    KdTree<double> tree(truth);
    double acc = 0;
    for (const auto& p : cloud.positions) acc += tree.nearest_dist(p);
    const double one_sided_chamfer = acc / static_cast<double>(cloud.size());

    const double mean_depth = depth_sum / static_cast<double>(depth_count);
    const double pixel_footprint = opt.stride * mean_depth / frames[0].camera.fx;
    CHECK(one_sided_chamfer <= 2.0 * pixel_footprint);
}

TEST_CASE("gaussian checkpoint round-trips losslessly at f32")
{
    std::mt19937_64 rng(14);
    auto cloud = test_util::random_micro_cloud<float>(rng, 7, 8);
    const std::string dir = temp_dir("ply");
    const std::string path = dir + "/cloud.ply";
    save_ply(path, cloud);
    const auto back = load_ply<float>(path);

    REQUIRE(back.size() == cloud.size());
    REQUIRE(back.embedding_dim == cloud.embedding_dim);
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(back.positions[i] == cloud.positions[i]);
        CHECK(back.log_scales[i] == cloud.log_scales[i]);
        CHECK(back.rotations[i] == cloud.rotations[i]);
        CHECK(back.opacity_logits[i] == cloud.opacity_logits[i]);
        CHECK(back.base_colors[i] == cloud.base_colors[i]);
        for (int k = 0; k < cloud.embedding_dim; ++k)
            CHECK(back.embedding(i)[k] == cloud.embedding(i)[k]);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_ply rejects files missing a required property")
{
    const std::string dir = temp_dir("badply");
    const std::string path = dir + "/bad.ply";
    {
        std::ofstream out(path, std::ios::binary);
        out << "ply\nformat binary_little_endian 1.0\n"
               "element vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "end_header\n";
        const float xyz[3] = {0, 0, 0};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    CHECK_THROWS_AS(load_ply<float>(path), MalformedPly);
    fs::remove_all(dir);
}

TEST_CASE("load_ply rejects zero-vertex files")
{
    std::mt19937_64 rng(15);
    auto cloud = test_util::random_micro_cloud<float>(rng, 1, 2);
    const std::string dir = temp_dir("zeroply");
    const std::string path = dir + "/one.ply";
    save_ply(path, cloud);

    // Rewrite the header's vertex count to zero, keeping the layout valid.
    std::ifstream in(path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("element vertex 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("element vertex 1").size(), "element vertex 0");
    std::ofstream out(path, std::ios::binary);
    out << text;
    out.close();

    CHECK_THROWS_AS(load_ply<float>(path), InvalidCount);
    fs::remove_all(dir);
}

TEST_CASE("point-cloud ply round-trips")
{
    std::mt19937_64 rng(16);
    std::vector<Vec3<float>> pts(123);
    for (auto& p : pts)
        for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(test_util::nrand(rng, 2.0));
    const std::string dir = temp_dir("ptply");
    save_point_ply(dir + "/pts.ply", pts);
    const auto back = load_point_ply<float>(dir + "/pts.ply");
    REQUIRE(back.size() == pts.size());
    for (size_t i = 0; i < pts.size(); ++i) CHECK(back[i] == pts[i]);
    fs::remove_all(dir);
}

TEST_CASE("kdtree knn matches brute force with deterministic tie order")
{
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t n = 2 + static_cast<size_t>(test_util::urand(rng, 0, 60));
        std::vector<Vec3<double>> pts(n);
        for (auto& p : pts)
            for (int k = 0; k < 3; ++k)
                p[k] = std::round(test_util::urand(rng, -2.0, 2.0) * 4.0) / 4.0; // force ties
        KdTree<double> tree(pts);

        Vec3<double> q;
        for (int k = 0; k < 3; ++k) q[k] = test_util::urand(rng, -2.0, 2.0);
        const int k = 1 + static_cast<int>(test_util::urand(rng, 0, 7.999));
        const int exclude = static_cast<int>(test_util::urand(rng, 0, double(n) - 0.001));

        std::vector<int> got;
        tree.knn(q, k, exclude, got);

        std::vector<std::pair<double, int>> all;
        for (size_t i = 0; i < n; ++i) {
            if (static_cast<int>(i) == exclude) continue;
            all.emplace_back((pts[i] - q).squaredNorm(), static_cast<int>(i));
        }
        std::sort(all.begin(), all.end());
        const size_t want_n = std::min<size_t>(static_cast<size_t>(k), all.size());
        REQUIRE(got.size() == want_n);
        for (size_t i = 0; i < want_n; ++i) CHECK(got[i] == all[i].second);

        const double nd = tree.nearest_dist(q);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : pts) best = std::min(best, (p - q).norm());
        CHECK(nd == Catch::Approx(best).margin(1e-15));
    }
}

TEST_CASE("camera transforms round-trip world and camera space")
{
    std::mt19937_64 rng(18);
    Camera<double> cam;
    cam.R = Eigen::AngleAxisd(0.7, Vec3<double>(3, -1, 2).normalized()).toRotationMatrix();
    cam.tvec = Vec3<double>(0.3, 1.2, -0.8);
    for (int it = 0; it < 50; ++it) {
        Vec3<double> p;
        for (int k = 0; k < 3; ++k) p[k] = test_util::nrand(rng, 3.0);
        CHECK((cam.to_world(cam.to_camera(p)) - p).norm() < 1e-12);
    }
}

TEST_CASE("manifest round-trips and orders frames by timestep")
{
    const std::string dir = temp_dir("manifest");
    Manifest m;
    for (int i = 0; i < 3; ++i) {
        ManifestFrame f;
        f.rgb_path = "frame.png";
        f.depth_path = "depth.pfm";
        f.t = i / 2.0;
        f.fx = f.fy = 32;
        f.cx = f.cy = 31.5;
        f.width = f.height = 64;
        for (int k = 0; k < 4; ++k) f.world_to_camera[static_cast<size_t>(k) * 5] = 1.0;
        f.split = i == 0 ? "test" : "train";
        m.frames.push_back(f);
    }
    write_manifest(dir, m);
    const auto back = load_manifest(dir);
    REQUIRE(back.frames.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.frames[i].t == m.frames[i].t);
        CHECK(back.frames[i].split == m.frames[i].split);
        CHECK(back.frames[i].world_to_camera == m.frames[i].world_to_camera);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_dataset rejects decreasing timesteps")
{
    const std::string dir = temp_dir("badorder");
    Image<float> rgb(2, 2, 3, 0.5f), depth(2, 2, 1, 1.0f);
    write_png_rgb(dir + "/f.png", rgb);
    write_pfm(dir + "/d.pfm", depth);

    Manifest m;
    for (int i = 0; i < 2; ++i) {
        ManifestFrame f;
        f.rgb_path = "f.png";
        f.depth_path = "d.pfm";
        f.t = 1.0 - i; // decreasing
        f.fx = f.fy = 1;
        f.cx = f.cy = 0.5;
        f.width = f.height = 2;
        for (int k = 0; k < 4; ++k) f.world_to_camera[static_cast<size_t>(k) * 5] = 1.0;
        m.frames.push_back(f);
    }
    write_manifest(dir, m);
    CHECK_THROWS_AS(load_dataset<float>(dir), UsageError);
    fs::remove_all(dir);
}

TEST_CASE("png and pfm round-trip their payloads")
{
    std::mt19937_64 rng(19);
    const std::string dir = temp_dir("img");

    Image<float> rgb(9, 5, 3);
    for (auto& v : rgb.data) v = static_cast<float>(test_util::urand(rng, 0.0, 1.0));
    write_png_rgb(dir + "/x.png", rgb);
    const auto rgb_back = read_png_rgb(dir + "/x.png");
    REQUIRE(rgb_back.same_shape(rgb));
    for (size_t i = 0; i < rgb.data.size(); ++i)
        CHECK(std::abs(rgb_back.data[i] - rgb.data[i]) <= 0.5f / 255.0f + 1e-6f);

    Image<float> depth(7, 4, 1);
    for (auto& v : depth.data) v = static_cast<float>(test_util::nrand(rng, 10.0));
    write_pfm(dir + "/d.pfm", depth);
    const auto depth_back = read_pfm(dir + "/d.pfm");
    REQUIRE(depth_back.same_shape(depth));
    for (size_t i = 0; i < depth.data.size(); ++i) CHECK(depth_back.data[i] == depth.data[i]);

    fs::remove_all(dir);
}
