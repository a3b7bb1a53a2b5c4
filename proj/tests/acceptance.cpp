// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance gate. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits non-zero when any criterion fails.
// Tolerances are pinned here and nowhere else.

#include <colonsplat/gen/tube.hpp>
#include <colonsplat/metrics/metrics.hpp>
#include <colonsplat/scene/init.hpp>
#include <colonsplat/train/objective.hpp>
#include <colonsplat/train/trainer.hpp>

#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace colonsplat;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- tolerances
// Gradient oracle (criterion 1): relative / absolute mismatch bounds and the
// finite-difference harness defaults from test_util.
constexpr double kGradRel = 1e-3;
constexpr double kGradAbs = 1e-6;
// Constraint suite (criterion 2): the clip bounds hold exactly in real
// arithmetic; a float32 sum x + clip(d) rounds once, so one part in 2^20 of
// slack absorbs representation error without weakening the bound.
constexpr float kClipSlack = 1e-6f;
constexpr float kCapSlack = 1e-5f;
// Identity at init (criterion 3).
constexpr float kIdentityTol = 1e-6f;
// Metric oracles (criterion 4).
constexpr double kGeomTol = 1e-9;
constexpr double kImageTol = 1e-7;
// Static fit (criterion 5).
constexpr double kStaticPsnrFloor = 28.0;
constexpr double kStaticDepthCeil = 0.02;
constexpr double kStaticBudgetSec = 1800.0;
// Dynamic fidelity and ablation (criteria 6 and 7).
constexpr double kFrozenRatio = 0.7;
constexpr double kNoKnnRatio = 1.1;
// Invariance suites (criterion 8).
constexpr double kInvarianceRel = 1e-10;

int g_failures = 0;

void report(int id, bool pass, const std::string& detail)
{
    std::printf("criterion %d: %s (%s)\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, ...)
{
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

// In-memory dataset from the analytic generator (no image quantization).
Dataset<float> tube_dataset(const TubeSpec& spec)
{
    Dataset<float> ds;
    ThreadPool pool(1);
    for (int i = 0; i < spec.frames; ++i) {
        const auto cam = trajectory_camera<double>(spec, i);
        const auto rc = raycast_frame(spec, cam, cam.t, pool);

        Frame<float> out;
        out.camera.fx = static_cast<float>(cam.fx);
        out.camera.fy = static_cast<float>(cam.fy);
        out.camera.cx = static_cast<float>(cam.cx);
        out.camera.cy = static_cast<float>(cam.cy);
        out.camera.width = cam.width;
        out.camera.height = cam.height;
        out.camera.R = cam.R.cast<float>();
        out.camera.tvec = cam.tvec.cast<float>();
        out.camera.t = static_cast<float>(cam.t);
        out.rgb = image_cast<float>(rc.rgb);
        out.depth_sup = image_cast<float>(rc.depth);
        out.is_test = i % 8 == 0;
        ds.frames.push_back(std::move(out));
    }
    return ds;
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) return "<unreadable:" + path + ">";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(COLONSPLAT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return status == -1 ? -1 : (WIFEXITED(status) ? WEXITSTATUS(status) : -2);
}

// ------------------------------------------------------------- criterion 1

void criterion_gradient_oracle()
{
    const auto start = std::chrono::steady_clock::now();
    ThreadPool pool(1);
    const LossWeights weights;
    const RenderOptions ropts;

    size_t checked = 0, skipped = 0, failed = 0;
    int bad_scenes = 0;
    double worst = 0;
    std::string worst_coord;
    for (int scene = 0; scene < 100; ++scene) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(scene));
        const size_t n = 5 + static_cast<size_t>(scene % 6);
        auto cloud = test_util::random_micro_cloud<double>(rng, n);
        auto field = test_util::random_micro_field(cloud, rng, test_util::micro_field_config());
        auto frame = test_util::random_micro_frame(test_util::micro_camera<double>(), rng);
        frame.camera.t = test_util::urand(rng, 0.0, 1.0);
        const auto ni = build_knn(cloud.positions, 3);

        CloudGrads<double> cg(cloud.size(), cloud.embedding_dim);
        DeformationField<double> fg = zero_like(field);
        objective_backward(cloud, field, true, frame, &ni, weights, ropts, pool, cg, fg);

        std::vector<test_util::ParamBlock> blocks;
        test_util::add_cloud_blocks(blocks, cloud, cg);
        test_util::add_field_blocks(blocks, field, fg);

        auto eval = [&] {
            return objective_forward(cloud, field, true, frame, &ni, weights, ropts, pool)
                .total;
        };
        test_util::FdOptions opt;
        opt.rel = kGradRel;
        opt.abs = kGradAbs;
        const auto res = test_util::check_gradients(eval, blocks, opt);
        checked += res.checked;
        skipped += res.skipped;
        failed += res.failed;
        if (res.worst_err > worst) {
            worst = res.worst_err;
            worst_coord = fmt("scene %d %s", scene, res.worst_coord.c_str());
        }
        if (!res.ok(opt)) ++bad_scenes;
    }
    const double secs = seconds_since(start);
    const bool pass = bad_scenes == 0 && secs < 120.0;
    report(1, pass,
           fmt("100 scenes, %zu coords checked, %zu kink-skipped, %zu failed, worst %.2e at %s, %.0fs",
               checked, skipped, failed, worst, worst_coord.c_str(), secs));
}

// ------------------------------------------------------------- criterion 2

void criterion_constraints(const GaussianCloud<float>& cloud, const DeformationField<float>& field)
{
    std::mt19937_64 rng(2026);
    const float extent = scene_extent(cloud);
    const float tau_s = static_cast<float>(field.cfg.tau_s);
    const float tau_r = static_cast<float>(field.cfg.tau_r);
    const float cap = 0.05f * extent * (1 + kCapSlack);
    ThreadPool pool(1);

    size_t violations = 0;
    for (int draw = 0; draw < 1000; ++draw) {
        const float t = static_cast<float>(test_util::urand(rng, 0.0, 1.0));
        const auto moved = deform(field, cloud, t, false, pool);
        for (size_t i = 0; i < cloud.size(); ++i) {
            if (moved.cloud.opacity_logits[i] != cloud.opacity_logits[i]) ++violations;
            for (int k = 0; k < 3; ++k) {
                if (std::abs(moved.cloud.log_scales[i][k] - cloud.log_scales[i][k]) >
                    tau_s + kClipSlack)
                    ++violations;
                if (std::exp(moved.cloud.log_scales[i][k]) > cap) ++violations;
            }
            Quat<float> pre = cloud.rotations[i];
            for (int k = 0; k < 4; ++k)
                pre[k] += clip(moved.aux.dr[i][k], -tau_r, tau_r);
            if ((pre - cloud.rotations[i]).cwiseAbs().maxCoeff() > tau_r + kClipSlack)
                ++violations;
            const Quat<float> renorm = pre / pre.norm();
            if ((moved.cloud.rotations[i] - renorm).cwiseAbs().maxCoeff() > kClipSlack)
                ++violations;
        }
    }
    report(2, violations == 0,
           fmt("1000 timesteps x %zu gaussians, %zu violations", cloud.size(), violations));
}

// ------------------------------------------------------------- criterion 3

void criterion_identity_at_init()
{
    TubeSpec spec;
    spec.frames = 8;
    spec.width = spec.height = 32;
    const auto ds = tube_dataset(spec);
    InitOptions init;
    init.stride = 4;
    auto cloud = init_from_depth(ds.frames, init);
    cloud.normalize_invariants();

    FieldConfig fcfg;
    fcfg.embedding_dim = cloud.embedding_dim;
    const auto field = make_field(fcfg, cloud, 7); // heads zero at construction

    const auto& cam = ds.frames[3].camera;
    const auto canonical = render(project(cloud, cam), cam);

    float worst = 0;
    for (const float t : {0.0f, 0.5f, 1.0f}) {
        const auto moved = deform(field, cloud, t);
        const auto out = render(project(moved.cloud, cam), cam);
        for (size_t i = 0; i < out.rgb.data.size(); ++i)
            worst = std::max(worst, std::abs(out.rgb.data[i] - canonical.rgb.data[i]));
        for (size_t i = 0; i < out.depth.data.size(); ++i)
            worst = std::max(worst, std::abs(out.depth.data[i] - canonical.depth.data[i]));
    }
    report(3, worst <= kIdentityTol,
           fmt("max |render(t) - render(canonical)| = %.3g over t in {0, 0.5, 1}", worst));
}

// ------------------------------------------------------------- criterion 4

double oracle_ssim(const Image<double>& a, const Image<double>& b)
{
    std::vector<double> win(121);
    double wsum = 0;
    for (int y = -5; y <= 5; ++y)
        for (int x = -5; x <= 5; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
            win[static_cast<size_t>((y + 5) * 11 + (x + 5))] = v;
            wsum += v;
        }
    for (auto& v : win) v /= wsum;

    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0;
    size_t count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int cy = 5; cy < a.height - 5; ++cy)
            for (int cx = 5; cx < a.width - 5; ++cx) {
                double ma = 0, mb = 0, va = 0, vb = 0, vab = 0;
                for (int dy = -5; dy <= 5; ++dy)
                    for (int dx = -5; dx <= 5; ++dx) {
                        const double w = win[static_cast<size_t>((dy + 5) * 11 + (dx + 5))];
                        const double pa = a.at(cy + dy, cx + dx, c);
                        const double pb = b.at(cy + dy, cx + dx, c);
                        ma += w * pa;
                        mb += w * pb;
                        va += w * pa * pa;
                        vb += w * pb * pb;
                        vab += w * pa * pb;
                    }
                va -= ma * ma;
                vb -= mb * mb;
                vab -= ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * vab + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return acc / static_cast<double>(count);
}

void criterion_metric_oracles()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(404);
    double worst_geom = 0, worst_img = 0;
    bool knn_exact = true;

    // Geometry block: chamfer / hd95 / build_knn against O(N^2) brute force.
    {
        std::vector<Vec3<double>> p, q;
        for (int i = 0; i < 500; ++i) {
            p.emplace_back(test_util::urand(rng, -1, 1), test_util::urand(rng, -1, 1),
                           test_util::urand(rng, -1, 1));
            q.emplace_back(test_util::urand(rng, -1, 1), test_util::urand(rng, -1, 1),
                           test_util::urand(rng, -1, 1));
        }
        auto nn = [](const std::vector<Vec3<double>>& from, const std::vector<Vec3<double>>& to) {
            std::vector<double> d;
            for (const auto& a : from) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& b : to) best = std::min(best, (a - b).norm());
                d.push_back(best);
            }
            return d;
        };
        const auto dp = nn(p, q), dq = nn(q, p);
        double mp = 0, mq = 0;
        for (auto v : dp) mp += v;
        for (auto v : dq) mq += v;
        worst_geom = std::max(worst_geom,
                              std::abs(chamfer(p, q) - (mp / 500 + mq / 500) / 2));
        auto pct = [](std::vector<double> d) {
            std::sort(d.begin(), d.end());
            const auto rank = static_cast<size_t>(std::ceil(0.95 * d.size()));
            return d[std::min(d.size() - 1, std::max<size_t>(rank, 1) - 1)];
        };
        worst_geom = std::max(worst_geom,
                              std::abs(hd95(p, q) - std::max(pct(dp), pct(dq))));

        const auto ni = build_knn(p, 8);
        for (size_t i = 0; i < p.size() && knn_exact; ++i) {
            std::vector<std::pair<double, int>> cand;
            for (size_t j = 0; j < p.size(); ++j)
                if (j != i)
                    cand.emplace_back((p[i] - p[j]).norm(), static_cast<int>(j));
            std::sort(cand.begin(), cand.end());
            for (int k = 0; k < 8; ++k)
                if (ni.idx[i * 8 + static_cast<size_t>(k)] != cand[static_cast<size_t>(k)].second)
                    knn_exact = false;
        }
    }

    // Image block: every scalar metric against a direct-summation oracle.
    {
        Image<double> a(32, 32, 3), b(32, 32, 3);
        for (auto& v : a.data) v = test_util::urand(rng, 0, 1);
        for (auto& v : b.data) v = test_util::urand(rng, 0, 1);

        double mse = 0, l1 = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
            l1 += std::abs(a.data[i] - b.data[i]);
        }
        mse /= static_cast<double>(a.data.size());
        l1 /= static_cast<double>(a.data.size());
        worst_img = std::max(worst_img, std::abs(psnr(a, b) - 10 * std::log10(1 / mse)));
        worst_img = std::max(worst_img, std::abs(loss_rgb(a, b) - l1));
        worst_img = std::max(worst_img, std::abs(ssim(a, b) - oracle_ssim(a, b)));

        double tv = 0;
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x + 1 < a.width; ++x)
                    tv += std::abs(a.at(y, x + 1, c) - a.at(y, x, c));
            for (int y = 0; y + 1 < a.height; ++y)
                for (int x = 0; x < a.width; ++x)
                    tv += std::abs(a.at(y + 1, x, c) - a.at(y, x, c));
        }
        tv /= static_cast<double>((a.height * (a.width - 1) + (a.height - 1) * a.width) * 3);
        worst_img = std::max(worst_img, std::abs(loss_tv(a) - tv));

        std::vector<Vec3<double>> colors, offsets;
        for (int i = 0; i < 64; ++i) {
            colors.emplace_back(test_util::urand(rng, 0, 1), test_util::urand(rng, 0, 1),
                                test_util::urand(rng, 0, 1));
            offsets.emplace_back(test_util::nrand(rng), test_util::nrand(rng),
                                 test_util::nrand(rng));
        }
        double co = 0;
        for (const auto& d : offsets) co += d.squaredNorm();
        worst_img = std::max(worst_img, std::abs(loss_color_offset(offsets) - co / 64));
        Vec3<double> mean = Vec3<double>::Zero();
        for (const auto& c : colors) mean += c;
        mean /= 64.0;
        double cv = 0;
        for (const auto& c : colors) cv += (c - mean).squaredNorm();
        worst_img = std::max(worst_img, std::abs(loss_color_variance(colors) - cv / 64));

        Image<double> rd(16, 12, 1), sd(16, 12, 1);
        for (auto& v : rd.data) v = test_util::urand(rng, 0.2, 3.0);
        for (auto& v : sd.data) v = test_util::urand(rng, 1.0, 2.0);
        std::vector<std::uint8_t> mask(rd.data.size(), 1);
        for (size_t i = 0; i < mask.size(); i += 7) mask[i] = 0;
        auto norm = [&](const Image<double>& img) {
            double mn = std::numeric_limits<double>::infinity(), mx = -mn;
            for (size_t i = 0; i < img.data.size(); ++i)
                if (mask[i]) { mn = std::min(mn, img.data[i]); mx = std::max(mx, img.data[i]); }
            std::vector<double> out;
            for (size_t i = 0; i < img.data.size(); ++i)
                if (mask[i]) out.push_back((img.data[i] - mn) / std::max(mx - mn, 1e-8));
            return out;
        };
        const auto nr = norm(rd), ns = norm(sd);
        double dl = 0;
        for (size_t i = 0; i < nr.size(); ++i) dl += std::abs(nr[i] - ns[i]);
        worst_img = std::max(worst_img,
                             std::abs(loss_depth(rd, sd, mask) - dl / static_cast<double>(nr.size())));
    }

    const double secs = seconds_since(start);
    const bool pass = worst_geom <= kGeomTol && knn_exact && worst_img <= kImageTol && secs < 60;
    report(4, pass,
           fmt("geometry err %.2e, knn %s, image err %.2e, %.0fs", worst_geom,
               knn_exact ? "exact" : "MISMATCH", worst_img, secs));
}

// --------------------------------------------------- criteria 5, 6, 7 shared

struct FitResult {
    TrainResult<float> model;
    double seconds = 0;
};

FitResult fit(const Dataset<float>& ds, TrainConfig cfg)
{
    const auto start = std::chrono::steady_clock::now();
    auto cloud = init_from_depth(ds.frames, {});
    FitResult res{train(ds, std::move(cloud), cfg), 0.0};
    res.seconds = seconds_since(start);
    return res;
}

TrainConfig default_run_config()
{
    TrainConfig cfg;
    cfg.deterministic = true;
    cfg.seed = 7;
    cfg.threads = 1;
    return cfg;
}

void criterion_static_fit()
{
    TubeSpec spec;
    spec.amplitude = 0.0;
    const auto ds = tube_dataset(spec);
    const auto res = fit(ds, default_run_config());

    double acc = 0;
    int count = 0;
    std::vector<Image<float>> rendered, truth;
    std::vector<std::vector<std::uint8_t>> masks;
    for (const auto& frame : ds.frames) {
        if (!frame.is_test) continue;
        const auto moved = deform(res.model.field, res.model.cloud, frame.camera.t);
        const auto out = render(project(moved.cloud, frame.camera), frame.camera);
        acc += psnr(out.rgb, frame.rgb);
        ++count;
        rendered.push_back(out.depth);
        truth.push_back(frame.depth_sup);
        masks.push_back(depth_valid_mask(frame.depth_sup));
    }
    const double mean_psnr = acc / count;
    const double mse_d = depth_mse(rendered, truth, masks);
    const bool pass = mean_psnr >= kStaticPsnrFloor && mse_d <= kStaticDepthCeil &&
                      res.seconds <= kStaticBudgetSec;
    report(5, pass,
           fmt("test psnr %.2f dB, mse_d %.4f, %zu gaussians, %.0fs train",
               mean_psnr, mse_d, res.model.cloud.size(), res.seconds));
}

std::vector<double> test_timestep_cds(const TubeSpec& spec, const Dataset<float>& ds,
                                      const TrainResult<float>& model)
{
    std::vector<double> cds;
    for (const auto& frame : ds.frames) {
        if (!frame.is_test) continue;
        const double t = frame.camera.t;
        const auto truth = sample_truth_cloud(spec, t, spec.truth_points);
        const auto pts =
            cloud_from_gaussians(model.cloud, model.field, static_cast<float>(t));
        std::vector<Vec3<double>> pd;
        for (const auto& p : pts) pd.emplace_back(p[0], p[1], p[2]);
        cds.push_back(pd.empty() ? std::numeric_limits<double>::infinity()
                                 : chamfer(pd, truth));
    }
    return cds;
}

void criteria_dynamic_and_ablation()
{
    TubeSpec spec; // amplitude 0.15 by default
    const auto ds = tube_dataset(spec);

    const auto full = fit(ds, default_run_config());

    auto frozen_cfg = default_run_config();
    frozen_cfg.freeze_deform = true;
    const auto frozen = fit(ds, frozen_cfg);

    const auto cd_full = test_timestep_cds(spec, ds, full.model);
    const auto cd_frozen = test_timestep_cds(spec, ds, frozen.model);
    bool everywhere = true;
    double worst_ratio = 0;
    for (size_t i = 0; i < cd_full.size(); ++i) {
        const double ratio = cd_full[i] / cd_frozen[i];
        worst_ratio = std::max(worst_ratio, ratio);
        if (cd_full[i] > kFrozenRatio * cd_frozen[i]) everywhere = false;
    }
    double mean_full = 0, mean_frozen = 0;
    for (auto v : cd_full) mean_full += v;
    for (auto v : cd_frozen) mean_frozen += v;
    mean_full /= static_cast<double>(cd_full.size());
    mean_frozen /= static_cast<double>(cd_frozen.size());
    report(6, everywhere,
           fmt("cd full %.4f vs frozen %.4f (mean), worst per-timestep ratio %.3f vs %.2f "
               "bound, %.0fs + %.0fs train",
               mean_full, mean_frozen, worst_ratio, kFrozenRatio, full.seconds,
               frozen.seconds));

    // Criterion 2 rides on this real constrained training run.
    criterion_constraints(full.model.cloud, full.model.field);

    auto noknn_cfg = default_run_config();
    noknn_cfg.no_knn = true;
    const auto noknn = fit(ds, noknn_cfg);
    const auto cd_noknn = test_timestep_cds(spec, ds, noknn.model);
    double mean_noknn = 0;
    for (auto v : cd_noknn) mean_noknn += v;
    mean_noknn /= static_cast<double>(cd_noknn.size());
    report(7, mean_noknn >= kNoKnnRatio * mean_full,
           fmt("mean cd without knn %.4f vs full %.4f (ratio %.3f, need >= %.2f), %.0fs train",
               mean_noknn, mean_full, mean_noknn / mean_full, kNoKnnRatio, noknn.seconds));
}

// ------------------------------------------------------------- criterion 8

void criterion_invariances()
{
    std::mt19937_64 rng(808);
    double worst = 0;

    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 10 + static_cast<int>(test_util::urand(rng, 0, 30));
        const int k = 2 + trial % 5;
        std::vector<Vec3<double>> x;
        for (int i = 0; i < n; ++i)
            x.emplace_back(test_util::nrand(rng), test_util::nrand(rng), test_util::nrand(rng));
        const auto ni = build_knn(x, k);
        const double base = loss_knn(x, ni);
        const Vec3<double> shift(test_util::urand(rng, -50, 50), test_util::urand(rng, -50, 50),
                                 test_util::urand(rng, -50, 50));
        auto moved = x;
        for (auto& p : moved) p += shift;
        const double shifted = loss_knn(moved, ni);
        worst = std::max(worst, std::abs(shifted - base) / std::max(1.0, std::abs(base)));
    }

    for (int trial = 0; trial < 1000; ++trial) {
        Image<double> rd(10, 8, 1), sd(10, 8, 1);
        for (auto& v : rd.data) v = test_util::urand(rng, 0.5, 4.0);
        for (auto& v : sd.data) v = test_util::urand(rng, 1.0, 3.0);
        std::vector<std::uint8_t> mask(rd.data.size(), 1);
        for (auto& m : mask) m = test_util::urand(rng, 0, 1) < 0.85 ? 1 : 0;
        mask[0] = mask[1] = 1;
        const double base = loss_depth(rd, sd, mask);

        const double a = test_util::urand(rng, 0.1, 5.0);
        const double b = test_util::urand(rng, -10.0, 10.0);
        Image<double> rd2 = rd, sd2 = sd;
        for (auto& v : rd2.data) v = a * v + b;
        const double c = test_util::urand(rng, 0.1, 5.0);
        const double d = test_util::urand(rng, -10.0, 10.0);
        for (auto& v : sd2.data) v = c * v + d;
        const double both = loss_depth(rd2, sd2, mask);
        worst = std::max(worst, std::abs(both - base) / std::max(1.0, std::abs(base)));
    }
    report(8, worst <= kInvarianceRel,
           fmt("worst relative drift %.2e over 1000 + 1000 instances", worst));
}

// ------------------------------------------------------------- criterion 9

void criterion_determinism()
{
    const auto dir = fs::temp_directory_path() / "colonsplat_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "data").string();
    const std::string common =
        " --iterations 150 --warmup 30 --densify-start 40 --densify-stop 120"
        " --densify-interval 40 --field-levels 1 --field-base-spatial 8"
        " --field-base-temporal 4 --field-features 2 --field-width 8 --field-depth 1"
        " --deterministic --seed 7";

    bool pass = run_cli("gen --frames 12 --width 20 --height 20 --truth-points 100 --out " +
                        data) == 0;
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    pass = pass && run_cli("train --data " + data + " --out " + a + common) == 0;
    pass = pass && run_cli("train --data " + data + " --out " + b + common) == 0;

    bool log_eq = false, ply_eq = false, field_eq = false;
    if (pass) {
        log_eq = read_file(a + "/train_log.csv") == read_file(b + "/train_log.csv");
        ply_eq = read_file(a + "/point_cloud_150.ply") == read_file(b + "/point_cloud_150.ply");
        field_eq = read_file(a + "/deform_150.bin") == read_file(b + "/deform_150.bin");
    }
    report(9, pass && log_eq && ply_eq && field_eq,
           fmt("two seeded runs: log %s, cloud %s, field %s", log_eq ? "equal" : "DIFFER",
               ply_eq ? "equal" : "DIFFER", field_eq ? "equal" : "DIFFER"));
    fs::remove_all(dir);
}

} // namespace

int main(int argc, char** argv)
{
    // Optional argv: criterion numbers to run (criteria 2, 6, 7 share the
    // trained models and run together). No arguments runs the full gate.
    auto wanted = [&](std::initializer_list<int> ids) {
        if (argc < 2) return true;
        for (int a = 1; a < argc; ++a)
            for (int id : ids)
                if (std::atoi(argv[a]) == id) return true;
        return false;
    };
    if (wanted({1})) criterion_gradient_oracle();
    if (wanted({3})) criterion_identity_at_init();
    if (wanted({4})) criterion_metric_oracles();
    if (wanted({8})) criterion_invariances();
    if (wanted({9})) criterion_determinism();
    if (wanted({5})) criterion_static_fit();
    if (wanted({2, 6, 7})) criteria_dynamic_and_ablation();
    std::printf("acceptance: %d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
