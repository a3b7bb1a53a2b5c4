// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Single-binary operator surface:
//   colonsplat gen    --spec <toml> --out <dir>
//   colonsplat train  --data <dir> --config <toml> --out <dir> [flags]
//   colonsplat render --checkpoint <dir> --data <dir> --out <dir> [--trajectory ...]
//   colonsplat eval   --checkpoint <dir> --data <dir> --report <csv>
// Exit codes: 0 success, 2 usage/config, 3 I/O, 4 numerical failure.

#include <CLI11.hpp>

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/threading.hpp>
#include <colonsplat/deform/checkpoint.hpp>
#include <colonsplat/deform/field.hpp>
#include <colonsplat/gen/tube.hpp>
#include <colonsplat/io/image.hpp>
#include <colonsplat/io/manifest.hpp>
#include <colonsplat/io/ply.hpp>
#include <colonsplat/metrics/metrics.hpp>
#include <colonsplat/raster/rasterizer.hpp>
#include <colonsplat/scene/init.hpp>
#include <colonsplat/train/trainer.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using Scalar = float;

namespace {

using namespace colonsplat;

int resolve_threads(int threads, bool deterministic)
{
    if (threads >= 1) return threads;
    return deterministic ? 1 : 0; // 0 lets the pool pick the hardware width
}

void ensure_dir(const std::string& dir)
{
    if (fs::is_directory(dir)) return;
    std::error_code ec;
    if (!fs::create_directory(dir, ec) || ec)
        throw IoError("cannot create directory " + dir +
                      (ec ? ": " + ec.message() : std::string()));
}

// Latest (or requested) point_cloud_<iter>.ply / deform_<iter>.bin pair.
std::pair<std::string, std::string> find_checkpoint(const std::string& dir, int iteration)
{
    if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir);
    int best = -1;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        const std::string prefix = "point_cloud_", suffix = ".ply";
        if (name.size() <= prefix.size() + suffix.size()) continue;
        if (name.compare(0, prefix.size(), prefix) != 0) continue;
        if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        const std::string mid = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
        if (mid.empty() || mid.find_first_not_of("0123456789") != std::string::npos) continue;
        const int it = std::stoi(mid);
        if (iteration >= 0 ? it == iteration : it > best) best = it;
        if (iteration >= 0 && it == iteration) break;
    }
    if (best < 0)
        throw IoError("no checkpoint " +
                      (iteration >= 0 ? "at iteration " + std::to_string(iteration) : "found") +
                      " in " + dir);
    const std::string ply = dir + "/point_cloud_" + std::to_string(best) + ".ply";
    const std::string bin = dir + "/deform_" + std::to_string(best) + ".bin";
    if (!fs::exists(bin)) throw IoError("missing field checkpoint " + bin);
    return {ply, bin};
}

// ------------------------------------------------------------------- gen

struct GenArgs {
    TubeSpec spec;
    std::string spec_file;
    std::string out;
    int threads = -1;
    bool deterministic = false;
};

void add_gen(CLI::App& app, GenArgs& a)
{
    auto* cmd = app.add_subcommand("gen", "Generate a synthetic peristaltic-tube dataset");
    cmd->add_option("--spec", a.spec_file, "TOML file with the generator keys below");
    cmd->add_option("--out", a.out, "Output dataset directory")->required();
    cmd->add_option("--length", a.spec.length, "Tube axial length")->capture_default_str();
    cmd->add_option("--radius", a.spec.radius, "Tube base radius")->capture_default_str();
    cmd->add_option("--amplitude", a.spec.amplitude, "Radial wave amplitude fraction, in [0,1)")
        ->capture_default_str();
    cmd->add_option("--wave-number", a.spec.wave_number, "Axial wave number k")
        ->capture_default_str();
    cmd->add_option("--angular-speed", a.spec.angular_speed, "Wave angular speed")
        ->capture_default_str();
    cmd->add_option("--noise-octaves", a.spec.noise_octaves, "Albedo value-noise octaves")
        ->capture_default_str();
    cmd->add_option("--seed", a.spec.seed, "Generator seed")->capture_default_str();
    cmd->add_option("--frames", a.spec.frames, "Frame count (>= 2)")->capture_default_str();
    cmd->add_option("--width", a.spec.width, "Image width")->capture_default_str();
    cmd->add_option("--height", a.spec.height, "Image height")->capture_default_str();
    cmd->add_option("--truth-points", a.spec.truth_points, "Ground-truth cloud size per frame")
        ->capture_default_str();
    cmd->add_option("--threads", a.threads, "Worker threads (0 = auto)");
    cmd->add_flag("--deterministic", a.deterministic, "Fix the worker count to 1 by default");
    cmd->callback([&a] {
        ThreadPool pool(resolve_threads(a.threads, a.deterministic));
        generate_dataset<double>(a.spec, a.out, pool);
    });
}

// ----------------------------------------------------------------- train

struct TrainArgs {
    std::string data, out;
    TrainConfig cfg;
    InitOptions init;
    std::string config_file;
    int threads = -1;
};

void add_train(CLI::App& app, TrainArgs& a)
{
    auto* cmd = app.add_subcommand("train", "Optimize a cloud and deformation field on a dataset");
    cmd->add_option("--config", a.config_file, "TOML file with any of the keys below");
    cmd->add_option("--data", a.data, "Dataset directory (manifest.json + frames)")->required();
    cmd->add_option("--out", a.out, "Checkpoint/log output directory")->required();

    cmd->add_option("--iterations", a.cfg.iterations, "Optimization steps")->capture_default_str();
    cmd->add_option("--warmup", a.cfg.warmup_iterations, "Canonical-only steps before the field trains")
        ->capture_default_str();
    cmd->add_option("--lr-positions", a.cfg.lr_positions, "Position learning rate (exp-decayed)")
        ->capture_default_str();
    cmd->add_option("--lr-positions-final", a.cfg.lr_positions_final,
                    "Position lr decay multiplier reached at the last step")
        ->capture_default_str();
    cmd->add_option("--lr-log-scales", a.cfg.lr_log_scales, "Log-scale learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-rotations", a.cfg.lr_rotations, "Rotation learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-opacity", a.cfg.lr_opacity, "Opacity-logit learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-colors", a.cfg.lr_colors, "Base-color learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-embeddings", a.cfg.lr_embeddings, "Embedding learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-grids", a.cfg.lr_grids, "Feature-grid learning rate")
        ->capture_default_str();
    cmd->add_option("--lr-mlp", a.cfg.lr_mlp, "Deformation MLP learning rate")
        ->capture_default_str();
    cmd->add_option("--adam-beta1", a.cfg.adam.beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--adam-beta2", a.cfg.adam.beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--adam-eps", a.cfg.adam.eps, "Adam epsilon")->capture_default_str();

    cmd->add_option("--densify-start", a.cfg.densify_start, "First step of the densify window")
        ->capture_default_str();
    cmd->add_option("--densify-stop", a.cfg.densify_stop, "Last step of the densify window")
        ->capture_default_str();
    cmd->add_option("--densify-interval", a.cfg.densify_interval, "Steps between densify passes")
        ->capture_default_str();
    cmd->add_option("--densify-grad-threshold", a.cfg.densify.grad_threshold,
                    "Mean NDC positional gradient trigger")
        ->capture_default_str();
    cmd->add_option("--opacity-prune", a.cfg.densify.opacity_prune_threshold,
                    "Prune Gaussians below this opacity")
        ->capture_default_str();
    cmd->add_option("--scale-prune-fraction", a.cfg.densify.scale_prune_fraction,
                    "Prune when a linear scale exceeds this fraction of the extent")
        ->capture_default_str();
    cmd->add_option("--split-scale-fraction", a.cfg.densify.split_scale_fraction,
                    "Split (instead of clone) above this fraction of the extent")
        ->capture_default_str();

    cmd->add_option("--lambda-tv", a.cfg.weights.tv, "Total-variation weight")
        ->capture_default_str();
    cmd->add_option("--lambda-knn", a.cfg.weights.knn, "KNN deformation-smoothness weight")
        ->capture_default_str();
    cmd->add_option("--lambda-depth", a.cfg.weights.depth, "Depth-supervision weight")
        ->capture_default_str();
    cmd->add_option("--lambda-co", a.cfg.weights.co, "Color-offset weight")->capture_default_str();
    cmd->add_option("--lambda-cv", a.cfg.weights.cv, "Color-variance weight")
        ->capture_default_str();
    cmd->add_option("--knn-k", a.cfg.knn_k, "Neighbors per Gaussian in the KNN loss")
        ->capture_default_str();

    cmd->add_option("--field-levels", a.cfg.field.levels, "Feature-grid resolution levels")
        ->capture_default_str();
    cmd->add_option("--field-base-spatial", a.cfg.field.base_spatial,
                    "Spatial grid resolution at level 0")
        ->capture_default_str();
    cmd->add_option("--field-base-temporal", a.cfg.field.base_temporal,
                    "Temporal grid resolution at level 0")
        ->capture_default_str();
    cmd->add_option("--field-features", a.cfg.field.features, "Features per grid plane")
        ->capture_default_str();
    cmd->add_option("--field-width", a.cfg.field.width, "Deformation MLP width")
        ->capture_default_str();
    cmd->add_option("--field-depth", a.cfg.field.depth, "Deformation MLP depth")
        ->capture_default_str();
    cmd->add_option("--tau-s", a.cfg.field.tau_s, "Log-scale delta clip bound")
        ->capture_default_str();
    cmd->add_option("--tau-r", a.cfg.field.tau_r, "Rotation delta clip bound")
        ->capture_default_str();
    cmd->add_option("--scale-cap", a.cfg.field.scale_cap_fraction,
                    "Linear-scale cap as a fraction of the scene extent")
        ->capture_default_str();

    cmd->add_option("--init-stride", a.init.stride, "Pixel stride of the depth back-projection init")
        ->capture_default_str();
    cmd->add_option("--init-k", a.init.k_init, "Initial scale factor on the mean 3-NN distance")
        ->capture_default_str();
    cmd->add_option("--init-opacity", a.init.opacity_init, "Initial opacity")->capture_default_str();
    cmd->add_option("--merge-radius", a.init.merge_radius,
                    "Init merge radius (<0 auto, 0 disables merging)")
        ->capture_default_str();
    cmd->add_option("--embedding-dim", a.init.embedding_dim, "Per-Gaussian embedding size")
        ->capture_default_str();

    cmd->add_option("--tile-size", a.cfg.render.tile_size, "Rasterizer tile size")
        ->capture_default_str();
    cmd->add_flag("--depth-normalize-by-alpha", a.cfg.render.depth_normalize_by_alpha,
                  "Divide rendered depth by accumulated alpha");
    cmd->add_option("--checkpoint-interval", a.cfg.checkpoint_interval,
                    "Intermediate checkpoint period (0 = final only)")
        ->capture_default_str();

    cmd->add_flag("--no-constraints", a.cfg.no_constraints,
                  "Ablation: unconstrained deformation (no clips, no cap, trainable opacity delta)");
    cmd->add_flag("--no-knn", a.cfg.no_knn, "Ablation: disable the KNN smoothness loss");
    cmd->add_flag("--no-delta-c", a.cfg.no_delta_c, "Ablation: bypass the color head");
    cmd->add_flag("--freeze-deform", a.cfg.freeze_deform,
                  "Keep the deformation at identity for the whole run (static baseline)");
    cmd->add_flag("--deterministic", a.cfg.deterministic,
                  "Round-robin frame order and fixed worker count");
    cmd->add_option("--seed", a.cfg.seed, "Training seed")->capture_default_str();
    cmd->add_option("--threads", a.threads, "Worker threads (0 = auto)");

    cmd->callback([&a] {
        a.cfg.threads = resolve_threads(a.threads, a.cfg.deterministic);
        ensure_dir(a.out);
        a.cfg.checkpoint_dir = a.out;
        const auto dataset = load_dataset<Scalar>(a.data);
        auto cloud = init_from_depth(dataset.frames, a.init);
        train(dataset, std::move(cloud), a.cfg);
    });
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string checkpoint, data, out;
    std::vector<std::string> trajectory{"test"};
    int iteration = -1;
    int threads = -1;
    bool deterministic = false;
    RenderOptions ropts;
};

void add_render(CLI::App& app, RenderArgs& a)
{
    auto* cmd = app.add_subcommand("render", "Render RGB + depth for a camera set");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
    cmd->add_option("--data", a.data, "Dataset directory supplying the cameras")->required();
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--trajectory", a.trajectory,
                    "Camera set: train | test | external <manifest.json>")
        ->expected(1, 2);
    cmd->add_option("--iteration", a.iteration, "Checkpoint iteration (-1 = latest)");
    cmd->add_option("--tile-size", a.ropts.tile_size, "Rasterizer tile size")
        ->capture_default_str();
    cmd->add_flag("--depth-normalize-by-alpha", a.ropts.depth_normalize_by_alpha,
                  "Divide rendered depth by accumulated alpha");
    cmd->add_option("--threads", a.threads, "Worker threads (0 = auto)");
    cmd->add_flag("--deterministic", a.deterministic, "Fix the worker count to 1 by default");

    cmd->callback([&a] {
        const auto& mode = a.trajectory.at(0);
        if (mode != "train" && mode != "test" && mode != "external")
            throw UsageError("--trajectory must be train, test, or external <file>");
        if (mode == "external" && a.trajectory.size() != 2)
            throw UsageError("--trajectory external needs a manifest file path");
        if (mode != "external" && a.trajectory.size() != 1)
            throw UsageError("--trajectory " + mode + " takes no file argument");

        ThreadPool pool(resolve_threads(a.threads, a.deterministic));
        const auto [ply, bin] = find_checkpoint(a.checkpoint, a.iteration);
        const auto cloud = load_ply<Scalar>(ply);
        const auto field = load_field<Scalar>(bin);
        ensure_dir(a.out);

        std::vector<std::pair<int, Camera<Scalar>>> cams;
        if (mode == "external") {
            const auto m = load_manifest_file(a.trajectory.at(1));
            for (size_t i = 0; i < m.frames.size(); ++i)
                cams.emplace_back(static_cast<int>(i), camera_from<Scalar>(m.frames[i]));
        } else {
            const auto m = load_manifest(a.data);
            for (size_t i = 0; i < m.frames.size(); ++i) {
                const bool is_test = m.frames[i].split == "test";
                if ((mode == "test") == is_test)
                    cams.emplace_back(static_cast<int>(i), camera_from<Scalar>(m.frames[i]));
            }
        }

        char name[64];
        for (const auto& [idx, cam] : cams) {
            const auto deformed = deform(field, cloud, cam.t, false, pool);
            const auto splats = project(deformed.cloud, cam);
            const auto out = render(splats, cam, a.ropts, pool);
            std::snprintf(name, sizeof(name), "render_%04d.png", idx);
            write_png_rgb((fs::path(a.out) / name).string(), out.rgb);
            std::snprintf(name, sizeof(name), "render_depth_%04d.pfm", idx);
            write_pfm((fs::path(a.out) / name).string(), out.depth);
        }
    });
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    std::string checkpoint, data, report;
    int iteration = -1;
    int threads = -1;
    bool deterministic = false;
    double opacity_min = 0.05;
    RenderOptions ropts;
};

void add_eval(CLI::App& app, EvalArgs& a)
{
    auto* cmd = app.add_subcommand("eval", "Image + geometry metrics on the test split");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--report", a.report, "Report CSV path (JSON twin written alongside)")
        ->required();
    cmd->add_option("--iteration", a.iteration, "Checkpoint iteration (-1 = latest)");
    cmd->add_option("--opacity-min", a.opacity_min, "Opacity filter for the Gaussian cloud")
        ->capture_default_str();
    cmd->add_option("--tile-size", a.ropts.tile_size, "Rasterizer tile size")
        ->capture_default_str();
    cmd->add_flag("--depth-normalize-by-alpha", a.ropts.depth_normalize_by_alpha,
                  "Divide rendered depth by accumulated alpha");
    cmd->add_option("--threads", a.threads, "Worker threads (0 = auto)");
    cmd->add_flag("--deterministic", a.deterministic, "Fix the worker count to 1 by default");

    cmd->callback([&a] {
        ThreadPool pool(resolve_threads(a.threads, a.deterministic));
        const auto [ply, bin] = find_checkpoint(a.checkpoint, a.iteration);
        const auto cloud = load_ply<Scalar>(ply);
        const auto field = load_field<Scalar>(bin);
        const auto dataset = load_dataset<Scalar>(a.data);

        const double nan = std::numeric_limits<double>::quiet_NaN();
        std::vector<EvalRow> rows;
        std::vector<Image<Scalar>> ren_depths, sup_depths;
        std::vector<std::vector<std::uint8_t>> masks;
        for (int fi : dataset.test_indices()) {
            const auto& frame = dataset.frames[static_cast<size_t>(fi)];
            const auto deformed = deform(field, cloud, frame.camera.t, false, pool);
            const auto splats = project(deformed.cloud, frame.camera);
            const auto out = render(splats, frame.camera, a.ropts, pool);

            EvalRow row;
            row.frame = fi;
            row.t = static_cast<double>(frame.camera.t);
            row.psnr = static_cast<double>(psnr(out.rgb, frame.rgb));
            row.ssim = static_cast<double>(ssim(out.rgb, frame.rgb));
            row.cd = nan;
            row.hd95 = nan;

            char name[64];
            std::snprintf(name, sizeof(name), "truth_%04d.ply", fi);
            const auto truth_path = fs::path(a.data) / name;
            if (fs::exists(truth_path)) {
                const auto truth = load_point_ply<Scalar>(truth_path.string());
                const auto pts = cloud_from_gaussians(cloud, field, frame.camera.t,
                                                      static_cast<Scalar>(a.opacity_min));
                row.cd = static_cast<double>(chamfer(pts, truth));
                row.hd95 = static_cast<double>(hd95(pts, truth));
            }
            rows.push_back(row);

            auto mask = depth_valid_mask(frame.depth_sup);
            size_t valid = 0;
            for (auto m : mask) valid += m;
            if (valid > 0) {
                ren_depths.push_back(out.depth);
                sup_depths.push_back(frame.depth_sup);
                masks.push_back(std::move(mask));
            }
        }

        EvalSummary summary;
        summary.psnr = summary.ssim = 0;
        summary.cd = summary.hd95 = nan;
        double cd_acc = 0, hd_acc = 0;
        int cd_count = 0;
        for (const auto& r : rows) {
            summary.psnr += r.psnr;
            summary.ssim += r.ssim;
            if (!std::isnan(r.cd)) {
                cd_acc += r.cd;
                hd_acc += r.hd95;
                ++cd_count;
            }
        }
        if (!rows.empty()) {
            summary.psnr /= static_cast<double>(rows.size());
            summary.ssim /= static_cast<double>(rows.size());
        }
        if (cd_count > 0) {
            summary.cd = cd_acc / cd_count;
            summary.hd95 = hd_acc / cd_count;
        }
        summary.mse_d = ren_depths.empty()
                            ? nan
                            : static_cast<double>(depth_mse(ren_depths, sup_depths, masks));

        std::string json_path = a.report;
        const auto dot = json_path.find_last_of('.');
        if (dot != std::string::npos && json_path.find('/', dot) == std::string::npos)
            json_path = json_path.substr(0, dot);
        json_path += ".json";
        write_eval_report(a.report, json_path, rows, summary);
    });
}

} // namespace

// CLI11 only reads config files attached to the root app, so the per-
// subcommand TOML files are applied by hand: every top-level key becomes a
// pre-parse result of the matching option. Command-line values are parsed
// afterwards and win under the take-last policy installed in main().
void apply_config_file(CLI::App* cmd, const std::string& config_flag, const std::string& path)
{
    if (!std::filesystem::exists(path))
        throw colonsplat::IoError("config file not found: " + path);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::Error& e) {
        throw colonsplat::UsageError("cannot parse " + path + ": " + e.what());
    }
    for (const auto& item : items) {
        if (!item.parents.empty())
            throw colonsplat::UsageError("unknown config section in " + path + ": " +
                                         item.fullname());
        const std::string flag = "--" + item.name;
        if (flag == config_flag)
            throw colonsplat::UsageError("config file cannot set " + flag);
        CLI::Option* op = cmd->get_option_no_throw(flag);
        if (op == nullptr)
            throw colonsplat::UsageError("unknown config key in " + path + ": " + item.name);
        for (const auto& input : item.inputs) op->add_result(input);
    }
}

// Value of "<flag> path" or "<flag>=path" after the subcommand token; empty
// when absent or when a help request suppresses config handling.
std::string prescan_config_path(int argc, char** argv, const std::string& sub,
                                const std::string& flag)
{
    if (argc < 2 || sub != argv[1]) return "";
    std::string path;
    for (int i = 2; i < argc; ++i) {
        const std::string tok = argv[i];
        if (tok == "--help" || tok == "-h") return "";
        if (tok == flag && i + 1 < argc)
            path = argv[i + 1];
        else if (tok.rfind(flag + "=", 0) == 0)
            path = tok.substr(flag.size() + 1);
    }
    return path;
}

int main(int argc, char** argv)
{
    CLI::App app{"Dynamic Gaussian-splatting pipeline for deformable tubular scenes"};
    app.require_subcommand(1);

    GenArgs gen_args;
    TrainArgs train_args;
    RenderArgs render_args;
    EvalArgs eval_args;
    add_gen(app, gen_args);
    add_train(app, train_args);
    add_render(app, render_args);
    add_eval(app, eval_args);

    for (const char* name : {"gen", "train"})
        for (CLI::Option* opt : app.get_subcommand(name)->get_options())
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    try {
        if (const auto p = prescan_config_path(argc, argv, "gen", "--spec"); !p.empty())
            apply_config_file(app.get_subcommand("gen"), "--spec", p);
        if (const auto p = prescan_config_path(argc, argv, "train", "--config"); !p.empty())
            apply_config_file(app.get_subcommand("train"), "--config", p);
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(colonsplat::ExitCode::Usage);
    } catch (const colonsplat::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.exit_code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return static_cast<int>(colonsplat::ExitCode::Io);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(colonsplat::ExitCode::Io);
    }
    return 0;
}
