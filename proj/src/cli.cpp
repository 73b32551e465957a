#include "railsynth/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "railsynth/config.hpp"
#include "railsynth/errors.hpp"
#include "railsynth/evaluation.hpp"
#include "railsynth/extraction.hpp"
#include "railsynth/image_io.hpp"
#include "railsynth/manifest.hpp"
#include "railsynth/optical_flow.hpp"
#include "railsynth/plugin.hpp"
#include "railsynth/synthesis.hpp"
#include "railsynth/training.hpp"

namespace railsynth {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto& p = e.path();
        if (!e.is_regular_file() || p.extension() != ".png") continue;
        if (p.stem().string().ends_with("_mask")) continue;
        out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::unique_ptr<ExtractorBackend> make_backend(const RootConfig& cfg, Category c) {
    const auto& d = cfg.detect;
    const std::string name(to_string(c));
    switch (d.backend) {
    case DetectBackend::oracle: return std::make_unique<ChromaKeyBackend>(name, d.chroma_key, d.tolerance);
    case DetectBackend::precomputed: return std::make_unique<PrecomputedMaskBackend>(name, d.masks_dir);
    case DetectBackend::plugin: {
        const auto timeout = std::chrono::milliseconds(static_cast<long long>(d.timeout_s * 1000));
        return std::make_unique<SubprocessBackend>(d.command, std::vector<std::string>{name},
                                                   cfg.paths.out_dir / ".scratch" / name, timeout);
    }
    }
    throw ConfigError("unknown detect backend");
}

CutoutPools load_pools(const RootConfig& cfg, std::ostream& err) {
    if (cfg.paths.objects_dir.empty()) throw ConfigError("config key 'paths.objects_dir' is required");
    CutoutPools pools;
    for (Category c : {Category::person, Category::animal}) {
        if (cfg.synthesis.counts.of(c) == 0) continue;
        auto backend = make_backend(cfg, c);
        auto& pool = c == Category::person ? pools.person : pools.animal;
        for (const auto& file : png_files(cfg.paths.objects_dir / std::string(to_string(c)))) {
            try {
                auto cutouts = extract_all(SourceImage(read_image(file), file), c, *backend, cfg.detect.min_confidence,
                                           file.stem().string());
                for (auto& k : cutouts) pool.push_back(std::move(k));
            } catch (const ExtractionEmpty& e) {
                err << "warning: " << file << ": " << e.what() << "\n";
            }
        }
    }
    if (cfg.synthesis.counts.texture > 0)
        for (const auto& file : png_files(cfg.paths.objects_dir / "texture")) pools.textures.push_back(read_image(file));
    return pools;
}

std::vector<BaseScene> require_scenes(const RootConfig& cfg) {
    if (cfg.paths.scenes_dir.empty()) throw ConfigError("config key 'paths.scenes_dir' is required");
    auto scenes = load_scenes(cfg.paths.scenes_dir);
    if (scenes.empty()) throw ValidationError("no base scenes under " + cfg.paths.scenes_dir.string());
    for (const auto& s : scenes) {
        const auto problems = validate_scene(s);
        if (!problems.empty()) throw ValidationError("scene " + s.scene_id + ": " + problems.front());
    }
    return scenes;
}

fs::path output_dir(const std::string& flag, const RootConfig& cfg) {
    if (!flag.empty()) return flag;
    if (!cfg.paths.out_dir.empty()) return cfg.paths.out_dir;
    throw ConfigError("no output directory: pass --out or set paths.out_dir");
}

template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    auto worker = [&](unsigned w) {
        for (std::size_t i; (i = next++) < n;) {
            try {
                fn(w, i);
            } catch (...) {
                std::lock_guard lock(m);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const unsigned k = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
        for (unsigned w = 1; w < k; ++w) pool.emplace_back(worker, w);
        worker(0);
    }
    if (failure) std::rethrow_exception(failure);
}

int cmd_synth(const std::string& config, const std::string& out_flag, unsigned jobs, std::ostream& out,
              std::ostream& err) {
    const RootConfig cfg = load_config(config);
    const auto scenes = require_scenes(cfg);
    const CutoutPools pools = load_pools(cfg, err);
    const fs::path manifest = synthesize_dataset(scenes, pools, cfg.synthesis, output_dir(out_flag, cfg), jobs);
    out << manifest.string() << "\n";
    return kExitOk;
}

int cmd_flow(const std::string& pairs, const std::string& out_dir, const std::string& plugin_flag,
             const std::string& config, unsigned jobs, std::ostream& out) {
    RootConfig cfg;
    if (!config.empty()) cfg = load_config(config);
    std::optional<std::string> plugin = cfg.flow.plugin;
    if (!plugin_flag.empty()) plugin = plugin_flag;
    const auto records = load_manifest(pairs);
    const fs::path manifest_dir = fs::path(pairs).parent_path();
    const fs::path dst = out_dir;
    fs::create_directories(dst);

    std::vector<std::unique_ptr<PluginProcess>> plugins(std::max(1u, jobs));
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(cfg.flow.timeout_s * 1000));
    parallel_for(records.size(), jobs, [&](unsigned w, std::size_t i) {
        const LoadedSample s = load_sample(manifest_dir, records[i]);
        FlowField f;
        if (plugin) {
            if (!plugins[w]) plugins[w] = std::make_unique<PluginProcess>(*plugin, timeout);
            f = external_flow(s.frame_t, s.frame_t1, *plugins[w], dst / ".scratch" / std::to_string(w));
        } else {
            f = estimate_flow(s.frame_t, s.frame_t1, cfg.flow.solver);
        }
        write_flow(dst / flow_file_name(records[i]), f);
    });
    if (plugin) fs::remove_all(dst / ".scratch");
    out << records.size() << " flow fields written to " << dst.string() << "\n";
    return kExitOk;
}

int cmd_train(const std::string& manifest, const std::string& config, bool use_flow, const std::string& out_dir,
              std::ostream& out, std::ostream& err) {
    const RootConfig cfg = load_config(config);
    FlowDirectory flows(cfg.flow.flow_dir);
    TrainOptions opts;
    opts.flow = use_flow ? &flows : nullptr;
    opts.out_dir = output_dir(out_dir, cfg);
    opts.on_epoch = [&](const EpochRecord& r) {
        out << nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_miou", r.val_miou}}.dump() << "\n";
        out.flush();
    };
    const TrainResult result = train(manifest, cfg.model_for(use_flow), cfg.train, use_flow, opts);
    err << "best epoch " << result.best_epoch << ", checkpoint " << result.checkpoint.string() << "\n";
    return kExitOk;
}

std::map<std::string, fs::path> parse_bands(const std::string& spec) {
    std::map<std::string, fs::path> bands;
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
            throw ValidationError("--bands entries must look like name=manifest, got '" + item + "'");
        const std::string name = item.substr(0, eq);
        if (bands.contains(name)) throw ValidationError("band '" + name + "' given twice");
        bands[name] = item.substr(eq + 1);
    }
    if (bands.empty()) throw ValidationError("--bands is empty");
    return bands;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cmd_eval(const std::string& checkpoint, const std::string& bands_spec, bool use_flow, const std::string& plot,
             const std::string& config, const std::string& report_path, std::ostream& out) {
    RootConfig cfg;
    if (!config.empty()) cfg = load_config(config);
    const auto bands = parse_bands(bands_spec);
    UNet model = UNet::load(checkpoint);
    FlowDirectory flows(cfg.flow.flow_dir);

    // Fingerprint covers everything the numbers depend on.
    std::string key = read_bytes(checkpoint) + (use_flow ? "|flow" : "|rgb");
    for (const auto& [name, m] : bands) key += "|" + name + "=" + (fs::exists(m) ? read_bytes(m) : std::string());
    const EvalReport report = evaluate_bands(model, bands, use_flow, &flows, fingerprint(key));

    if (!plot.empty())
        for (const auto& [name, m] : bands)
            if (fs::exists(m)) write_overlays(model, m, use_flow, &flows, fs::path(plot) / name);
    if (!report_path.empty()) write_report(report, report_path);
    out << report.to_json().dump(2) << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config, const std::string& out_flag, unsigned jobs, std::ostream& out,
               std::ostream& err) {
    const RootConfig cfg = load_config(config);
    if (cfg.ablation.eval_manifests.empty()) throw ConfigError("config key 'ablation.eval_manifests' is required");
    const fs::path root = output_dir(out_flag, cfg);
    const auto scenes = require_scenes(cfg);
    const CutoutPools pools = load_pools(cfg, err);
    const auto variants = cfg.ablation.variants.empty() ? default_ablation_variants() : cfg.ablation.variants;

    std::vector<std::pair<std::string, fs::path>> datasets;
    for (const auto& [name, keep] : variants) {
        SynthesisConfig sc = cfg.synthesis;
        for (Category c : kAllCategories) {
            if (std::find(keep.begin(), keep.end(), c) != keep.end()) continue;
            (c == Category::person ? sc.counts.person : c == Category::animal ? sc.counts.animal : sc.counts.texture) = 0;
        }
        err << "synthesizing variant '" << name << "' (" << sc.counts.total() << " samples)\n";
        datasets.emplace_back(name, synthesize_dataset(scenes, pools, sc, root / "variants" / name, jobs));
    }

    std::vector<fs::path> eval;
    for (const auto& [band, m] : cfg.ablation.eval_manifests) eval.push_back(m);
    SolverFlowSource flows(cfg.flow.solver);
    const bool use_flow = cfg.ablation.use_flow;
    const AblationTable table = run_ablation(datasets, cfg.model_for(use_flow), cfg.train, eval, use_flow,
                                             use_flow ? &flows : nullptr, root / "runs");
    const std::string text = table.to_json().dump(2) + "\n";
    std::ofstream(root / "ablation.json", std::ios::binary) << text;
    out << text;
    return kExitOk;
}

int cmd_validate(const std::string& scenes_dir, const std::string& manifest, std::ostream& out) {
    std::vector<std::string> problems;
    if (!scenes_dir.empty()) {
        if (!fs::is_directory(scenes_dir)) throw ValidationError("scenes directory " + scenes_dir + " not found");
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(scenes_dir))
            if (e.is_directory()) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        if (dirs.empty()) problems.push_back(scenes_dir + ": no scenes");
        for (const auto& d : dirs) {
            try {
                for (const auto& p : validate_scene(load_scene(d))) problems.push_back(d.filename().string() + ": " + p);
            } catch (const Error& e) {
                problems.push_back(d.filename().string() + ": " + e.what());
            }
        }
        out << dirs.size() << " scenes checked\n";
    }
    if (!manifest.empty()) {
        const auto records = load_manifest(manifest);
        const fs::path dir = fs::path(manifest).parent_path();
        for (const auto& r : records) {
            try {
                const LoadedSample s = load_sample(dir, r);
                if (s.frame_t.size() != s.frame_t1.size() || s.frame_t.size() != s.mask_t.size() ||
                    s.frame_t.size() != s.mask_t1.size())
                    problems.push_back(r.scene_id + " " + r.frame_t + ": raster dimensions differ");
            } catch (const Error& e) {
                problems.push_back(r.scene_id + " " + r.frame_t + ": " + e.what());
            }
        }
        out << records.size() << " samples checked\n";
    }
    for (const auto& p : problems) out << "violation: " << p << "\n";
    return problems.empty() ? kExitOk : kExitUserError;
}

} // namespace

unsigned resolve_jobs(int flag) {
    if (const char* env = std::getenv("RAILSYNTH_JOBS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError(std::string("RAILSYNTH_JOBS must be a positive integer, got '") + env + "'");
        return static_cast<unsigned>(v);
    }
    if (flag > 0) return static_cast<unsigned>(flag);
    return std::max(1u, std::thread::hardware_concurrency());
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic railway-obstacle data, optical flow priors and railway segmentation", "railsynth"};
    app.require_subcommand(1);
    int jobs_flag = 0;
    app.add_option("--jobs", jobs_flag, "worker threads (RAILSYNTH_JOBS overrides)");

    std::string config, out_dir, manifest, plugin, checkpoint, bands, plot, scenes, report;
    bool use_flow = false;

    auto* synth = app.add_subcommand("synth", "composite samples and write a manifest");
    synth->add_option("--config", config)->required();
    synth->add_option("--out", out_dir);

    auto* flow = app.add_subcommand("flow", "estimate optical flow for every pair in a manifest");
    flow->add_option("--pairs", manifest)->required();
    flow->add_option("--out", out_dir)->required();
    flow->add_option("--plugin", plugin, "external flow command");
    flow->add_option("--config", config);

    auto* tr = app.add_subcommand("train", "train the segmentation model");
    tr->add_option("--manifest", manifest)->required();
    tr->add_option("--config", config)->required();
    tr->add_flag("--use-flow", use_flow);
    tr->add_option("--out", out_dir);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over distance bands");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--bands", bands, "near=<manifest>,mid=<manifest>,far=<manifest>")->required();
    ev->add_flag("--use-flow", use_flow);
    ev->add_option("--plot", plot, "directory for overlay images");
    ev->add_option("--config", config);
    ev->add_option("--out", report, "also write the report to this file");

    auto* ab = app.add_subcommand("ablate", "train and evaluate one model per dataset variant");
    ab->add_option("--config", config)->required();
    ab->add_option("--out", out_dir);

    auto* va = app.add_subcommand("validate", "check scenes and manifests");
    va->add_option("--scenes", scenes);
    va->add_option("--manifest", manifest);

    for (auto* sub : app.get_subcommands({})) sub->add_option("--jobs", jobs_flag, "worker threads");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::string what = e.what();
        // Name the first word that is neither an option nor a known subcommand.
        for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i].starts_with("-")) {
                if (args[i] == "--jobs") ++i;
                continue;
            }
            if (!app.get_subcommand_no_throw(args[i])) what = "unknown subcommand '" + args[i] + "'";
            break;
        }
        err << "railsynth: " << what << "\n\n" << app.help();
        return kExitUserError;
    }

    try {
        const unsigned jobs = resolve_jobs(jobs_flag);
        if (synth->parsed()) return cmd_synth(config, out_dir, jobs, out, err);
        if (flow->parsed()) return cmd_flow(manifest, out_dir, plugin, config, jobs, out);
        if (tr->parsed()) return cmd_train(manifest, config, use_flow, out_dir, out, err);
        if (ev->parsed()) return cmd_eval(checkpoint, bands, use_flow, plot, config, report, out);
        if (ab->parsed()) return cmd_ablate(config, out_dir, jobs, out, err);
        if (va->parsed()) {
            if (scenes.empty() && manifest.empty()) throw ValidationError("validate needs --scenes and/or --manifest");
            return cmd_validate(scenes, manifest, out);
        }
    } catch (const Error& e) {
        err << "railsynth: " << e.what() << "\n";
        return e.is_user_error() ? kExitUserError : kExitRuntimeError;
    } catch (const std::exception& e) {
        err << "railsynth: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    err << app.help();
    return kExitUserError;
}

int dispatch(const std::vector<std::string>& args) { return dispatch(args, std::cout, std::cerr); }

} // namespace railsynth
