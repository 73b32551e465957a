#include "railsynth/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

#include "railsynth/errors.hpp"

namespace railsynth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// A JSON object whose keys are checked against a fixed list up front, so a
// misspelt key is reported before any value is read.
class Section {
public:
    Section(const json& j, std::string path, std::initializer_list<const char*> known) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected a table");
        const std::set<std::string> allowed(known.begin(), known.end());
        for (const auto& [key, _] : j_.items())
            if (!allowed.contains(key)) throw ConfigError("unknown config key '" + join_key(path_, key) + "'");
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& raw(const char* key) const { return j_.at(key); }
    std::string key_path(const char* key) const { return join_key(path_, key); }

    Section sub(const char* key, std::initializer_list<const char*> known) const {
        return Section(j_.at(key), key_path(key), known);
    }

    void get(const char* key, int& out) const {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer()) fail(key, "an integer");
        out = v.get<int>();
    }
    void get(const char* key, std::uint64_t& out) const {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
        out = v.get<std::uint64_t>();
    }
    void get(const char* key, double& out) const {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number()) fail(key, "a number");
        out = v.get<double>();
    }
    void get(const char* key, bool& out) const {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_boolean()) fail(key, "true or false");
        out = v.get<bool>();
    }
    void get(const char* key, std::string& out) const {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_string()) fail(key, "a string");
        out = v.get<std::string>();
    }
    void get_path(const char* key, fs::path& out, const fs::path& base) const {
        std::string s;
        if (!has(key)) return;
        get(key, s);
        out = fs::path(s);
        if (!s.empty() && out.is_relative() && !base.empty()) out = (base / out).lexically_normal();
    }

    [[noreturn]] void fail(const char* key, const char* expected) const {
        throw ConfigError("config key '" + key_path(key) + "' must be " + expected);
    }

private:
    const json& j_;
    std::string path_;
};

Category category_at(const json& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError("config key '" + where + "' must list category names");
    auto c = parse_category(v.get<std::string>());
    if (!c) throw ConfigError("config key '" + where + "': unknown category '" + v.get<std::string>() + "'");
    return *c;
}

void check(const std::vector<std::string>& problems, const char* section) {
    if (problems.empty()) return;
    std::string msg = std::string("invalid ") + section + " config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ConfigError(msg);
}

} // namespace

ModelConfig RootConfig::model_for(bool use_flow) const {
    ModelConfig m = model;
    if (!in_channels_set) m.in_channels = use_flow ? 5 : 3;
    return m;
}

std::vector<std::pair<std::string, std::vector<Category>>> default_ablation_variants() {
    std::vector<std::pair<std::string, std::vector<Category>>> v;
    v.emplace_back("all", std::vector<Category>(std::begin(kAllCategories), std::end(kAllCategories)));
    for (Category drop : kAllCategories) {
        std::vector<Category> keep;
        for (Category c : kAllCategories)
            if (c != drop) keep.push_back(c);
        v.emplace_back("no_" + std::string(to_string(drop)), keep);
    }
    return v;
}

RootConfig parse_config(const json& doc, const fs::path& base_dir) {
    RootConfig cfg;
    const Section root(doc, "", {"paths", "synthesis", "flow", "model", "train", "detect", "ablation"});

    if (root.has("paths")) {
        const auto s = root.sub("paths", {"scenes_dir", "objects_dir", "out_dir"});
        s.get_path("scenes_dir", cfg.paths.scenes_dir, base_dir);
        s.get_path("objects_dir", cfg.paths.objects_dir, base_dir);
        s.get_path("out_dir", cfg.paths.out_dir, base_dir);
    }

    if (root.has("synthesis")) {
        const auto s = root.sub("synthesis", {"counts", "rescale", "shift_range", "global_seed", "placement_region",
                                              "margin_px", "feather", "polygon"});
        auto& sc = cfg.synthesis;
        if (s.has("counts")) {
            const auto c = s.sub("counts", {"person", "animal", "texture"});
            c.get("person", sc.counts.person);
            c.get("animal", sc.counts.animal);
            c.get("texture", sc.counts.texture);
        }
        if (s.has("rescale")) {
            const auto r = s.sub("rescale", {"alpha", "beta"});
            r.get("alpha", sc.rescale.alpha);
            r.get("beta", sc.rescale.beta);
        }
        if (s.has("shift_range")) {
            const json& v = s.raw("shift_range");
            if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
                s.fail("shift_range", "a pair of integers [lo, hi]");
            sc.shift_range = {v[0].get<int>(), v[1].get<int>()};
        }
        s.get("global_seed", sc.global_seed);
        if (s.has("placement_region")) {
            std::string name;
            s.get("placement_region", name);
            auto r = parse_placement_region(name);
            if (!r) s.fail("placement_region", "railway_only or railway_and_margin");
            sc.placement_region = *r;
        }
        s.get("margin_px", sc.margin_px);
        s.get("feather", sc.feather);
        if (s.has("polygon")) {
            const auto p = s.sub("polygon", {"min_radius", "max_radius"});
            p.get("min_radius", sc.polygon.min_radius);
            p.get("max_radius", sc.polygon.max_radius);
        }
        check(validate_synthesis_config(sc), "synthesis");
    }

    if (root.has("flow")) {
        const auto s = root.sub("flow", {"smoothness_weight", "iterations", "pyramid_levels", "plugin", "timeout_s", "flow_dir"});
        s.get("smoothness_weight", cfg.flow.solver.smoothness_weight);
        s.get("iterations", cfg.flow.solver.iterations);
        s.get("pyramid_levels", cfg.flow.solver.pyramid_levels);
        if (s.has("plugin")) {
            std::string cmd;
            s.get("plugin", cmd);
            if (!cmd.empty()) cfg.flow.plugin = cmd;
        }
        s.get("timeout_s", cfg.flow.timeout_s);
        if (cfg.flow.timeout_s <= 0) s.fail("timeout_s", "positive");
        s.get_path("flow_dir", cfg.flow.flow_dir, base_dir);
        check(validate_flow_params(cfg.flow.solver), "flow");
    }

    if (root.has("model")) {
        const auto s = root.sub("model", {"in_channels", "base_width", "depth"});
        cfg.in_channels_set = s.has("in_channels");
        s.get("in_channels", cfg.model.in_channels);
        s.get("base_width", cfg.model.base_width);
        s.get("depth", cfg.model.depth);
        check(validate_model_config(cfg.model), "model");
    }

    if (root.has("train")) {
        const auto s = root.sub("train", {"batch_size", "epochs", "lr", "weight_decay", "seed", "val_fraction", "augment"});
        auto& t = cfg.train;
        s.get("batch_size", t.batch_size);
        s.get("epochs", t.epochs);
        s.get("lr", t.lr);
        s.get("weight_decay", t.weight_decay);
        s.get("seed", t.seed);
        s.get("val_fraction", t.val_fraction);
        if (s.has("augment")) {
            const auto a = s.sub("augment", {"p_flip", "p_dropout", "p_brightness"});
            a.get("p_flip", t.augment.p_flip);
            a.get("p_dropout", t.augment.p_dropout);
            a.get("p_brightness", t.augment.p_brightness);
        }
        check(validate_train_config(t), "train");
    }

    if (root.has("detect")) {
        const auto s = root.sub("detect", {"backend", "min_confidence", "chroma_key", "tolerance", "command", "masks_dir", "timeout_s"});
        auto& d = cfg.detect;
        if (s.has("backend")) {
            std::string name;
            s.get("backend", name);
            if (name == "oracle") d.backend = DetectBackend::oracle;
            else if (name == "precomputed") d.backend = DetectBackend::precomputed;
            else if (name == "plugin") d.backend = DetectBackend::plugin;
            else s.fail("backend", "oracle, precomputed or plugin");
        }
        s.get("min_confidence", d.min_confidence);
        if (d.min_confidence < 0 || d.min_confidence > 1) s.fail("min_confidence", "in [0, 1]");
        if (s.has("chroma_key")) {
            const json& v = s.raw("chroma_key");
            if (!v.is_array() || v.size() != 3) s.fail("chroma_key", "a [b, g, r] triple");
            for (int k = 0; k < 3; ++k) {
                if (!v[k].is_number_integer() || v[k].get<int>() < 0 || v[k].get<int>() > 255)
                    s.fail("chroma_key", "a [b, g, r] triple of 0-255 integers");
                d.chroma_key[k] = static_cast<std::uint8_t>(v[k].get<int>());
            }
        }
        s.get("tolerance", d.tolerance);
        s.get("command", d.command);
        s.get_path("masks_dir", d.masks_dir, base_dir);
        s.get("timeout_s", d.timeout_s);
        if (d.backend == DetectBackend::plugin && d.command.empty())
            throw ConfigError("config key 'detect.command' is required for the plugin backend");
    }

    if (root.has("ablation")) {
        const auto s = root.sub("ablation", {"variants", "eval_manifests", "use_flow"});
        if (s.has("variants")) {
            const json& v = s.raw("variants");
            if (!v.is_object()) s.fail("variants", "a table of name -> category list");
            for (const auto& [name, cats] : v.items()) {
                const std::string where = s.key_path("variants") + "." + name;
                if (!cats.is_array() || cats.empty()) throw ConfigError("config key '" + where + "' must be a non-empty list");
                std::vector<Category> keep;
                for (const auto& c : cats) keep.push_back(category_at(c, where));
                cfg.ablation.variants.emplace_back(name, keep);
            }
        }
        if (s.has("eval_manifests")) {
            const json& v = s.raw("eval_manifests");
            if (!v.is_object()) s.fail("eval_manifests", "a table of band -> manifest path");
            for (const auto& [band, p] : v.items()) {
                if (!p.is_string()) throw ConfigError("config key '" + s.key_path("eval_manifests") + "." + band + "' must be a path");
                fs::path path(p.get<std::string>());
                if (path.is_relative() && !base_dir.empty()) path = (base_dir / path).lexically_normal();
                cfg.ablation.eval_manifests[band] = path;
            }
        }
        s.get("use_flow", cfg.ablation.use_flow);
    }
    return cfg;
}

RootConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(doc, fs::absolute(path).parent_path());
}

} // namespace railsynth
