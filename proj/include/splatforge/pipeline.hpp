#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/diffusion.hpp"
#include "splatforge/gaussians.hpp"
#include "splatforge/image_io.hpp"
#include "splatforge/metrics.hpp"
#include "splatforge/nets.hpp"
#include "splatforge/ply_io.hpp"
#include "splatforge/renderer.hpp"
#include "splatforge/synthetic.hpp"
#include "splatforge/tensor.hpp"
#include "splatforge/training.hpp"

namespace splatforge {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ config
//
// Flat INI-style text: [section] headers, `key = value` (or `key value`)
// lines, '#'/';' comments. The config hash is FNV-1a over the canonicalized
// (sorted) section.key=value lines, so formatting and comments never change
// it but any field change does.

struct Config {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections.find(section);
        return s != sections.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        auto s = sections.find(section);
        if (s == sections.end()) return fallback;
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    std::string require_string(const std::string& section, const std::string& key) const {
        if (!has(section, key)) {
            throw ConfigError("config: missing required key [" + section + "] " + key);
        }
        return sections.at(section).at(key);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& v = sections.at(section).at(key);
        try {
            size_t used = 0;
            double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a number");
        }
    }

    int get_int(const std::string& section, const std::string& key, int fallback) const {
        const double d = get_double(section, key, static_cast<double>(fallback));
        const int i = static_cast<int>(d);
        if (static_cast<double>(i) != d) {
            throw ConfigError("config: [" + section + "] " + key + " must be an integer");
        }
        return i;
    }

    uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& v = sections.at(section).at(key);
        try {
            size_t used = 0;
            unsigned long long u = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return static_cast<uint64_t>(u);
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a u64");
        }
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        std::string v = sections.at(section).at(key);
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a boolean");
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        sections[section][key] = value;
    }

    // sorted section.key=value lines; the hashing and dump basis
    std::string canonical() const {
        std::string out;
        for (const auto& [sname, keys] : sections) {
            for (const auto& [key, value] : keys) {
                out += sname + "." + key + "=" + value + "\n";
            }
        }
        return out;
    }

    uint64_t hash() const { return fnv1a64(canonical()); }
};

inline Config parse_config(std::istream& in, const std::string& name = "<stream>") {
    Config cfg;
    std::string line, section = "global";
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto pos = line.find_first_of("#;"); pos != std::string::npos) line.erase(pos);
        auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r\n");
        std::string trimmed = line.substr(first, last - first + 1);
        if (trimmed.front() == '[') {
            if (trimmed.back() != ']' || trimmed.size() < 3) {
                throw ParseError(name + " line " + std::to_string(lineno) + ": malformed section header");
            }
            section = trimmed.substr(1, trimmed.size() - 2);
            continue;
        }
        std::string key, value;
        if (auto eq = trimmed.find('='); eq != std::string::npos) {
            key = trimmed.substr(0, eq);
            value = trimmed.substr(eq + 1);
        } else if (auto sp = trimmed.find_first_of(" \t"); sp != std::string::npos) {
            key = trimmed.substr(0, sp);
            value = trimmed.substr(sp + 1);
        } else {
            throw ParseError(name + " line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                             trimmed + "'");
        }
        auto strip = [](std::string& s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
        };
        strip(key);
        strip(value);
        if (key.empty() || value.empty()) {
            throw ParseError(name + " line " + std::to_string(lineno) + ": empty key or value");
        }
        cfg.sections[section][key] = value;
    }
    return cfg;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in, path);
}

// ---------------------------------------------------------------- manifest

class StageTimer {
public:
    void start(const std::string& stage) {
        current_ = stage;
        t0_ = std::chrono::steady_clock::now();
    }
    void stop() {
        const auto t1 = std::chrono::steady_clock::now();
        stages_.emplace_back(current_, std::chrono::duration<double, std::milli>(t1 - t0_).count());
    }
    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [name, ms] : stages_) j[name] = ms;
        return j;
    }

private:
    std::string current_;
    std::chrono::steady_clock::time_point t0_;
    std::vector<std::pair<std::string, double>> stages_;
};

inline uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("hash_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    return h;
}

// Manifest: config hash + seed + per-stage timings + per-output-file content
// hashes. Timings vary run to run; everything else is deterministic.
inline void write_manifest(const std::string& out_dir, const std::string& command, const Config& cfg,
                           uint64_t seed, const StageTimer& timer,
                           const std::vector<std::string>& output_files,
                           nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["tool_version"] = kVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config_hash"] = hex64(cfg.hash());
    j["stage_ms"] = timer.to_json();
    j["outputs"] = nlohmann::json::array();
    for (const auto& f : output_files) {
        const fs::path p = fs::path(out_dir) / f;
        j["outputs"].push_back({{"file", f},
                                {"bytes", static_cast<uint64_t>(fs::file_size(p))},
                                {"fnv1a64", hex64(hash_file(p.string()))}});
    }
    for (auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw Error("write_manifest: cannot write manifest in " + out_dir);
    out << j.dump(2) << "\n";
}

// ------------------------------------------------------------ shared pieces

struct SceneBounds {
    double near = kSceneNear;
    double far = kSceneFar;
};

inline SceneBounds scene_bounds_from(const Config& cfg) {
    SceneBounds b;
    b.near = cfg.get_double("scene", "near", b.near);
    b.far = cfg.get_double("scene", "far", b.far);
    if (!(b.near > 0) || !(b.far > b.near)) throw ConfigError("config: need 0 < scene.near < scene.far");
    return b;
}

inline RenderConfig render_config_from(const Config& cfg) {
    RenderConfig r;
    r.tile_size = cfg.get_int("render", "tile_size", r.tile_size);
    r.near = cfg.get_double("render", "near", 0.1);
    r.background[0] = cfg.get_double("render", "background_r", 0.0);
    r.background[1] = cfg.get_double("render", "background_g", 0.0);
    r.background[2] = cfg.get_double("render", "background_b", 0.0);
    r.validate();
    return r;
}

inline std::string view_name(const char* stem, size_t index, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, index, ext);
    return std::string(buf);
}

// Toy-scale "text" conditioning: a fixed prompt vocabulary mapped to one-hot
// labels. Keeps the CLI shape (--prompt) of a text-conditioned system.
inline const std::vector<std::string>& prompt_vocabulary() {
    static const std::vector<std::string> v = {
        "a cluster of glossy spheres",
        "a scattered field of pebbles",
        "an arch of soft blobs",
        "a spiral of beads",
    };
    return v;
}

inline int prompt_to_label(const std::string& prompt) {
    const auto& vocab = prompt_vocabulary();
    for (size_t i = 0; i < vocab.size(); ++i) {
        if (vocab[i] == prompt) return static_cast<int>(i);
    }
    std::string msg = "unknown prompt '" + prompt + "'; known prompts:";
    for (const auto& p : vocab) msg += "\n  " + p;
    throw ValidationError(msg);
}

// Label-conditioned toy mixture over the full latent space: one component per
// label, each a deterministic pattern; the class posterior gives guidance
// something real to steer toward.
inline MixtureSpec toy_latent_mixture(int n_labels, int views, int h, int w, int channels) {
    if (n_labels < 1) throw ValidationError("toy_latent_mixture: need at least one label");
    const Eigen::Index dim = static_cast<Eigen::Index>(views) * h * w * channels;
    MixtureSpec mix;
    for (int k = 0; k < n_labels; ++k) {
        Rng rng(0xC0DE0000ull + static_cast<uint64_t>(k));
        MixtureComponent comp;
        comp.weight = 1.0 / n_labels;
        comp.mean.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) comp.mean[i] = 0.5 * rng.normal();
        comp.stddev = 0.3;
        mix.components.push_back(std::move(comp));
    }
    mix.validate();
    return mix;
}

inline ToyDecoder default_decoder(int channels, int factor) {
    Rng rng(0xDEC0DE5ull);
    return ToyDecoder::make(channels, factor, 32, rng);
}

inline ToyDecoder decoder_from(const Config& cfg) {
    const int channels = cfg.get_int("decoder", "channels", kLatentChannels);
    const int factor = cfg.get_int("decoder", "factor", kLatentFactor);
    const std::string checkpoint = cfg.get_string("decoder", "checkpoint", "");
    if (!checkpoint.empty()) {
        ToyDecoder d = ToyDecoder::load(checkpoint);
        if (d.latent_channels != channels || d.factor != factor) {
            throw ConfigError("config: decoder checkpoint does not match channels/factor settings");
        }
        return d;
    }
    return default_decoder(channels, factor);
}

// --------------------------------------------------------------- generation

struct GenerationJob {
    Trajectory cameras;
    int label = 0;
    int n_labels = 4;
    uint64_t seed = 1;
    SigmaSchedule schedule;
    GuidanceConfig guidance;
    double sigma_data = 0.5;
    int latent_channels = kLatentChannels;
    int factor = kLatentFactor;
    SceneBounds bounds;
    RenderConfig render_cfg;
    std::string decoder_checkpoint;
    std::string out_dir;

    void validate() const {
        if (cameras.empty()) throw ValidationError("GenerationJob: trajectory has no cameras");
        const int W = cameras[0].first.width, H = cameras[0].first.height;
        for (const auto& [intr, pose] : cameras) {
            intr.validate();
            pose.validate();
            if (intr.width != W || intr.height != H) {
                throw ValidationError("GenerationJob: all cameras must share one resolution");
            }
            if (W % factor != 0 || H % factor != 0) {
                throw ValidationError("GenerationJob: resolution must be divisible by the latent factor");
            }
        }
        schedule.validate();
        guidance.validate();
        if (label < 0 || label >= n_labels) throw ValidationError("GenerationJob: label out of range");
        if (out_dir.empty()) throw ValidationError("GenerationJob: no output directory");
    }
};

inline GenerationJob generation_job_from(const Config& cfg, uint64_t seed, const std::string& out_dir) {
    GenerationJob job;
    job.seed = seed;
    job.out_dir = out_dir;
    job.cameras = load_trajectory(cfg.require_string("generate", "trajectory"));
    job.label = cfg.get_int("generate", "label", 0);
    job.n_labels = cfg.get_int("generate", "labels", 4);
    job.latent_channels = cfg.get_int("decoder", "channels", kLatentChannels);
    job.factor = cfg.get_int("decoder", "factor", kLatentFactor);
    job.decoder_checkpoint = cfg.get_string("decoder", "checkpoint", "");
    job.sigma_data = cfg.get_double("sampler", "sigma_data", 0.5);
    job.schedule = SigmaSchedule::karras(cfg.get_int("sampler", "steps", 32),
                                         cfg.get_double("sampler", "sigma_min", 0.002),
                                         cfg.get_double("sampler", "sigma_max", 80.0),
                                         cfg.get_double("sampler", "rho", 7.0));
    const double w1 = cfg.get_double("sampler", "w1", 0.0);
    const double w2 = cfg.get_double("sampler", "w2", 0.0);
    job.guidance.mode = (w1 > 0 || w2 > 0) ? GuidanceConfig::Mode::kHybrid : GuidanceConfig::Mode::kNone;
    job.guidance.w1 = w1;
    job.guidance.w2 = w2;
    job.guidance.rescale_phi = cfg.get_double("sampler", "rescale", 0.0);
    job.bounds = scene_bounds_from(cfg);
    job.render_cfg = render_config_from(cfg);
    return job;
}

struct GenerationResult {
    GaussianScene scene;
    std::vector<std::string> files;
};

inline GenerationResult generate(const GenerationJob& job, const Config& cfg) {
    job.validate();
    fs::create_directories(job.out_dir);
    StageTimer timer;

    const int N = static_cast<int>(job.cameras.size());
    const int W = job.cameras[0].first.width, H = job.cameras[0].first.height;
    const int h = H / job.factor, w = W / job.factor;

    Conditioning cond;
    cond.text.assign(static_cast<size_t>(job.n_labels), 0.0);
    cond.text[static_cast<size_t>(job.label)] = 1.0;
    std::vector<RayMap> latent_rays, full_rays;
    for (const auto& [intr, pose] : job.cameras) {
        latent_rays.push_back(compute_ray_map(intr.downscaled(job.factor), pose));
        full_rays.push_back(compute_ray_map(intr, pose));
    }
    cond.pose = latent_rays;

    timer.start("sample");
    const MixtureSpec mix = toy_latent_mixture(job.n_labels, N, h, w, job.latent_channels);
    const DenoiserFn denoiser = MixtureDenoiser{mix}.fn();
    Rng rng(job.seed);
    const LatentGrid latents =
        sample(denoiser, cond, job.schedule, job.guidance, rng, N, h, w, job.latent_channels);
    timer.stop();

    timer.start("fuse");
    const LatentGrid fused = fuse_views(latents, latent_rays);
    timer.stop();

    timer.start("decode");
    ToyDecoder decoder = job.decoder_checkpoint.empty()
                             ? default_decoder(job.latent_channels, job.factor)
                             : ToyDecoder::load(job.decoder_checkpoint);
    if (decoder.latent_channels != job.latent_channels || decoder.factor != job.factor) {
        throw ConfigError("generate: decoder checkpoint does not match channels/factor settings");
    }
    const std::vector<PixelGaussianMap> maps = decode_gaussians(decoder, latents, fused, full_rays);
    timer.stop();

    timer.start("merge");
    GenerationResult result;
    result.scene = merge_views(maps, job.cameras, job.bounds.near, job.bounds.far);
    timer.stop();

    timer.start("render");
    save_ply((fs::path(job.out_dir) / "scene.ply").string(), result.scene);
    result.files.push_back("scene.ply");
    for (size_t v = 0; v < job.cameras.size(); ++v) {
        const auto& [intr, pose] = job.cameras[v];
        const RenderOutput<float> r = render<float>(result.scene, intr, pose, job.render_cfg);
        const std::string png = view_name("view", v, ".png");
        const std::string pfm = view_name("depth", v, ".pfm");
        save_png((fs::path(job.out_dir) / png).string(), r.rgb);
        save_pfm((fs::path(job.out_dir) / pfm).string(), r.depth);
        result.files.push_back(png);
        result.files.push_back(pfm);
    }
    timer.stop();

    nlohmann::json extra;
    extra["latent_chain"] = {{"views", N},
                             {"latent", {h, w, job.latent_channels}},
                             {"raw_map", {H, W, GaussianChannels::kCount}},
                             {"primitives", result.scene.size()}};
    write_manifest(job.out_dir, "generate", cfg, job.seed, timer, result.files, extra);
    result.files.push_back("manifest.json");
    return result;
}

// ----------------------------------------------------- reconstruction eval

struct EvalJob {
    uint64_t scene_seed = 7;
    int n_views = 7;
    int resolution = 32;
    std::vector<int> context;  // e.g. 4 context views
    std::vector<int> target;   // e.g. 3 target views
    bool oracle = false;       // feed true Gaussians instead of decoding
    SceneBounds bounds;
    RenderConfig render_cfg;
    std::string decoder_checkpoint;
    std::string out_dir;

    void validate() const {
        if (target.empty()) throw ValidationError("EvalJob: empty target set");
        if (context.empty() && !oracle) throw ValidationError("EvalJob: empty context set");
        for (int c : context) {
            for (int t : target) {
                if (c == t) throw ValidationError("EvalJob: context and target sets overlap");
            }
        }
        for (int v : context) {
            if (v < 0 || v >= n_views) throw ValidationError("EvalJob: context view out of range");
        }
        for (int v : target) {
            if (v < 0 || v >= n_views) throw ValidationError("EvalJob: target view out of range");
        }
        if (out_dir.empty()) throw ValidationError("EvalJob: no output directory");
    }
};

inline std::vector<int> parse_view_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream s(text);
    std::string tok;
    while (std::getline(s, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("config: bad view list entry '" + tok + "'");
        }
    }
    return out;
}

inline EvalJob eval_job_from(const Config& cfg, uint64_t seed, const std::string& out_dir) {
    EvalJob job;
    job.scene_seed = cfg.get_u64("reconstruct", "scene_seed", seed);
    job.n_views = cfg.get_int("reconstruct", "views", 7);
    job.resolution = cfg.get_int("reconstruct", "resolution", 32);
    job.context = parse_view_list(cfg.get_string("reconstruct", "context", "0,1,2,3"));
    job.target = parse_view_list(cfg.get_string("reconstruct", "target", "4,5,6"));
    job.oracle = cfg.get_bool("reconstruct", "oracle", false);
    job.bounds = scene_bounds_from(cfg);
    job.render_cfg = render_config_from(cfg);
    job.decoder_checkpoint = cfg.get_string("decoder", "checkpoint", "");
    job.out_dir = out_dir;
    return job;
}

inline MetricsReport reconstruct_eval(const EvalJob& job, const Config& cfg) {
    job.validate();
    fs::create_directories(job.out_dir);
    StageTimer timer;

    timer.start("synthesize");
    const SyntheticScene gt = make_synthetic_scene(job.scene_seed, job.n_views, job.resolution);
    timer.stop();

    timer.start("reconstruct");
    GaussianScene recon;
    if (job.oracle) {
        recon = gt.scene;
    } else {
        const int factor = cfg.get_int("decoder", "factor", kLatentFactor);
        std::vector<Image> ctx_images;
        std::vector<DepthMap> ctx_depths;
        std::vector<RayMap> latent_rays, full_rays;
        std::vector<std::pair<Intrinsics, Pose>> ctx_cams;
        for (int v : job.context) {
            ctx_images.push_back(gt.images[static_cast<size_t>(v)]);
            ctx_depths.push_back(gt.depths[static_cast<size_t>(v)]);
            const auto& [intr, pose] = gt.cameras[static_cast<size_t>(v)];
            latent_rays.push_back(compute_ray_map(intr.downscaled(factor), pose));
            full_rays.push_back(compute_ray_map(intr, pose));
            ctx_cams.emplace_back(intr, pose);
        }
        const LatentGrid latents = encode_rgbd(ctx_images, ctx_depths, job.bounds.near, job.bounds.far, factor);
        const LatentGrid fused = fuse_views(latents, latent_rays);
        ToyDecoder decoder = job.decoder_checkpoint.empty()
                                 ? default_decoder(latents.channels(), factor)
                                 : ToyDecoder::load(job.decoder_checkpoint);
        const std::vector<PixelGaussianMap> maps = decode_gaussians(decoder, latents, fused, full_rays);
        recon = merge_views(maps, ctx_cams, job.bounds.near, job.bounds.far);
    }
    timer.stop();

    timer.start("evaluate");
    MetricsReport report;
    for (int v : job.target) {
        const auto& [intr, pose] = gt.cameras[static_cast<size_t>(v)];
        const RenderOutput<float> r = render<float>(recon, intr, pose, job.render_cfg);
        SceneMetrics m;
        m.name = view_name("target", static_cast<size_t>(v), "");
        m.psnr = psnr(r.rgb, gt.images[static_cast<size_t>(v)]);
        m.ssim = ssim(r.rgb, gt.images[static_cast<size_t>(v)]);
        DepthMap pred(intr.width, intr.height, 1);
        for (int y = 0; y < intr.height; ++y) {
            for (int x = 0; x < intr.width; ++x) pred.at(y, x, 0) = r.depth.at(y, x, 0);
        }
        const Mask& mask = gt.masks[static_cast<size_t>(v)];
        try {
            m.absrel = absrel(pred, gt.depths[static_cast<size_t>(v)], &mask);
            m.delta1 = delta1(pred, gt.depths[static_cast<size_t>(v)], &mask);
            m.depth_loss = depth_loss(pred, gt.depths[static_cast<size_t>(v)], &mask);
        } catch (const DegeneracyError& e) {
            std::fprintf(stderr, "warning: view %d depth alignment degenerate (%s); depth metrics set to -1\n",
                         v, e.what());
            m.absrel = m.delta1 = m.depth_loss = -1.0;
        }
        report.scenes.push_back(m);
    }
    timer.stop();

    report.save_json((fs::path(job.out_dir) / "metrics.json").string());
    report.save_csv((fs::path(job.out_dir) / "metrics.csv").string());
    write_manifest(job.out_dir, "reconstruct", cfg, job.scene_seed, timer,
                   {"metrics.json", "metrics.csv"});
    return report;
}

// ------------------------------------------------------------- render / eval

inline std::vector<std::string> render_cmd(const std::string& ply_path, const std::string& traj_path,
                                           const std::string& out_dir, const RenderConfig& rcfg,
                                           const Config& cfg, uint64_t seed) {
    const GaussianScene scene = load_ply(ply_path);
    const Trajectory traj = load_trajectory(traj_path);
    if (traj.empty()) throw ValidationError("render: trajectory has no cameras");
    fs::create_directories(out_dir);
    StageTimer timer;
    timer.start("render");
    std::vector<std::string> files;
    for (size_t v = 0; v < traj.size(); ++v) {
        const auto& [intr, pose] = traj[v];
        const RenderOutput<float> r = render<float>(scene, intr, pose, rcfg);
        const std::string png = view_name("view", v, ".png");
        const std::string pfm = view_name("depth", v, ".pfm");
        save_png((fs::path(out_dir) / png).string(), r.rgb);
        save_pfm((fs::path(out_dir) / pfm).string(), r.depth);
        files.push_back(png);
        files.push_back(pfm);
    }
    timer.stop();
    write_manifest(out_dir, "render", cfg, seed, timer, files);
    return files;
}

// Depth evaluation over directories of PFM files matched by filename. Pixels
// with non-positive ground truth are excluded from the metrics.
inline MetricsReport eval_depth_cmd(const std::string& pred_dir, const std::string& gt_dir,
                                    const std::string& out_dir, const Config& cfg, uint64_t seed) {
    auto list_pfm = [](const std::string& dir) {
        if (!fs::is_directory(dir)) throw ValidationError("eval-depth: not a directory: " + dir);
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".pfm") {
                names.push_back(e.path().filename().string());
            }
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    const std::vector<std::string> pred_names = list_pfm(pred_dir);
    const std::vector<std::string> gt_names = list_pfm(gt_dir);
    std::vector<std::string> unmatched;
    for (const auto& n : pred_names) {
        if (!std::binary_search(gt_names.begin(), gt_names.end(), n)) unmatched.push_back("pred:" + n);
    }
    for (const auto& n : gt_names) {
        if (!std::binary_search(pred_names.begin(), pred_names.end(), n)) unmatched.push_back("gt:" + n);
    }
    if (!unmatched.empty()) {
        std::string msg = "eval-depth: unmatched files:";
        for (const auto& n : unmatched) msg += " " + n;
        throw ValidationError(msg);
    }
    if (pred_names.empty()) throw ValidationError("eval-depth: no .pfm files found");

    fs::create_directories(out_dir);
    StageTimer timer;
    timer.start("evaluate");
    MetricsReport report;
    for (const auto& name : pred_names) {
        const Image pred_img = load_pfm((fs::path(pred_dir) / name).string());
        const Image gt_img = load_pfm((fs::path(gt_dir) / name).string());
        if (pred_img.channels() != 1 || gt_img.channels() != 1) {
            throw ValidationError("eval-depth: " + name + " is not a single-channel depth PFM");
        }
        if (!pred_img.same_shape(gt_img)) {
            throw ValidationError("eval-depth: " + name + " resolution mismatch between pred and gt");
        }
        DepthMap pred(pred_img.width(), pred_img.height(), 1);
        DepthMap gt(gt_img.width(), gt_img.height(), 1);
        Mask mask(gt_img.width(), gt_img.height(), 1);
        for (int y = 0; y < gt_img.height(); ++y) {
            for (int x = 0; x < gt_img.width(); ++x) {
                pred.at(y, x, 0) = pred_img.at(y, x, 0);
                gt.at(y, x, 0) = gt_img.at(y, x, 0);
                mask.at(y, x, 0) = gt_img.at(y, x, 0) > 0 ? 1 : 0;
            }
        }
        SceneMetrics m;
        m.name = name;
        m.psnr = 0;
        m.ssim = 0;
        m.absrel = absrel(pred, gt, &mask);
        m.delta1 = delta1(pred, gt, &mask);
        m.depth_loss = depth_loss(pred, gt, &mask);
        report.scenes.push_back(m);
    }
    timer.stop();
    report.save_json((fs::path(out_dir) / "depth_report.json").string());
    report.save_csv((fs::path(out_dir) / "depth_report.csv").string());
    write_manifest(out_dir, "eval-depth", cfg, seed, timer, {"depth_report.json", "depth_report.csv"});
    return report;
}

}  // namespace splatforge
