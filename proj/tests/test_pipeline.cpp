#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <splatforge/pipeline.hpp>

using namespace splatforge;
namespace fs = std::filesystem;

namespace {

Config parse_text(const std::string& text, const std::string& name = "test.ini") {
    std::istringstream in(text);
    return parse_config(in, name);
}

// runs f, expects it to throw E, hands back the message for substring checks
template <class E, class F>
std::string error_text(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    FAIL("expected exception was not thrown");
    return "";
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "splatforge_pipeline_tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config parser handles sections, separators, and comments", "[pipeline]") {
    const std::string text =
        "top = 1\n"
        "# full-line comment\n"
        "[scene]\n"
        "near = 0.25\n"
        "far 6.5        ; space-separated form with a comment\n"
        "\n"
        "[render]\n"
        "  tile_size =   8   # padded everywhere\n"
        "name = hello world\n";
    const Config cfg = parse_text(text);

    CHECK(cfg.get_string("global", "top", "") == "1");  // pre-section keys land in [global]
    CHECK(cfg.get_double("scene", "near", 0) == 0.25);
    CHECK(cfg.get_double("scene", "far", 0) == 6.5);
    CHECK(cfg.get_int("render", "tile_size", 0) == 8);
    CHECK(cfg.get_string("render", "name", "") == "hello world");
    CHECK(cfg.has("scene", "near"));
    CHECK_FALSE(cfg.has("scene", "missing"));
    CHECK_FALSE(cfg.has("nosuch", "near"));

    SECTION("diagnostics carry file name and line number") {
        CHECK(contains(error_text<ParseError>([] { parse_text("a = 1\n[oops\n"); }),
                       "test.ini line 2: malformed section header"));
        CHECK(contains(error_text<ParseError>([] { parse_text("[]\n"); }), "malformed section header"));
        CHECK(contains(error_text<ParseError>([] { parse_text("# c\n\nlonetoken\n"); }),
                       "line 3: expected 'key = value', got 'lonetoken'"));
        CHECK(contains(error_text<ParseError>([] { parse_text("key =\n"); }), "line 1: empty key or value"));
        CHECK(contains(error_text<ParseError>([] { parse_text("= value\n"); }), "empty key or value"));
    }

    SECTION("comment strips to end of line for both markers") {
        const Config c = parse_text("a = 1 # tail\nb = 2 ; tail\nc = 3#tight\n");
        CHECK(c.get_string("global", "a", "") == "1");
        CHECK(c.get_string("global", "b", "") == "2");
        CHECK(c.get_string("global", "c", "") == "3");
    }

    SECTION("later assignment wins") {
        const Config c = parse_text("[s]\nk = 1\nk = 2\n");
        CHECK(c.get_string("s", "k", "") == "2");
    }
}

TEST_CASE("config getters enforce their types", "[pipeline]") {
    const Config cfg = parse_text(
        "[t]\n"
        "num = 1.5\n"
        "whole = -3\n"
        "big = 18446744073709551615\n"
        "word = banana\n"
        "yes1 = on\n"
        "no1 = Off\n");

    CHECK(cfg.get_double("t", "num", 0) == 1.5);
    CHECK(cfg.get_int("t", "whole", 0) == -3);
    CHECK(cfg.get_u64("t", "big", 0) == 0xffffffffffffffffull);
    CHECK(cfg.get_bool("t", "yes1", false));
    CHECK_FALSE(cfg.get_bool("t", "no1", true));

    // fallbacks only apply when the key is absent
    CHECK(cfg.get_double("t", "absent", 2.25) == 2.25);
    CHECK(cfg.get_int("nosection", "absent", 7) == 7);
    CHECK(cfg.get_u64("t", "absent", 9) == 9);
    CHECK(cfg.get_bool("t", "absent", true));
    CHECK(cfg.get_string("t", "absent", "dflt") == "dflt");

    CHECK(contains(error_text<ConfigError>([&] { cfg.get_double("t", "word", 0); }),
                   "[t] word = 'banana' is not a number"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_int("t", "num", 0); }),
                   "[t] num must be an integer"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_u64("t", "word", 0); }), "is not a u64"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_bool("t", "word", false); }), "is not a boolean"));
    CHECK(cfg.require_string("t", "word") == "banana");
    CHECK(contains(error_text<ConfigError>([&] { cfg.require_string("gen", "camera"); }),
                   "missing required key [gen] camera"));
}

TEST_CASE("config canonical form and hash ignore formatting but not content", "[pipeline]") {
    Config a;
    a.set("b", "y", "2");
    a.set("a", "z", "3");
    a.set("a", "x", "1");
    CHECK(a.canonical() == "a.x=1\na.z=3\nb.y=2\n");  // sorted section.key order
    CHECK(a.hash() == fnv1a64(a.canonical()));

    const Config c1 = parse_text("[s]\nk = 1\nj = 2\n");
    const Config c2 = parse_text("# note\n[s]\n\nj    2   ; same fields, other order/format\nk=1\n");
    CHECK(c1.canonical() == c2.canonical());
    CHECK(c1.hash() == c2.hash());

    Config c3 = c1;
    c3.set("s", "k", "9");
    CHECK(c3.hash() != c1.hash());
    Config c4 = c1;
    c4.set("s", "new", "1");
    CHECK(c4.hash() != c1.hash());
    Config c5 = c1;
    c5.set("other", "k", "1");
    CHECK(c5.hash() != c1.hash());
}

TEST_CASE("view names, view lists, and file hashing", "[pipeline]") {
    CHECK(view_name("view", 3, ".png") == "view_003.png");
    CHECK(view_name("depth", 0, ".pfm") == "depth_000.pfm");
    CHECK(view_name("target", 12, "") == "target_012");
    CHECK(view_name("view", 120, ".png") == "view_120.png");

    CHECK(parse_view_list("0,1,2") == std::vector<int>{0, 1, 2});
    CHECK(parse_view_list("4") == std::vector<int>{4});
    CHECK(parse_view_list("").empty());
    CHECK(parse_view_list("7,3") == std::vector<int>{7, 3});
    CHECK(contains(error_text<ConfigError>([] { parse_view_list("1,x,2"); }),
                   "bad view list entry 'x'"));

    const fs::path dir = fresh_dir("hash");
    {
        std::ofstream out(dir / "probe.bin", std::ios::binary);
        out << "splat";
    }
    CHECK(hash_file((dir / "probe.bin").string()) == fnv1a64("splat"));
    CHECK_THROWS_AS(hash_file((dir / "missing.bin").string()), Error);
}

TEST_CASE("manifest records config hash, outputs, and extras", "[pipeline]") {
    const fs::path dir = fresh_dir("manifest");
    {
        std::ofstream(dir / "a.txt") << "alpha";
        std::ofstream(dir / "b.bin") << "xyz";
    }
    Config cfg;
    cfg.set("s", "k", "v");
    StageTimer timer;
    timer.start("work");
    timer.stop();
    nlohmann::json extra;
    extra["custom"] = 7;
    write_manifest(dir.string(), "test-cmd", cfg, 42, timer, {"a.txt", "b.bin"}, extra);

    const nlohmann::json j = read_json(dir / "manifest.json");
    CHECK(j.at("tool_version") == kVersion);
    CHECK(j.at("command") == "test-cmd");
    CHECK(j.at("seed") == 42);
    CHECK(j.at("config_hash") == hex64(cfg.hash()));
    CHECK(j.at("stage_ms").contains("work"));
    CHECK(j.at("custom") == 7);
    REQUIRE(j.at("outputs").size() == 2);
    CHECK(j.at("outputs")[0].at("file") == "a.txt");
    CHECK(j.at("outputs")[0].at("bytes") == 5);
    CHECK(j.at("outputs")[0].at("fnv1a64") == hex64(fnv1a64("alpha")));
    CHECK(j.at("outputs")[1].at("file") == "b.bin");
    CHECK(j.at("outputs")[1].at("fnv1a64") == hex64(fnv1a64("xyz")));
}

TEST_CASE("prompt vocabulary maps to one-hot labels", "[pipeline]") {
    const auto& vocab = prompt_vocabulary();
    REQUIRE(vocab.size() == 4);
    for (size_t i = 0; i < vocab.size(); ++i) {
        CHECK(prompt_to_label(vocab[i]) == static_cast<int>(i));
    }
    const std::string msg =
        error_text<ValidationError>([] { prompt_to_label("a teapot made of fog"); });
    CHECK(contains(msg, "unknown prompt 'a teapot made of fog'"));
    for (const auto& p : vocab) CHECK(contains(msg, p));  // error lists the valid choices
}

TEST_CASE("toy latent mixture is deterministic with distinct components", "[pipeline]") {
    const MixtureSpec mix = toy_latent_mixture(3, 2, 4, 4, 8);
    REQUIRE(mix.components.size() == 3);
    for (const auto& c : mix.components) {
        CHECK(c.weight == Catch::Approx(1.0 / 3).margin(1e-15));
        CHECK(c.stddev == 0.3);
        REQUIRE(c.mean.size() == 2 * 4 * 4 * 8);
    }
    // same arguments, same components, bit for bit
    const MixtureSpec again = toy_latent_mixture(3, 2, 4, 4, 8);
    for (size_t k = 0; k < 3; ++k) {
        CHECK(mix.components[k].mean == again.components[k].mean);
    }
    // labels get genuinely different targets
    for (size_t a = 0; a < 3; ++a) {
        for (size_t b = a + 1; b < 3; ++b) {
            CHECK((mix.components[a].mean - mix.components[b].mean).norm() > 0.5);
        }
    }
    CHECK_THROWS_AS(toy_latent_mixture(0, 2, 4, 4, 8), ValidationError);
}

TEST_CASE("scene bounds and render settings come from config", "[pipeline]") {
    const Config empty;
    const SceneBounds b0 = scene_bounds_from(empty);
    CHECK(b0.near == kSceneNear);
    CHECK(b0.far == kSceneFar);

    const Config cfg = parse_text("[scene]\nnear = 0.2\nfar = 9\n[render]\ntile_size = 8\nbackground_r = 1\n");
    const SceneBounds b = scene_bounds_from(cfg);
    CHECK(b.near == 0.2);
    CHECK(b.far == 9.0);
    const RenderConfig r = render_config_from(cfg);
    CHECK(r.tile_size == 8);
    CHECK(r.near == 0.1);  // render near is a cull plane, independent of scene bounds
    CHECK(r.background[0] == 1.0);
    CHECK(r.background[1] == 0.0);

    CHECK_THROWS_AS(scene_bounds_from(parse_text("[scene]\nnear = 0\n")), ConfigError);
    CHECK_THROWS_AS(scene_bounds_from(parse_text("[scene]\nnear = 2\nfar = 1\n")), ConfigError);
    CHECK_THROWS_AS(render_config_from(parse_text("[render]\ntile_size = 0\n")), ValidationError);
}

TEST_CASE("generation job wiring and validation", "[pipeline]") {
    const fs::path dir = fresh_dir("genjob");
    Rng rng(11);
    const Trajectory traj = camera_ring(2, 16, rng);
    const std::string traj_path = (dir / "ring.traj").string();
    save_trajectory(traj_path, traj);

    Config cfg;
    cfg.set("generate", "trajectory", traj_path);

    SECTION("defaults") {
        const GenerationJob job = generation_job_from(cfg, 5, (dir / "out").string());
        CHECK(job.seed == 5);
        CHECK(job.label == 0);
        CHECK(job.n_labels == 4);
        CHECK(job.cameras.size() == 2);
        CHECK(job.schedule.sigmas.size() == 33);  // steps default 32, plus terminal zero
        CHECK(job.schedule.sigmas.front() == 80.0);
        CHECK(job.guidance.mode == GuidanceConfig::Mode::kNone);
        CHECK(job.latent_channels == kLatentChannels);
        CHECK(job.factor == kLatentFactor);
        CHECK_NOTHROW(job.validate());
    }

    SECTION("guidance switches on when any weight is positive") {
        cfg.set("sampler", "w1", "0.5");
        cfg.set("sampler", "rescale", "0.3");
        const GenerationJob job = generation_job_from(cfg, 1, (dir / "out").string());
        CHECK(job.guidance.mode == GuidanceConfig::Mode::kHybrid);
        CHECK(job.guidance.w1 == 0.5);
        CHECK(job.guidance.w2 == 0.0);
        CHECK(job.guidance.rescale_phi == 0.3);
    }

    SECTION("missing trajectory key") {
        CHECK(contains(error_text<ConfigError>([&] {
                  generation_job_from(Config{}, 1, (dir / "out").string());
              }),
              "missing required key [generate] trajectory"));
    }

    SECTION("label range") {
        cfg.set("generate", "label", "7");
        const GenerationJob job = generation_job_from(cfg, 1, (dir / "out").string());
        CHECK(contains(error_text<ValidationError>([&] { job.validate(); }), "label out of range"));
    }

    SECTION("resolution must divide by the latent factor") {
        Rng r2(3);
        const Trajectory odd = camera_ring(1, 18, r2);
        const std::string odd_path = (dir / "odd.traj").string();
        save_trajectory(odd_path, odd);
        cfg.set("generate", "trajectory", odd_path);
        const GenerationJob job = generation_job_from(cfg, 1, (dir / "out").string());
        CHECK(contains(error_text<ValidationError>([&] { job.validate(); }), "divisible"));
    }

    SECTION("cameras must share a resolution") {
        Rng r2(3);
        Trajectory mixed = camera_ring(2, 16, r2);
        Rng r3(4);
        mixed.push_back(camera_ring(1, 32, r3)[0]);
        const std::string mixed_path = (dir / "mixed.traj").string();
        save_trajectory(mixed_path, mixed);
        cfg.set("generate", "trajectory", mixed_path);
        const GenerationJob job = generation_job_from(cfg, 1, (dir / "out").string());
        CHECK(contains(error_text<ValidationError>([&] { job.validate(); }),
                       "share one resolution"));
    }

    SECTION("empty out dir") {
        const GenerationJob job = generation_job_from(cfg, 1, "");
        CHECK_THROWS_AS(job.validate(), ValidationError);
    }
}

TEST_CASE("generation produces the full artifact set deterministically", "[pipeline]") {
    const fs::path dir = fresh_dir("generate");
    Rng rng(21);
    const Trajectory traj = camera_ring(2, 16, rng);
    const std::string traj_path = (dir / "ring.traj").string();
    save_trajectory(traj_path, traj);

    Config cfg;
    cfg.set("generate", "trajectory", traj_path);
    cfg.set("generate", "label", "1");
    cfg.set("sampler", "steps", "6");

    const GenerationJob job = generation_job_from(cfg, 5, (dir / "a").string());
    const GenerationResult res = generate(job, cfg);

    SECTION("artifacts exist and one gaussian per pixel per view survives") {
        const std::vector<std::string> expect = {"scene.ply",     "view_000.png", "depth_000.pfm",
                                                 "view_001.png",  "depth_001.pfm", "manifest.json"};
        CHECK(res.files == expect);
        for (const auto& f : expect) CHECK(fs::exists(dir / "a" / f));

        const GaussianScene loaded = load_ply((dir / "a" / "scene.ply").string());
        CHECK(loaded.size() == 2 * 16 * 16);  // N_G = N * H * W
        CHECK(res.scene.size() == 2 * 16 * 16);

        const Image png = load_png((dir / "a" / "view_000.png").string());
        CHECK(png.width() == 16);
        CHECK(png.height() == 16);
        CHECK(png.channels() == 3);
        const Image pfm = load_pfm((dir / "a" / "depth_000.pfm").string());
        CHECK(pfm.width() == 16);
        CHECK(pfm.channels() == 1);
    }

    SECTION("manifest traces the latent chain") {
        const nlohmann::json j = read_json(dir / "a" / "manifest.json");
        CHECK(j.at("command") == "generate");
        CHECK(j.at("seed") == 5);
        CHECK(j.at("config_hash") == hex64(cfg.hash()));
        const auto& chain = j.at("latent_chain");
        CHECK(chain.at("views") == 2);
        CHECK(chain.at("latent") == nlohmann::json({4, 4, 8}));
        CHECK(chain.at("raw_map") == nlohmann::json({16, 16, 12}));
        CHECK(chain.at("primitives") == 2 * 16 * 16);
        REQUIRE(j.at("outputs").size() == 5);
        for (const auto& o : j.at("outputs")) {
            const fs::path p = dir / "a" / o.at("file").get<std::string>();
            CHECK(o.at("fnv1a64") == hex64(hash_file(p.string())));
            CHECK(o.at("bytes") == static_cast<uint64_t>(fs::file_size(p)));
        }
    }

    SECTION("same seed reruns are byte-identical, different seeds are not") {
        const GenerationJob again = generation_job_from(cfg, 5, (dir / "b").string());
        generate(again, cfg);
        for (const char* f : {"scene.ply", "view_000.png", "depth_000.pfm", "view_001.png",
                              "depth_001.pfm"}) {
            CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
        }
        // manifests differ only in timings
        nlohmann::json ja = read_json(dir / "a" / "manifest.json");
        nlohmann::json jb = read_json(dir / "b" / "manifest.json");
        ja.erase("stage_ms");
        jb.erase("stage_ms");
        CHECK(ja == jb);

        const GenerationJob other = generation_job_from(cfg, 6, (dir / "c").string());
        generate(other, cfg);
        CHECK(slurp(dir / "a" / "scene.ply") != slurp(dir / "c" / "scene.ply"));
    }

    SECTION("hybrid guidance path stays finite end to end") {
        cfg.set("sampler", "w1", "1.0");
        cfg.set("sampler", "w2", "0.5");
        cfg.set("sampler", "rescale", "0.7");
        const GenerationJob guided = generation_job_from(cfg, 9, (dir / "g").string());
        const GenerationResult r = generate(guided, cfg);
        REQUIRE(r.scene.size() == 2 * 16 * 16);
        for (size_t i = 0; i < r.scene.size(); i += 97) {
            CHECK(r.scene.gaussians[i].position.allFinite());
            CHECK(std::isfinite(r.scene.gaussians[i].opacity_logit));
        }
    }
}

TEST_CASE("reconstruction eval writes per-view metrics", "[pipeline]") {
    const fs::path dir = fresh_dir("reconstruct");
    Config cfg;
    cfg.set("reconstruct", "views", "5");
    cfg.set("reconstruct", "resolution", "16");
    cfg.set("reconstruct", "context", "0,1");
    cfg.set("reconstruct", "target", "2,3");

    SECTION("decoder path produces a full report") {
        const EvalJob job = eval_job_from(cfg, 7, (dir / "out").string());
        CHECK(job.scene_seed == 7);
        const MetricsReport rep = reconstruct_eval(job, cfg);
        REQUIRE(rep.scenes.size() == 2);
        CHECK(rep.scenes[0].name == "target_002");
        CHECK(rep.scenes[1].name == "target_003");
        for (const auto& s : rep.scenes) {
            CHECK(std::isfinite(s.psnr));
            CHECK(s.psnr > 0);
            CHECK(s.ssim >= -1.0);
            CHECK(s.ssim <= 1.0);
        }

        const nlohmann::json j = read_json(dir / "out" / "metrics.json");
        REQUIRE(j.at("scenes").size() == 2);
        CHECK(j.at("scenes")[0].at("name") == "target_002");
        CHECK(j.contains("mean"));
        const double mean_psnr = (rep.scenes[0].psnr + rep.scenes[1].psnr) / 2;
        CHECK(j.at("mean").at("psnr").get<double>() == Catch::Approx(mean_psnr).margin(1e-12));

        const std::string csv = slurp(dir / "out" / "metrics.csv");
        CHECK(contains(csv, "name,psnr,ssim,absrel,delta1,depth_loss"));
        CHECK(contains(csv, "target_002,"));
        CHECK(contains(csv, "mean,"));
        CHECK(fs::exists(dir / "out" / "manifest.json"));
    }

    SECTION("oracle path reproduces ground truth exactly") {
        cfg.set("reconstruct", "oracle", "true");
        cfg.set("reconstruct", "context", "");  // context unused when feeding true gaussians
        const EvalJob job = eval_job_from(cfg, 7, (dir / "oracle").string());
        const MetricsReport rep = reconstruct_eval(job, cfg);
        REQUIRE(rep.scenes.size() == 2);
        for (const auto& s : rep.scenes) {
            CHECK(s.psnr == 99.0);  // capped sentinel for identical images
            CHECK(s.ssim == Catch::Approx(1.0).margin(1e-12));
            CHECK(s.absrel >= 0);
            CHECK(s.absrel < 1e-6);
            CHECK(s.delta1 == 1.0);
        }
    }

    SECTION("reruns of the eval are deterministic") {
        const EvalJob j1 = eval_job_from(cfg, 7, (dir / "r1").string());
        const EvalJob j2 = eval_job_from(cfg, 7, (dir / "r2").string());
        reconstruct_eval(j1, cfg);
        reconstruct_eval(j2, cfg);
        CHECK(slurp(dir / "r1" / "metrics.json") == slurp(dir / "r2" / "metrics.json"));
        CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r2" / "metrics.csv"));
    }

    SECTION("view set validation") {
        cfg.set("reconstruct", "target", "");
        CHECK(contains(error_text<ValidationError>([&] {
                  reconstruct_eval(eval_job_from(cfg, 7, (dir / "bad").string()), cfg);
              }),
              "empty target set"));

        cfg.set("reconstruct", "target", "1,4");
        CHECK(contains(error_text<ValidationError>([&] {
                  reconstruct_eval(eval_job_from(cfg, 7, (dir / "bad").string()), cfg);
              }),
              "overlap"));

        cfg.set("reconstruct", "target", "9");
        CHECK(contains(error_text<ValidationError>([&] {
                  reconstruct_eval(eval_job_from(cfg, 7, (dir / "bad").string()), cfg);
              }),
              "out of range"));

        cfg.set("reconstruct", "target", "4");
        cfg.set("reconstruct", "context", "");
        CHECK(contains(error_text<ValidationError>([&] {
                  reconstruct_eval(eval_job_from(cfg, 7, (dir / "bad").string()), cfg);
              }),
              "empty context set"));
    }
}

TEST_CASE("render command round-trips a saved scene", "[pipeline]") {
    const fs::path dir = fresh_dir("rendercmd");
    Rng rng(31);
    const Trajectory traj = camera_ring(2, 16, rng);
    const std::string traj_path = (dir / "ring.traj").string();
    save_trajectory(traj_path, traj);

    Config cfg;
    cfg.set("generate", "trajectory", traj_path);
    cfg.set("sampler", "steps", "4");
    const GenerationJob job = generation_job_from(cfg, 3, (dir / "gen").string());
    generate(job, cfg);
    const std::string ply = (dir / "gen" / "scene.ply").string();

    SECTION("outputs per view, deterministic across reruns") {
        const RenderConfig rcfg = render_config_from(cfg);
        const auto files = render_cmd(ply, traj_path, (dir / "r1").string(), rcfg, cfg, 3);
        const std::vector<std::string> expect = {"view_000.png", "depth_000.pfm", "view_001.png",
                                                 "depth_001.pfm"};
        CHECK(files == expect);
        render_cmd(ply, traj_path, (dir / "r2").string(), rcfg, cfg, 3);
        for (const auto& f : expect) {
            CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
        }

        // float32 quantization in the PLY means the reload is close to, not
        // bit-equal to, the in-memory render
        const Image direct = load_png((dir / "gen" / "view_000.png").string());
        const Image reload = load_png((dir / "r1" / "view_000.png").string());
        double worst = 0;
        for (int y = 0; y < direct.height(); ++y) {
            for (int x = 0; x < direct.width(); ++x) {
                for (int c = 0; c < 3; ++c) {
                    worst = std::max(worst, std::abs(static_cast<double>(direct.at(y, x, c)) -
                                                     static_cast<double>(reload.at(y, x, c))));
                }
            }
        }
        CHECK(worst <= 2.0 / 255.0 + 1e-12);
    }

    SECTION("empty trajectory is rejected") {
        const std::string empty_path = (dir / "empty.traj").string();
        save_trajectory(empty_path, Trajectory{});
        CHECK(contains(error_text<ValidationError>([&] {
                  render_cmd(ply, empty_path, (dir / "x").string(), RenderConfig{}, cfg, 1);
              }),
              "trajectory has no cameras"));
    }

    SECTION("missing scene file is reported with its path") {
        const std::string missing = (dir / "nope.ply").string();
        CHECK(contains(error_text<Error>([&] {
                  render_cmd(missing, traj_path, (dir / "x").string(), RenderConfig{}, cfg, 1);
              }),
              "nope.ply"));
    }
}

TEST_CASE("depth evaluation command aligns and reports per file", "[pipeline]") {
    const fs::path dir = fresh_dir("evaldepth");
    const fs::path pred_dir = dir / "pred";
    const fs::path gt_dir = dir / "gt";
    fs::create_directories(pred_dir);
    fs::create_directories(gt_dir);

    // dyadic values stay exact through the float32 PFM round trip
    auto make_depth = [](int w, int h, double scale, double shift) {
        Image img(w, h, 1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double base = 0.5 + (y * w + x) / 8.0;
                img.at(y, x, 0) = static_cast<float>(scale * base + shift);
            }
        }
        return img;
    };
    const Config cfg;

    SECTION("identical and affine-warped predictions both align to zero error") {
        save_pfm((gt_dir / "v0.pfm").string(), make_depth(4, 4, 1.0, 0.0));
        save_pfm((gt_dir / "v1.pfm").string(), make_depth(4, 4, 1.0, 0.25));
        save_pfm((pred_dir / "v0.pfm").string(), make_depth(4, 4, 1.0, 0.0));
        save_pfm((pred_dir / "v1.pfm").string(), make_depth(4, 4, 2.0, 0.75));  // 2*gt + 0.25

        const MetricsReport rep =
            eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
        REQUIRE(rep.scenes.size() == 2);
        CHECK(rep.scenes[0].name == "v0.pfm");
        CHECK(rep.scenes[1].name == "v1.pfm");
        for (const auto& s : rep.scenes) {
            CHECK(s.absrel < 1e-9);
            CHECK(s.delta1 == 1.0);
            CHECK(s.depth_loss < 1e-12);
            CHECK(s.psnr == 0);  // depth-only report carries no image metrics
            CHECK(s.ssim == 0);
        }
        const SceneMetrics mean = rep.aggregate();
        CHECK(mean.absrel == Catch::Approx((rep.scenes[0].absrel + rep.scenes[1].absrel) / 2).margin(1e-15));
        CHECK(fs::exists(dir / "out" / "depth_report.json"));
        CHECK(fs::exists(dir / "out" / "depth_report.csv"));
        const nlohmann::json j = read_json(dir / "out" / "depth_report.json");
        CHECK(j.at("scenes").size() == 2);
        CHECK(j.at("mean").at("delta1") == 1.0);
    }

    SECTION("non-positive ground truth pixels are excluded") {
        Image gt = make_depth(4, 4, 1.0, 0.0);
        gt.at(1, 2, 0) = 0.0f;  // invalid pixel
        Image pred = make_depth(4, 4, 1.0, 0.0);
        pred.at(1, 2, 0) = 1000.0f;  // wild prediction there must not matter
        save_pfm((gt_dir / "m.pfm").string(), gt);
        save_pfm((pred_dir / "m.pfm").string(), pred);
        const MetricsReport rep =
            eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
        REQUIRE(rep.scenes.size() == 1);
        CHECK(rep.scenes[0].absrel < 1e-9);
        CHECK(rep.scenes[0].delta1 == 1.0);
    }

    SECTION("every unmatched file on either side is listed") {
        save_pfm((pred_dir / "a.pfm").string(), make_depth(4, 4, 1, 0));
        save_pfm((pred_dir / "c.pfm").string(), make_depth(4, 4, 1, 0));
        save_pfm((gt_dir / "a.pfm").string(), make_depth(4, 4, 1, 0));
        save_pfm((gt_dir / "d.pfm").string(), make_depth(4, 4, 1, 0));
        const std::string msg = error_text<ValidationError>([&] {
            eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
        });
        CHECK(contains(msg, "pred:c.pfm"));
        CHECK(contains(msg, "gt:d.pfm"));
        CHECK_FALSE(contains(msg, "a.pfm"));
    }

    SECTION("empty directories are an error") {
        CHECK(contains(error_text<ValidationError>([&] {
                  eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
              }),
              "no .pfm files found"));
        CHECK(contains(error_text<ValidationError>([&] {
                  eval_depth_cmd((dir / "nodir").string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
              }),
              "not a directory"));
    }

    SECTION("channel and shape mismatches are rejected") {
        Image rgb(4, 4, 3);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = 0.5f;
        save_pfm((pred_dir / "v.pfm").string(), rgb);
        save_pfm((gt_dir / "v.pfm").string(), rgb);
        CHECK(contains(error_text<ValidationError>([&] {
                  eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
              }),
              "not a single-channel depth PFM"));

        fs::remove(pred_dir / "v.pfm");
        fs::remove(gt_dir / "v.pfm");
        save_pfm((pred_dir / "s.pfm").string(), make_depth(4, 4, 1, 0));
        save_pfm((gt_dir / "s.pfm").string(), make_depth(6, 6, 1, 0));
        CHECK(contains(error_text<ValidationError>([&] {
                  eval_depth_cmd(pred_dir.string(), gt_dir.string(), (dir / "out").string(), cfg, 1);
              }),
              "resolution mismatch"));
    }
}
