#include <nlohmann/json.hpp>
#include <sstream>

#include "../tools/cli.hpp"
#include "pcclip/config.hpp"
#include "pcclip/dataset.hpp"
#include "pcclip/evaluator.hpp"
#include "pcclip/png_io.hpp"
#include "pcclip/trainer.hpp"
#include "pcclip/translator.hpp"
#include "support.hpp"

using namespace pcclip;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& f) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& f) { return nlohmann::json::parse(slurp(f)); }

// Data and encoder flags shared by the toy-backend runs below.
std::vector<std::string> data(const fs::path& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"--out",    out.string(), "--synthetic-per-class", "8", "--points",
                               "256",      "--shots",    "4",                     "--feature-dim", "16"};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
}

// data() plus a short training schedule.
std::vector<std::string> small(const fs::path& out, std::vector<std::string> extra = {}) {
    extra.insert(extra.begin(), {"--epochs", "10"});
    return data(out, std::move(extra));
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// A tiny translator checkpoint shared by the tests that need one.
const fs::path& tiny_translator() {
    static testing::TempDir dir("cli_translator");
    static const fs::path ckpt = [] {
        const Result r = run({"pretrain", "--out", (dir / "pt").string(), "--synthetic", "--resolution", "32",
                              "--depth-levels", "2", "--base-channels", "4", "--steps", "3"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        return dir / "pt" / "translator.ckpt";
    }();
    return ckpt;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("exit codes: help 0, bad usage 2") {
        CHECK(run({"--help"}).code == 0);
        CHECK(run({}).code == 2);
        CHECK(run({"frobnicate"}).code == 2);
        CHECK(run({"fewshot", "--no-such-flag", "1"}).code == 2);
        testing::TempDir dir("cli_usage");
        const Result bad_key = run({"fewshot", "--out", dir.path().string(), "--set", "bogus=1"});
        CHECK(bad_key.code == 2);
        CHECK(bad_key.err.find("bogus") != std::string::npos);
        const Result bad_type = run({"fewshot", "--out", dir.path().string(), "--seed", "abc"});
        CHECK(bad_type.code == 2);
    }

    TEST_CASE("--help of every subcommand documents every key it consumes") {
        const std::map<std::string, std::vector<std::string>> must{
            {"pretrain", {"renders", "synthetic", "resolution", "noise_mode", "pretrain_learning_rate",
                          "pretrain_weight_decay", "pretrain_epochs", "pretrain_batch_size", "lr_schedule", "steps",
                          "depth_levels", "base_channels", "normalization", "skip_connections", "seed", "out"}},
            {"fewshot", {"dataset", "shots", "n_way", "views", "projection_resolution", "backend", "feature_dim",
                         "temperature", "prompt", "translator", "translate", "head", "adapter_mode", "optimizer",
                         "learning_rate", "weight_decay", "epochs", "batch_size"}},
            {"zeroshot", {"dataset", "test_dataset", "translator", "prompt", "report_format"}},
            {"eval", {"bundle", "translator", "test_dataset", "report_format"}},
            {"project", {"input", "views", "projection_resolution", "splat_radius", "out"}},
            {"ablate", {"ablation", "prompts", "shot_list", "head", "adapter_mode", "translator"}},
            {"plot", {"report", "out"}},
        };
        for (const auto& [cmd, keys] : must) {
            const Result r = run({cmd, "--help"});
            CHECK(r.code == 0);
            for (const auto& k : keys) {
                INFO(cmd << " --help lacks " << k);
                CHECK(r.out.find("[key " + k + ",") != std::string::npos);
            }
        }
        CHECK(run({"pretrain", "--help"}).out.find("--full") != std::string::npos);
    }

    TEST_CASE("pretrain: missing corpus is a usage error; 0 epochs writes the initialization") {
        testing::TempDir dir("cli_pretrain");
        const Result missing = run({"pretrain", "--out", dir.path().string()});
        CHECK(missing.code == 2);
        CHECK(missing.err.find("--synthetic") != std::string::npos);
        const Result nodir = run({"pretrain", "--out", dir.path().string(), "--renders", "/no/such/renders"});
        CHECK(nodir.code == 2);
        CHECK(nodir.err.find("/no/such/renders") != std::string::npos);

        const Result r = run({"pretrain", "--out", dir.path().string(), "--synthetic", "--resolution", "32",
                              "--depth-levels", "2", "--base-channels", "4", "--epochs", "0", "--seed", "5"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        TranslatorConfig cfg;
        cfg.depth_levels = 2;
        cfg.base_channels = 4;
        PretrainOptions o;
        o.opt.epochs = 0;
        o.opt.seed = 5;
        const auto pairs = build_pretraining_set(make_synthetic_renders(1, 32, 0), 32, 0);
        CHECK(load_translator(dir / "translator.ckpt") == pretrain(cfg, pairs, o).params);
        const auto m = read_json(dir / "manifest.json");
        CHECK(m.at("command") == "pretrain");
        CHECK(m.at("metrics").at("steps") == 0);
        CHECK(m.at("config").at("pretrain_epochs") == "0");
    }

    TEST_CASE("pretrain --full sets the full-scale recipe below explicit flags") {
        testing::TempDir dir("cli_full");
        // Resolution 32 overrides the preset's 224 so the run stays small.
        const Result r = run({"pretrain", "--full", "--out", dir.path().string(), "--synthetic", "--resolution",
                              "32", "--depth-levels", "2", "--base-channels", "4", "--epochs", "0"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto cfg = read_json(dir / "manifest.json").at("config");
        CHECK(cfg.at("resolution") == "32");
        CHECK(cfg.at("pretrain_weight_decay") == "0.0001");
        CHECK(cfg.at("pretrain_batch_size") == "16");
        CHECK(cfg.at("pretrain_epochs") == "0");
    }

    TEST_CASE("rerun from a manifest reproduces outputs") {
        testing::TempDir dir("cli_rerun");
        const Result r = run({"pretrain", "--out", (dir / "a").string(), "--synthetic", "--resolution", "32",
                              "--depth-levels", "2", "--base-channels", "4", "--steps", "4", "--batch-size", "4"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const Result again = run({"rerun", (dir / "a" / "manifest.json").string(), "--out", (dir / "b").string()});
        CHECK_MESSAGE(again.code == 0, again.out << again.err);
        CHECK(again.out.find("identical translator.ckpt") != std::string::npos);
        CHECK(again.out.find("identical loss.csv") != std::string::npos);
        CHECK(again.out.find("DIFFERENT") == std::string::npos);
        CHECK(run({"rerun", (dir / "missing.json").string()}).code == 2);
    }

    TEST_CASE("project writes one PNG per view named <stem>_<view>.png") {
        testing::TempDir dir("cli_project");
        write_off(dir / "sphere.off", make_primitive_cloud(Primitive::sphere, 512, 0));
        const Result r = run({"project", "--out", (dir / "out").string(), "--input", (dir / "sphere.off").string(),
                              "--projection-resolution", "32"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        for (const char* v : {"front", "back", "left", "right", "top", "bottom"}) {
            const fs::path png = dir / "out" / (std::string("sphere_") + v + ".png");
            REQUIRE(fs::exists(png));
            CHECK(read_png(png).width == 32);
        }
        CHECK(fs::exists(dir / "out" / "manifest.json"));
        testing::write_text(dir / "cloud.xyz", "0 0 0\n");
        CHECK(run({"project", "--out", (dir / "o2").string(), "--input", (dir / "cloud.xyz").string()}).code == 2);
    }

    TEST_CASE("fewshot: bundle and log; --head interview; --shots 1") {
        testing::TempDir dir("cli_fewshot");
        const Result r = run(cat({"fewshot"}, small(dir / "vp", {"--translator", tiny_translator().string()})));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const TrainedBundle b = load_bundle(dir / "vp" / "adapter.json");
        CHECK(b.head.type == HeadType::viewpoint);
        CHECK(b.log.size() == 11);  // row 0 is the initialization
        CHECK(slurp(dir / "vp" / "training_log.csv").rfind("epoch,loss,train_acc", 0) == 0);

        const Result iv = run(cat({"fewshot"}, small(dir / "iv", {"--no-translate", "--head", "interview"})));
        REQUIRE_MESSAGE(iv.code == 0, iv.err);
        CHECK(load_bundle(dir / "iv" / "adapter.json").head.type == HeadType::interview);
        CHECK(load_bundle(dir / "iv" / "adapter.json").translator_fingerprint == "none");

        const Result one = run(cat({"fewshot"}, small(dir / "one", {"--no-translate", "--shots", "1"})));
        REQUIRE_MESSAGE(one.code == 0, one.err);
        CHECK(read_json(dir / "one" / "manifest.json").at("metrics").at("train_samples") == 3);

        const Result no_ckpt = run(cat({"fewshot"}, small(dir / "x")));
        CHECK(no_ckpt.code == 2);
        CHECK(no_ckpt.err.find("--no-translate") != std::string::npos);
    }

    TEST_CASE("zeroshot report: accuracy in range and probabilities pass") {
        testing::TempDir dir("cli_zeroshot");
        const Result r = run(cat({"zeroshot"}, data(dir.path(), {"--no-translate"})));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto reports = reports_from_json(slurp(dir / "report.json"));
        REQUIRE(reports.size() == 1);
        CHECK(reports[0].accuracy >= 0.0);
        CHECK(reports[0].accuracy <= 100.0);
        CHECK(reports[0].tags.at("probs_check") == "pass");
        CHECK(reports[0].tags.at("head") == "zero_shot");
        CHECK(reports[0].paper_reference_full_scale == 22.74);
    }

    TEST_CASE("eval: missing checkpoint exits 2 naming the path; corrupt checkpoint exits 1") {
        testing::TempDir dir("cli_eval");
        const std::string missing = (dir / "nope" / "adapter.json").string();
        const Result r = run(cat({"eval"}, data(dir / "a", {"--no-translate", "--bundle", missing})));
        CHECK(r.code == 2);
        CHECK(r.err.find(missing) != std::string::npos);
        const Result t = run(cat({"eval"}, data(dir / "b", {"--translator", (dir / "t.ckpt").string(), "--bundle",
                                                             missing})));
        CHECK(t.code == 2);
        testing::write_text(dir / "broken.json", "{ not json");
        const Result broken =
            run(cat({"eval"}, data(dir / "c", {"--no-translate", "--bundle", (dir / "broken.json").string()})));
        CHECK(broken.code == 1);
    }

    TEST_CASE("fewshot then eval agrees with the library") {
        testing::TempDir dir("cli_eval_ok");
        REQUIRE(run(cat({"fewshot"}, small(dir / "fs", {"--no-translate"}))).code == 0);
        const Result r = run(cat({"eval"}, data(dir / "ev", {"--no-translate", "--report-format", "csv", "--bundle",
                                                              (dir / "fs" / "adapter.json").string()})));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(slurp(dir / "ev" / "report.csv").rfind("dataset_id,", 0) == 0);
        const Result other = run(cat({"eval"}, data(dir / "ev2", {"--no-translate", "--feature-dim", "8", "--bundle",
                                                                   (dir / "fs" / "adapter.json").string()})));
        CHECK(other.code == 1);
    }

    TEST_CASE("ablate --mode table5 gives the three adapter-mode rows") {
        testing::TempDir dir("cli_ablate");
        const Result r = run(cat({"ablate", "--mode", "table5"}, small(dir.path(), {"--no-translate"})));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto rows = reports_from_json(slurp(dir / "report.json"));
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].tags.at("mode") == "view_only");
        CHECK(rows[1].tags.at("mode") == "global_only");
        CHECK(rows[2].tags.at("mode") == "both");
        CHECK(run(cat({"ablate", "--mode", "table9"}, small(dir / "x", {"--no-translate"}))).code == 2);
        CHECK(run(cat({"ablate", "--mode", "table4"}, small(dir / "y", {"--no-translate"}))).code == 2);
    }

    TEST_CASE("ablate shots writes a plot and plot redraws it from the report") {
        testing::TempDir dir("cli_shots");
        const Result r = run(cat({"ablate", "--mode", "shots", "--shot-list", "1,2,4"},
                                 small(dir / "a", {"--no-translate"})));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(read_json(dir / "a" / "shot_curve.png.json").at("points").size() == 3);
        const Result p = run({"plot", "--out", (dir / "p").string(), "--report", (dir / "a" / "report.json").string()});
        REQUIRE_MESSAGE(p.code == 0, p.err);
        CHECK(slurp(dir / "p" / "shot_curve.png") == slurp(dir / "a" / "shot_curve.png"));
    }

    TEST_CASE("environment overrides reach the run") {
        testing::TempDir dir("cli_env");
        ::setenv("PCCLIP_EPOCHS", "2", 1);
        const Result r = run(cat({"fewshot"}, std::vector<std::string>{"--out", dir.path().string(), "--no-translate",
                                                                       "--synthetic-per-class", "6", "--shots", "2"}));
        ::unsetenv("PCCLIP_EPOCHS");
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(load_bundle(dir / "adapter.json").log.size() == 3);
    }
}
