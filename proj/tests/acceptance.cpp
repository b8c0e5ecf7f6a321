// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any of them fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "../tools/cli.hpp"
#include "oracles.hpp"
#include "pcclip/dataset.hpp"
#include "pcclip/evaluator.hpp"
#include "pcclip/mask_prep.hpp"
#include "pcclip/projection.hpp"
#include "pcclip/rng.hpp"
#include "pcclip/translator.hpp"
#include "pcclip/unet.hpp"

using namespace pcclip;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

struct Cli {
    int code;
    std::string out;
    std::string err;
};

Cli cli_run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& f) {
    std::ifstream in(f);
    return nlohmann::json::parse(in);
}

const fs::path& work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / ("pcclip_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// ---------------------------------------------------------------- 1

Outcome head_oracle() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> M(1, 6), K(1, 5), C(1, 16);
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
        const int m = M(rng), k = K(rng), c = C(rng);
        const Matrix view = oracle::random_unit_rows(m, c, rng), text = oracle::random_unit_rows(k, c, rng);
        const auto params = oracle::random_viewpoint(m, c, c, rng);
        const double tau = 1.0 + t % 4;
        const auto zs = oracle::zero_shot_probs(view, text, params.alpha, tau);
        const auto cl = oracle::classify_probs(params, view, text, tau);
        const Vector zs_ours = zero_shot_logits(view, text, params.alpha, tau).probs;
        const Vector cl_ours = classify(params, view, text, tau);
        for (int j = 0; j < k; ++j) {
            worst = std::max(worst, std::abs(zs_ours(j) - zs[static_cast<std::size_t>(j)]));
            worst = std::max(worst, std::abs(cl_ours(j) - cl[static_cast<std::size_t>(j)]));
        }
    }
    return {worst <= 1e-6, "50 instances, max |diff| " + fmt(worst)};
}

// ---------------------------------------------------------------- 2

double adapter_gradient_error() {
    std::mt19937_64 rng(2);
    double worst = 0;
    for (int t = 0; t < 5; ++t) {
        auto p = oracle::random_viewpoint(3, 4, 4, rng);
        const Matrix view = oracle::random_unit_rows(3, 4, rng), text = oracle::random_unit_rows(3, 4, rng);
        const int label = t % 3;
        ViewpointAdapterParams grad;
        viewpoint_loss_and_grad(p, view, text, 1.0, label, grad);
        const std::vector<double> g = grad.flatten();
        std::vector<double> x = p.flatten();
        auto loss_at = [&](const std::vector<double>& values) {
            auto q = p;
            q.unflatten(values);
            return -std::log(classify(q, view, text, 1.0)(label));
        };
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + 1e-4;
            const double up = loss_at(x);
            x[i] = saved - 1e-4;
            const double down = loss_at(x);
            x[i] = saved;
            worst = std::max(worst, oracle::relative_error(g[i], (up - down) / 2e-4));
        }
    }
    return worst;
}

double translator_gradient_error() {
    TranslatorConfig cfg;
    cfg.depth_levels = 2;
    cfg.base_channels = 2;
    const UNet<double> net(cfg);
    std::vector<double> params = net.init_params(3);
    Rng rng(5);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& v : params) v += jitter(rng);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image in(8, 8, 1), target(8, 8, 3);
    for (auto& v : in.pixels) v = u(rng);
    for (auto& v : target.pixels) v = u(rng);
    const auto input = to_feature_map<double>(in), tgt = to_feature_map<double>(target);
    auto mse = [&](const FeatureMap<double>& out) {
        return (out.data - tgt.data).squaredNorm() / static_cast<double>(out.data.size());
    };
    typename UNet<double>::Cache cache;
    const auto out = net.forward(params, input, &cache);
    std::vector<double> grad(params.size(), 0.0);
    net.backward(params, cache, (out.data - tgt.data) * (2.0 / static_cast<double>(out.data.size())), grad);
    double worst = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + 1e-4;
        const double up = mse(net.forward(params, input));
        params[i] = saved - 1e-4;
        const double down = mse(net.forward(params, input));
        params[i] = saved;
        const double numeric = (up - down) / 2e-4;
        // O(h^2) truncation swamps gradients below 1e-6; those compare absolutely.
        worst = std::max(worst, std::abs(grad[i] - numeric) / std::max(std::abs(grad[i]) + std::abs(numeric), 1e-6));
    }
    return worst;
}

Outcome gradient_checks() {
    const double a = adapter_gradient_error(), t = translator_gradient_error();
    return {a < 1e-4 && t < 1e-4, "adapter worst rel " + fmt(a) + ", translator worst rel " + fmt(t)};
}

// ---------------------------------------------------------------- 3

Outcome residual_identity() {
    std::mt19937_64 rng(3);
    int exact = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
        const int M = 1 + t % 6, C = 2 + t % 15, K = 1 + t % 5;
        const Matrix view = oracle::random_unit_rows(M, C, rng).cwiseAbs();
        const Matrix text = oracle::random_unit_rows(K, C, rng);
        auto p = ViewpointAdapterParams::zeros(M, C, C);
        for (auto& w : p.local) w = Matrix::Identity(C, C);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < M; ++i) p.alpha(i) = u(rng);
        const double tau = 1.0 + t % 3;
        exact += classify_logits(p, view, text, tau) == zero_shot_logits(view, text, p.alpha, tau).logits;
    }
    return {exact == trials, std::to_string(exact) + "/" + std::to_string(trials) + " bit-identical"};
}

// ---------------------------------------------------------------- 4

Outcome noise_statistics() {
    const Image full(64, 64, 1, 1.0f);
    bool exact_ok = true;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        exact_ok &= count_ones(sparsify_mask(full, make_noise_image(64, 64, seed).pixels)) == 2048;
    double lo = 1, hi = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double f =
            static_cast<double>(count_ones(sparsify_mask(full, make_noise_image(64, 64, seed, NoiseMode::bernoulli).pixels))) /
            4096.0;
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    return {exact_ok && lo >= 0.45 && hi <= 0.55,
            std::string("exact half ") + (exact_ok ? "0.5 on all seeds" : "off") + ", bernoulli kept fraction in [" +
                fmt(lo) + ", " + fmt(hi) + "]"};
}

// ---------------------------------------------------------------- 5

Outcome projection_checks() {
    std::vector<std::string> failed;
    PointCloud origin;
    origin.points = {{0, 0, 0}};
    const Image single = render_view(origin, View::front, 4, 0);
    bool ok = true;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) ok &= single.at(y, x) == (y == 2 && x == 2 ? 0.5f : 0.0f);
    if (!ok) failed.push_back("single point");

    PointCloud pair;
    pair.points = {{0.1, 0.1, -0.4}, {0.1, 0.1, 0.6}};
    if (std::abs(render_view(pair, View::front, 8, 0).at(3, 4) - 0.8f) > 1e-6f) failed.push_back("z-buffer");

    PointCloud cube;
    const int n = 8;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                if (i != 0 && i != n - 1 && j != 0 && j != n - 1 && k != 0 && k != n - 1) continue;
                auto at = [](int t) { return -1.0 + 2.0 * t / (n - 1); };
                cube.points.push_back({at(i), at(j), at(k)});
            }
    const Image front = render_view(cube, View::front, 16, 1), back = render_view(cube, View::back, 16, 1);
    ok = true;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ok &= front.at(y, x) == back.at(y, 15 - x);
    if (!ok) failed.push_back("mirror symmetry");

    ProjectionConfig cfg;
    cfg.resolution = 32;
    int invariant = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        PointCloud c;
        for (int i = 0; i < 300; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
        const DepthMapSet a = project_views(c, cfg);
        std::shuffle(c.points.begin(), c.points.end(), rng);
        invariant += project_views(c, cfg) == a;
    }
    if (invariant != 20) failed.push_back("permutation invariance");
    std::string detail = "single point, z-buffer, mirror; permutation invariance " + std::to_string(invariant) + "/20";
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

// ---------------------------------------------------------------- 6

fs::path pretrained_translator;

Outcome pretrain_convergence() {
    const fs::path out = work_dir() / "pretrain";
    const auto t0 = Clock::now();
    const Cli r = cli_run({"pretrain", "--synthetic", "--steps", "500", "--resolution", "32", "--out", out.string()});
    const double secs = seconds_since(t0);
    if (r.code != 0) return {false, "pretrain exited " + std::to_string(r.code) + ": " + r.err};
    const auto m = read_json(out / "manifest.json").at("metrics");
    const double final_loss = m.at("final_loss").get<double>();
    const auto steps = m.at("steps").get<std::size_t>();
    pretrained_translator = out / "translator.ckpt";
    // Same pairs the command trained on, scored with the saved weights.
    const Translator t(load_translator(pretrained_translator));
    const auto pairs = build_pretraining_set(make_synthetic_renders(8, 32, 0), 32, 0);
    std::vector<Image> pred, target;
    for (const auto& p : pairs) {
        pred.push_back(t.forward(p.input));
        target.push_back(p.target);
    }
    const double after = mse_loss(pred, target);
    return {steps == 500 && pairs.size() == 8 && final_loss < 1e-3 && secs < 180.0,
            std::to_string(pairs.size()) + " pairs, " + std::to_string(steps) + " steps, final loss " +
                fmt(final_loss) + " (MSE of saved weights " + fmt(after) + "), " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 7, 8, 10

// The desk-scale fixture: CLI defaults for projection and the toy encoder,
// 40 clouds per class, the translator from criterion 6.
ExperimentConfig desk_fixture() {
    ExperimentConfig c;
    c.pipeline.projection.resolution = 64;
    c.pipeline.projection.splat_radius = 1;
    c.pipeline.encoders = toy_encoder(64, 0, 32);
    if (!pretrained_translator.empty() && fs::exists(pretrained_translator))
        c.pipeline.translator = std::make_shared<const Translator>(load_translator(pretrained_translator));
    c.dataset = make_synthetic_shapes({Primitive::sphere, Primitive::cube, Primitive::plane}, 40, 1024, 0);
    c.shots = 16;
    return c;
}

Outcome few_shot_desk() {
    if (pretrained_translator.empty()) return {false, "no pre-trained translator (criterion 6 did not run)"};
    const auto t0 = Clock::now();
    const auto rows = zero_vs_few_shot(desk_fixture());
    const double secs = seconds_since(t0);
    const double zs = rows[0].accuracy, fs_acc = rows[1].accuracy;
    return {fs_acc >= 90.0 && fs_acc >= zs + 10.0 && secs < 300.0,
            "16-shot " + fmt(fs_acc) + "%, zero-shot " + fmt(zs) + "% on " + std::to_string(rows[1].samples) +
                " residual clouds, " + fmt(secs, 3) + " s"};
}

Outcome ablation_direction() {
    if (pretrained_translator.empty()) return {false, "no pre-trained translator (criterion 6 did not run)"};
    const auto rows = ablate_adapter_modes({AdapterMode::view_only, AdapterMode::global_only, AdapterMode::both},
                                           desk_fixture());
    const double v = rows[0].accuracy, g = rows[1].accuracy, b = rows[2].accuracy;
    const double slack = 2.0;
    bool in_range = true;
    for (const auto& r : rows) in_range &= r.accuracy >= 0.0 && r.accuracy <= 100.0;
    return {in_range && b >= g - slack && g >= v - slack && b >= v - slack,
            "both " + fmt(b) + "%, global_only " + fmt(g) + "%, view_only " + fmt(v) + "% (2pp slack)"};
}

Outcome shot_curve_harness() {
    if (pretrained_translator.empty()) return {false, "no pre-trained translator (criterion 6 did not run)"};
    const std::vector<int> shots{1, 2, 4, 8, 10, 12, 16};
    const auto rows = shot_curve(shots, desk_fixture());
    bool ok = rows.size() == shots.size();
    std::string curve;
    for (std::size_t i = 0; ok && i < rows.size(); ++i) {
        ok &= rows[i].shots == shots[i];
        curve += (i ? ", " : "") + std::to_string(rows[i].shots) + ":" + fmt(rows[i].accuracy, 3);
    }
    ok = ok && rows.back().accuracy >= rows.front().accuracy - 5.0;
    return {ok, std::to_string(rows.size()) + " reports [" + curve + "], 16-shot >= 1-shot - 5pp"};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
    const fs::path root = work_dir() / "determinism";
    fs::create_directories(root);
    write_off(root / "sphere.off", make_primitive_cloud(Primitive::sphere, 512, 0));
    const std::vector<std::string> data{"--synthetic-per-class", "8", "--points", "256", "--shots", "4"};
    auto with = [&](std::vector<std::string> a, const std::vector<std::string>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };
    const std::string ckpt = (root / "pretrain" / "translator.ckpt").string();
    const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
        {"pretrain", {"pretrain", "--synthetic", "--resolution", "32", "--depth-levels", "2", "--base-channels", "4",
                      "--steps", "20", "--batch-size", "4"}},
        {"fewshot", with({"fewshot", "--translator", ckpt, "--epochs", "20"}, data)},
        {"zeroshot", with({"zeroshot", "--translator", ckpt}, data)},
        {"eval", with({"eval", "--translator", ckpt, "--bundle", (root / "fewshot" / "adapter.json").string()}, data)},
        {"project", {"project", "--input", (root / "sphere.off").string()}},
        {"ablate", with({"ablate", "--mode", "table5", "--translator", ckpt, "--epochs", "10"}, data)},
        {"shots", with({"ablate", "--mode", "shots", "--shot-list", "1,2,4", "--no-translate", "--epochs", "10",
                        "--report-format", "csv"},
                       data)},
        {"plot", {"plot", "--report", (root / "ablate" / "report.json").string()}},
    };
    std::vector<std::string> bad;
    std::size_t files = 0;
    for (const auto& [name, args] : runs) {
        const Cli first = cli_run(with(args, {"--out", (root / name).string()}));
        if (first.code != 0) {
            bad.push_back(name + " (exit " + std::to_string(first.code) + ": " + first.err + ")");
            continue;
        }
        const Cli again = cli_run({"rerun", (root / name / "manifest.json").string()});
        const bool same = again.code == 0 && again.out.find("DIFFERENT") == std::string::npos;
        files += static_cast<std::size_t>(std::count(again.out.begin(), again.out.end(), '\n'));
        if (!same) bad.push_back(name);
    }
    std::string detail = std::to_string(runs.size()) + " commands re-run from their manifests, " +
                         std::to_string(files) + " outputs compared";
    for (const auto& b : bad) detail += "; differs: " + b;
    return {bad.empty(), detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"head oracle equivalence", head_oracle},
        {"gradient checks", gradient_checks},
        {"residual identity", residual_identity},
        {"noise-mask statistics", noise_statistics},
        {"projection correctness", projection_checks},
        {"pre-training convergence", pretrain_convergence},
        {"desk-scale few-shot", few_shot_desk},
        {"ablation direction", ablation_direction},
        {"determinism", determinism},
        {"shot-curve harness", shot_curve_harness},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::error_code ec;
    fs::remove_all(work_dir(), ec);
    return failures == 0 ? 0 : 1;
}
