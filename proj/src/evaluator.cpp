#include "pcclip/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"
#include "pcclip/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcclip {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hash_features(const std::vector<Matrix>& features) {
    Fingerprint fp;
    for (const auto& m : features) fp.values(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
    return fp.hex();
}

std::string hash_indices(const std::vector<std::size_t>& idx) {
    return Fingerprint().values(std::span<const std::size_t>(idx)).hex();
}

std::string hash_optimizer(const FewShotOptions& o) {
    Fingerprint fp;
    fp.text(optimizer_name(o.opt.algorithm)).value(o.opt.learning_rate).value(o.opt.weight_decay);
    fp.value(o.opt.epochs).value(o.opt.batch_size).value(o.opt.seed).value(o.hidden).value(o.global_dim);
    return fp.hex();
}

}  // namespace

EvalReport evaluate_features(const TrainedBundle& bundle, const std::vector<Matrix>& features,
                             const std::vector<int>& labels, const Matrix& text) {
    const auto t0 = Clock::now();
    if (features.size() != labels.size()) throw ValidationError("feature and label counts differ");
    if (text.rows() != static_cast<Eigen::Index>(bundle.class_names.size()))
        throw ValidationError("text features do not match the bundle class list");
    const std::size_t K = bundle.class_names.size();
    EvalReport r;
    r.prompt = bundle.prompt;
    r.class_names = bundle.class_names;
    r.per_class_accuracy.assign(K, 0.0);
    r.per_class_count.assign(K, 0);
    r.samples = features.size();
    r.seed = bundle.opt.seed;
    r.tags["head"] = head_type_name(bundle.head.type);
    r.tags["mode"] = adapter_mode_name(bundle.mode);
    r.tags["translation"] = bundle.translator_fingerprint == "none" ? "off" : "on";
    r.backend_id = bundle.visual_identity;
    std::vector<std::size_t> correct(K, 0);
    std::size_t total_correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= K) throw ValidationError("test label out of range");
        Eigen::Index arg = 0;
        bundle.head.logits(features[i], text, bundle.temperature).maxCoeff(&arg);
        r.labels.push_back(y);
        r.predictions.push_back(static_cast<int>(arg));
        ++r.per_class_count[static_cast<std::size_t>(y)];
        if (arg == y) {
            ++correct[static_cast<std::size_t>(y)];
            ++total_correct;
        }
    }
    for (std::size_t k = 0; k < K; ++k)
        if (r.per_class_count[k] > 0)
            r.per_class_accuracy[k] = 100.0 * static_cast<double>(correct[k]) / static_cast<double>(r.per_class_count[k]);
    r.accuracy = r.samples ? 100.0 * static_cast<double>(total_correct) / static_cast<double>(r.samples) : 0.0;
    r.wall_clock_s = seconds_since(t0);
    return r;
}

EvalReport evaluate(const Pipeline& pipeline, const TrainedBundle& bundle, const LabeledDataset& test, int jobs) {
    const auto t0 = Clock::now();
    pipeline.validate();
    test.validate();
    if (test.class_names != bundle.class_names)
        throw ValidationError("test classes do not match the bundle classes (same names in the same order required)");
    if (pipeline.fingerprint() != bundle.pipeline_fingerprint)
        throw ValidationError("bundle was trained with a different pipeline (fingerprint " +
                              bundle.pipeline_fingerprint + ", current " + pipeline.fingerprint() + ")");
    const auto features = extract_all(pipeline, test.clouds, jobs);
    std::vector<int> labels;
    for (const auto& c : test.clouds) labels.push_back(*c.label);
    EvalReport r = evaluate_features(bundle, features, labels, text_features(pipeline, test.class_names));
    r.hashes["test_set"] = dataset_fingerprint(test);
    r.hashes["view_features"] = hash_features(features);
    r.hashes["translator"] = bundle.translator_fingerprint;
    r.wall_clock_s = seconds_since(t0);
    return r;
}

// ---------------------------------------------------------------- experiments

FeatureCache::FeatureCache(const ExperimentConfig& config, const Pipeline& pipeline) {
    pipeline.validate();
    pool_ = extract_all(pipeline, config.dataset.clouds, config.jobs);
    if (config.test) test_ = extract_all(pipeline, config.test->clouds, config.jobs);
    Fingerprint fp;
    auto add = [&](const std::vector<PointCloud>& clouds) {
        for (const auto& c : clouds) fp.text(depth_maps_fingerprint(project_views(c, pipeline.projection)));
    };
    add(config.dataset.clouds);
    if (config.test) add(config.test->clouds);
    depth_hash_ = fp.hex();
}

namespace {

struct Split {
    Episode episode;
    std::vector<Matrix> train_f;
    std::vector<int> train_y;
    std::vector<Matrix> test_f;
    std::vector<int> test_y;
    std::vector<std::size_t> test_idx;
};

int n_way_of(const ExperimentConfig& c) {
    return c.n_way > 0 ? c.n_way : static_cast<int>(c.dataset.num_classes());
}

Episode episode_for(const ExperimentConfig& c, int shots) {
    return sample_few_shot(c.dataset, {n_way_of(c), shots, c.seed});
}

// Train rows from `episode`, test rows from `reference` (residual or standard split).
Split make_split(const ExperimentConfig& c, const FeatureCache& cache, const Episode& episode,
                 const Episode& reference) {
    Split s;
    s.episode = episode;
    for (std::size_t i = 0; i < episode.train_indices.size(); ++i) {
        s.train_f.push_back(cache.pool()[episode.train_indices[i]]);
        s.train_y.push_back(*episode.train.clouds[i].label);
    }
    if (c.test) {
        const auto& names = episode.train.class_names;
        for (std::size_t i = 0; i < c.test->clouds.size(); ++i) {
            const auto& cloud = c.test->clouds[i];
            const auto& name = c.test->class_names[static_cast<std::size_t>(*cloud.label)];
            const auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) continue;
            s.test_f.push_back(cache.test()[i]);
            s.test_y.push_back(static_cast<int>(it - names.begin()));
            s.test_idx.push_back(i);
        }
    } else {
        for (std::size_t i = 0; i < reference.residual_indices.size(); ++i) {
            s.test_f.push_back(cache.pool()[reference.residual_indices[i]]);
            s.test_y.push_back(*reference.residual.clouds[i].label);
            s.test_idx.push_back(reference.residual_indices[i]);
        }
    }
    if (s.test_f.empty()) throw ValidationError("test set is empty for the chosen episode");
    return s;
}

void annotate(EvalReport& r, const ExperimentConfig& c, const Pipeline& pipeline, const FeatureCache& cache,
              const Split& s, int shots, const FewShotOptions& options) {
    r.dataset_id = c.dataset_id;
    r.backend_id = pipeline.encoders.visual->identity();
    r.prompt = pipeline.prompt.text();
    r.shots = shots;
    r.seed = c.seed;
    r.tags["test"] = c.test ? "standard" : "residual";
    r.hashes["episode"] = hash_indices(s.episode.train_indices);
    r.hashes["test_set"] = hash_indices(s.test_idx);
    r.hashes["depth_maps"] = cache.depth_maps_hash();
    r.hashes["view_features"] = hash_features(s.test_f);
    r.hashes["translator"] = pipeline.translator ? pipeline.translator->fingerprint() : "none";
    r.hashes["visual_encoder"] = pipeline.encoders.visual->identity();
    r.hashes["text_encoder"] = pipeline.encoders.text->identity();
    r.hashes["prompt"] = Fingerprint().text(pipeline.prompt.text()).hex();
    r.hashes["optimizer"] = hash_optimizer(options);
}

EvalReport few_shot_row(const ExperimentConfig& c, const Pipeline& pipeline, const FeatureCache& cache,
                        const Split& s, int shots, const FewShotOptions& options) {
    const auto t0 = Clock::now();
    const Matrix text = text_features(pipeline, s.episode.train.class_names);
    TrainedBundle b =
        train_on_features(s.train_f, s.train_y, text, s.episode.train.class_names, pipeline.temperature, options);
    stamp_pipeline(b, pipeline);
    EvalReport r = evaluate_features(b, s.test_f, s.test_y, text);
    annotate(r, c, pipeline, cache, s, shots, options);
    r.tags["final_train_acc"] = std::to_string(b.log.back().train_acc);
    r.wall_clock_s = seconds_since(t0);
    return r;
}

EvalReport zero_shot_row(const ExperimentConfig& c, const Pipeline& pipeline, const FeatureCache& cache,
                         const Split& s) {
    const auto t0 = Clock::now();
    const Matrix text = text_features(pipeline, s.episode.train.class_names);
    const TrainedBundle b = zero_shot_bundle(pipeline, s.episode.train.class_names);
    EvalReport r = evaluate_features(b, s.test_f, s.test_y, text);
    FewShotOptions none;
    none.head = HeadType::zero_shot;
    annotate(r, c, pipeline, cache, s, 0, none);
    r.tags["mode"] = "none";
    r.wall_clock_s = seconds_since(t0);
    return r;
}

}  // namespace

std::vector<EvalReport> shot_curve(const std::vector<int>& shots, const ExperimentConfig& config) {
    if (shots.empty()) return {};
    for (int k : shots)
        if (k < 1) throw ValidationError("shot counts must be positive, got " + std::to_string(k));
    const int kmax = *std::max_element(shots.begin(), shots.end());
    const Episode reference = episode_for(config, kmax);  // throws when kmax is unsatisfiable
    const FeatureCache cache(config, config.pipeline);
    std::vector<EvalReport> out;
    for (int k : shots) {
        const Split s = make_split(config, cache, episode_for(config, k), reference);
        out.push_back(few_shot_row(config, config.pipeline, cache, s, k, config.few_shot));
    }
    return out;
}

std::vector<EvalReport> zero_vs_few_shot(const ExperimentConfig& config) {
    const Episode ep = episode_for(config, config.shots);
    const FeatureCache cache(config, config.pipeline);
    const Split s = make_split(config, cache, ep, ep);
    std::vector<EvalReport> out{zero_shot_row(config, config.pipeline, cache, s),
                                few_shot_row(config, config.pipeline, cache, s, config.shots, config.few_shot)};
    out[0].paper_reference_full_scale = 22.74;
    out[1].paper_reference_full_scale = 88.93;
    return out;
}

const std::vector<std::string>& standard_prompt_templates() {
    static const std::vector<std::string> t{
        "a photo of a [CLASS].",
        "a point cloud photo of a [CLASS].",
        "point cloud of a [CLASS].",
        "point cloud of a big [CLASS].",
        "point cloud depth map of a [CLASS].",
    };
    return t;
}

std::vector<EvalReport> prompt_ablation(const std::vector<std::string>& templates, const ExperimentConfig& config,
                                        bool include_learnable_tokens_row) {
    std::vector<PromptTemplate> prompts;
    for (const auto& t : templates) prompts.emplace_back(t);
    static const std::map<std::string, double> reference{
        {"a photo of a [CLASS].", 86.63},          {"a point cloud photo of a [CLASS].", 87.33},
        {"point cloud of a [CLASS].", 87.04},      {"point cloud of a big [CLASS].", 88.93},
        {"point cloud depth map of a [CLASS].", 85.15}, {kLearnableTokensRow, 76.27},
    };
    const Episode ep = episode_for(config, config.shots);
    const FeatureCache cache(config, config.pipeline);  // visual features do not depend on the prompt
    const Split s = make_split(config, cache, ep, ep);
    std::vector<EvalReport> out;
    for (const auto& p : prompts) {
        Pipeline pipeline = config.pipeline;
        pipeline.prompt = p;
        EvalReport r = few_shot_row(config, pipeline, cache, s, config.shots, config.few_shot);
        if (auto it = reference.find(p.text()); it != reference.end()) r.paper_reference_full_scale = it->second;
        out.push_back(std::move(r));
    }
    if (include_learnable_tokens_row) {
        EvalReport r;
        r.dataset_id = config.dataset_id;
        r.backend_id = config.pipeline.encoders.visual->identity();
        r.prompt = kLearnableTokensRow;
        r.shots = config.shots;
        r.seed = config.seed;
        r.supported = false;
        r.tags["status"] = "unsupported: prompt tuning is not implemented";
        r.paper_reference_full_scale = reference.at(kLearnableTokensRow);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<EvalReport> ablate_adapter_modes(const std::vector<AdapterMode>& modes, const ExperimentConfig& config) {
    if (modes.empty()) throw ValidationError("adapter-mode ablation needs at least one mode");
    const Episode ep = episode_for(config, config.shots);
    const FeatureCache cache(config, config.pipeline);
    const Split s = make_split(config, cache, ep, ep);
    std::vector<EvalReport> out;
    for (AdapterMode m : modes) {
        FewShotOptions o = config.few_shot;
        o.head = HeadType::viewpoint;
        o.mode = m;
        EvalReport r = few_shot_row(config, config.pipeline, cache, s, config.shots, o);
        r.paper_reference_full_scale = m == AdapterMode::view_only ? 82.34 : m == AdapterMode::global_only ? 87.60 : 88.93;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<EvalReport> ablate_translation(const ExperimentConfig& config) {
    if (!config.pipeline.translator) throw ValidationError("translation ablation needs a translator");
    const Episode ep = episode_for(config, config.shots);
    std::vector<EvalReport> out;
    for (bool on : {true, false}) {
        Pipeline pipeline = config.pipeline;
        if (!on) pipeline.translator.reset();
        const FeatureCache cache(config, pipeline);
        const Split s = make_split(config, cache, ep, ep);
        EvalReport r = few_shot_row(config, pipeline, cache, s, config.shots, config.few_shot);
        r.paper_reference_full_scale = on ? 88.93 : 84.27;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- serialization

ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    throw ValidationError("unknown report format '" + s + "' (expected json or csv)");
}

namespace {

json report_json(const EvalReport& r) {
    json j{{"dataset_id", r.dataset_id},
           {"backend_id", r.backend_id},
           {"prompt", r.prompt},
           {"shots", r.shots},
           {"tags", r.tags},
           {"accuracy", r.accuracy},
           {"class_names", r.class_names},
           {"per_class_accuracy", r.per_class_accuracy},
           {"per_class_count", r.per_class_count},
           {"samples", r.samples},
           {"seed", r.seed},
           {"wall_clock_s", r.wall_clock_s},
           {"labels", r.labels},
           {"predictions", r.predictions},
           {"hashes", r.hashes},
           {"supported", r.supported}};
    j["paper_reference_full_scale"] = r.paper_reference_full_scale ? json(*r.paper_reference_full_scale) : json();
    return j;
}

EvalReport report_from(const json& j) {
    EvalReport r;
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.tags = j.at("tags").get<std::map<std::string, std::string>>();
    r.accuracy = j.at("accuracy").get<double>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.per_class_count = j.at("per_class_count").get<std::vector<std::size_t>>();
    r.samples = j.at("samples").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    r.labels = j.at("labels").get<std::vector<int>>();
    r.predictions = j.at("predictions").get<std::vector<int>>();
    r.hashes = j.at("hashes").get<std::map<std::string, std::string>>();
    r.supported = j.at("supported").get<bool>();
    if (const auto& p = j.at("paper_reference_full_scale"); !p.is_null()) r.paper_reference_full_scale = p.get<double>();
    return r;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

}  // namespace

std::string reports_to_json(const std::vector<EvalReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_json(r));
    return json{{"reports", arr}}.dump(1) + "\n";
}

std::vector<EvalReport> reports_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        std::vector<EvalReport> out;
        for (const auto& j : doc.at("reports")) out.push_back(report_from(j));
        return out;
    } catch (const json::exception& e) {
        throw ParseError(std::string("report JSON: ") + e.what());
    }
}

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
    std::ostringstream out;
    out << "dataset_id,backend_id,prompt,shots,head,mode,translation,accuracy,samples,seed,supported,"
           "paper_reference_full_scale,wall_clock_s\n";
    auto tag = [](const EvalReport& r, const char* k) {
        auto it = r.tags.find(k);
        return it == r.tags.end() ? std::string() : it->second;
    };
    for (const auto& r : reports) {
        out << csv_field(r.dataset_id) << ',' << csv_field(r.backend_id) << ',' << csv_field(r.prompt) << ','
            << r.shots << ',' << tag(r, "head") << ',' << tag(r, "mode") << ',' << tag(r, "translation") << ','
            << num(r.accuracy) << ',' << r.samples << ',' << r.seed << ',' << (r.supported ? 1 : 0) << ',';
        if (r.paper_reference_full_scale) out << num(*r.paper_reference_full_scale);
        out << ',' << num(r.wall_clock_s) << '\n';
    }
    return out.str();
}

namespace {

void put(Image& img, int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
}

void line(Image& img, int x0, int y0, int x1, int y1, float r, float g, float b) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put(img, x0, y0, r, g, b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

std::vector<PlotPoint> plot_shot_curve(const std::vector<EvalReport>& reports, const fs::path& png, int width,
                                       int height) {
    if (reports.empty()) throw ValidationError("nothing to plot");
    if (width < 64 || height < 64) throw ValidationError("plot is too small");
    std::vector<const EvalReport*> sorted;
    for (const auto& r : reports) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->shots < b->shots; });

    const int left = 40, right = 16, top = 16, bottom = 32;
    const int pw = width - left - right, ph = height - top - bottom;
    const double xmax = std::max(16, sorted.back()->shots);
    auto to_px = [&](double s) { return left + static_cast<int>(std::lround(s / xmax * pw)); };
    auto to_py = [&](double acc) { return top + static_cast<int>(std::lround((100.0 - acc) / 100.0 * ph)); };

    Image img(height, width, 3, 1.0f);
    for (int a = 0; a <= 100; a += 20) line(img, left, to_py(a), left + pw, to_py(a), 0.88f, 0.88f, 0.88f);
    line(img, left, top, left, top + ph, 0, 0, 0);
    line(img, left, top + ph, left + pw, top + ph, 0, 0, 0);
    for (int a = 0; a <= 100; a += 20) line(img, left - 4, to_py(a), left, to_py(a), 0, 0, 0);

    std::vector<PlotPoint> pts;
    for (const auto* r : sorted) {
        pts.push_back({static_cast<double>(r->shots), r->accuracy, to_px(r->shots), to_py(r->accuracy)});
        line(img, pts.back().px, top + ph, pts.back().px, top + ph + 4, 0, 0, 0);
    }
    for (std::size_t i = 1; i < pts.size(); ++i)
        line(img, pts[i - 1].px, pts[i - 1].py, pts[i].px, pts[i].py, 0.1f, 0.3f, 0.8f);
    for (const auto& p : pts)
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) put(img, p.px + dx, p.py + dy, 0.8f, 0.1f, 0.1f);
    write_png(png, img);
    return pts;
}

void write_plot(const std::vector<EvalReport>& reports, const fs::path& png) {
    const auto pts = plot_shot_curve(reports, png);
    json m;
    m["x_axis"] = "shots";
    m["y_axis"] = "accuracy (%)";
    m["points"] = json::array();
    for (const auto& p : pts)
        m["points"].push_back({{"shots", p.shots}, {"accuracy", p.accuracy}, {"px", p.px}, {"py", p.py}});
    fs::path mpath = png;
    mpath += ".json";
    std::ofstream out(mpath);
    if (!out) throw IoError("cannot write " + mpath.string());
    out << m.dump(1) << '\n';
}

void emit_report(const std::vector<EvalReport>& reports, ReportFormat format, const fs::path& dir,
                 const std::optional<fs::path>& plot) {
    if (reports.empty()) throw ValidationError("no reports to emit");
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path file = dir / (format == ReportFormat::json ? "report.json" : "report.csv");
    {
        std::ofstream out(file);
        if (!out) throw IoError("cannot write " + file.string());
        out << (format == ReportFormat::json ? reports_to_json(reports) : reports_to_csv(reports));
        if (!out) throw IoError("failed writing " + file.string());
    }
    if (plot) write_plot(reports, plot->is_absolute() ? *plot : dir / *plot);
}

}  // namespace pcclip
