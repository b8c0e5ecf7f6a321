#include "pcclip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <thread>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"
#include "pcclip/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcclip {

void Pipeline::validate() const {
    projection.validate();
    if (!encoders.visual || !encoders.text) throw ValidationError("pipeline has no encoder");
    if (encoders.visual->feature_dim() != encoders.text->feature_dim())
        throw ValidationError("visual and text encoders disagree on feature_dim");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
    if (translator) translator->config().check_resolution(encoders.visual->input_resolution());
}

std::string Pipeline::fingerprint() const {
    Fingerprint fp;
    for (View v : projection.views) fp.text(view_name(v));
    fp.value(projection.resolution).value(projection.splat_radius).value(projection.background_value);
    fp.text(translator ? translator->fingerprint() : "none");
    fp.text(encoders.visual ? encoders.visual->identity() : "");
    fp.text(encoders.text ? encoders.text->identity() : "");
    fp.text(prompt.text()).value(temperature);
    return fp.hex();
}

Matrix extract_features(const Pipeline& pipeline, const PointCloud& cloud) {
    const DepthMapSet maps = project_views(cloud, pipeline.projection);
    const int res = pipeline.encoders.visual->input_resolution();
    std::vector<Image> images;
    images.reserve(maps.size());
    for (const Image& depth : maps.maps) {
        Image img = depth_to_encoder_image(depth, res);
        if (pipeline.translator) img = pipeline.translator->forward(img);
        images.push_back(std::move(img));
    }
    return normalize_rows(encode_views(*pipeline.encoders.visual, images));
}

std::vector<Matrix> extract_all(const Pipeline& pipeline, const std::vector<PointCloud>& clouds, int jobs) {
    std::vector<Matrix> out(clouds.size());
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), std::max<std::size_t>(clouds.size(), 1));
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < clouds.size(); ++i) out[i] = extract_features(pipeline, clouds[i]);
        return out;
    }
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < n_threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < clouds.size(); i += n_threads) out[i] = extract_features(pipeline, clouds[i]);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

Matrix text_features(const Pipeline& pipeline, const std::vector<std::string>& class_names) {
    return normalize_rows(encode_prompts(*pipeline.encoders.text, pipeline.prompt, class_names));
}

double cross_entropy(const Vector& probs, int label) {
    if (label < 0 || label >= probs.size())
        throw ValidationError("label " + std::to_string(label) + " out of range for K=" + std::to_string(probs.size()));
    return -std::log(probs(label));
}

HeadType parse_head_type(const std::string& s) {
    if (s == "zero_shot" || s == "zeroshot") return HeadType::zero_shot;
    if (s == "viewpoint") return HeadType::viewpoint;
    if (s == "interview") return HeadType::interview;
    throw ValidationError("unknown head '" + s + "' (expected viewpoint, interview or zero_shot)");
}

std::string head_type_name(HeadType h) {
    switch (h) {
        case HeadType::zero_shot: return "zero_shot";
        case HeadType::viewpoint: return "viewpoint";
        case HeadType::interview: return "interview";
    }
    return "?";
}

AdapterMode parse_adapter_mode(const std::string& s) {
    if (s == "both") return AdapterMode::both;
    if (s == "view_only") return AdapterMode::view_only;
    if (s == "global_only") return AdapterMode::global_only;
    throw ValidationError("unknown adapter mode '" + s + "' (expected both, view_only or global_only)");
}

std::string adapter_mode_name(AdapterMode m) {
    switch (m) {
        case AdapterMode::both: return "both";
        case AdapterMode::view_only: return "view_only";
        case AdapterMode::global_only: return "global_only";
    }
    return "?";
}

Vector AdapterHead::logits(const Matrix& view, const Matrix& text, double temperature) const {
    switch (type) {
        case HeadType::zero_shot: return zero_shot_logits(view, text, alpha, temperature).logits;
        case HeadType::viewpoint: return classify_logits(viewpoint, view, text, temperature);
        case HeadType::interview: return interview_adapter_logits(interview, view, text, interview.alpha, temperature);
    }
    throw InvariantError("bad head type");
}

Vector AdapterHead::probs(const Matrix& view, const Matrix& text, double temperature) const {
    return softmax(logits(view, text, temperature));
}

std::vector<double> AdapterHead::flatten() const {
    switch (type) {
        case HeadType::zero_shot: return {alpha.data(), alpha.data() + alpha.size()};
        case HeadType::viewpoint: return viewpoint.flatten();
        case HeadType::interview: return interview.flatten();
    }
    throw InvariantError("bad head type");
}

namespace {

void unflatten_head(AdapterHead& head, std::span<const double> values) {
    switch (head.type) {
        case HeadType::zero_shot:
            if (values.size() != static_cast<std::size_t>(head.alpha.size()))
                throw ValidationError("zero-shot head: flat parameter size mismatch");
            for (Eigen::Index i = 0; i < head.alpha.size(); ++i) head.alpha(i) = values[static_cast<std::size_t>(i)];
            return;
        case HeadType::viewpoint: head.viewpoint.unflatten(values); return;
        case HeadType::interview: head.interview.unflatten(values); return;
    }
}

// Zeroes and freezes the branch disabled by `mode`.
std::vector<std::uint8_t> apply_mode(AdapterHead& head, AdapterMode mode) {
    std::vector<std::uint8_t> frozen(head.flatten().size(), 0);
    if (mode == AdapterMode::both) return frozen;
    if (head.type != HeadType::viewpoint)
        throw ValidationError("adapter mode " + adapter_mode_name(mode) + " requires the viewpoint head");
    auto& p = head.viewpoint;
    const std::size_t n_local = static_cast<std::size_t>(p.views) * p.dim * p.dim;
    const std::size_t n_global = static_cast<std::size_t>(p.global1.size() + p.global2.size());
    if (mode == AdapterMode::view_only) {
        p.global1.setZero();
        p.global2.setZero();
        std::fill(frozen.begin() + static_cast<std::ptrdiff_t>(n_local),
                  frozen.begin() + static_cast<std::ptrdiff_t>(n_local + n_global), 1);
    } else {
        for (auto& w : p.local) w.setZero();
        std::fill(frozen.begin(), frozen.begin() + static_cast<std::ptrdiff_t>(n_local), 1);
    }
    return frozen;
}

double head_loss_and_grad(const AdapterHead& head, const Matrix& view, const Matrix& text, double temperature,
                          int label, std::vector<double>& grad) {
    if (head.type == HeadType::viewpoint) {
        ViewpointAdapterParams g;
        const double loss = viewpoint_loss_and_grad(head.viewpoint, view, text, temperature, label, g);
        grad = g.flatten();
        return loss;
    }
    if (head.type == HeadType::interview) {
        InterViewAdapterParams g;
        const double loss = interview_loss_and_grad(head.interview, view, text, temperature, label, g);
        grad = g.flatten();
        return loss;
    }
    throw ValidationError("zero-shot head has no trainable parameters");
}

TrainingLogRow episode_stats(const AdapterHead& head, const std::vector<Matrix>& features,
                             const std::vector<int>& labels, const Matrix& text, double temperature, int epoch) {
    TrainingLogRow row;
    row.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const Vector probs = head.probs(features[i], text, temperature);
        row.loss += cross_entropy(probs, labels[i]);
        Eigen::Index arg = 0;
        probs.maxCoeff(&arg);
        if (arg == labels[i]) ++correct;
    }
    row.loss /= static_cast<double>(features.size());
    row.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(features.size());
    return row;
}

}  // namespace

AdapterHead init_head(HeadType type, int views, int dim, const FewShotOptions& options, std::uint64_t seed) {
    AdapterHead head;
    head.type = type;
    const int hidden = options.hidden > 0 ? options.hidden : dim;
    const int global_dim = options.global_dim > 0 ? options.global_dim : dim;
    switch (type) {
        case HeadType::zero_shot: head.alpha = Vector::Constant(views, 1.0 / views); break;
        case HeadType::viewpoint: head.viewpoint = ViewpointAdapterParams::initial(views, dim, hidden, seed); break;
        case HeadType::interview:
            head.interview = InterViewAdapterParams::initial(views, dim, hidden, global_dim, seed);
            break;
    }
    return head;
}

void stamp_pipeline(TrainedBundle& b, const Pipeline& pipeline) {
    b.prompt = pipeline.prompt.text();
    b.temperature = pipeline.temperature;
    b.views = pipeline.views();
    b.feature_dim = pipeline.feature_dim();
    b.pipeline_fingerprint = pipeline.fingerprint();
    b.translator_fingerprint = pipeline.translator ? pipeline.translator->fingerprint() : "none";
    b.visual_identity = pipeline.encoders.visual->identity();
    b.text_identity = pipeline.encoders.text->identity();
}

TrainedBundle zero_shot_bundle(const Pipeline& pipeline, const std::vector<std::string>& class_names) {
    pipeline.validate();
    TrainedBundle b;
    b.head = init_head(HeadType::zero_shot, pipeline.views(), pipeline.feature_dim(), {}, 0);
    b.class_names = class_names;
    b.opt.epochs = 0;
    stamp_pipeline(b, pipeline);
    return b;
}

namespace {

void run_training(TrainedBundle& b, const std::vector<Matrix>& features, const std::vector<int>& labels,
                  const Matrix& text) {
    const OptimizerConfig& opt = b.opt;
    const std::vector<std::uint8_t> frozen = apply_mode(b.head, b.mode);
    std::vector<double> params = b.head.flatten();
    Adam<double> adam(params.size(), opt.algorithm, opt.learning_rate, opt.weight_decay);
    adam.set_frozen(frozen);

    const std::size_t n = features.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), n);
    std::vector<std::size_t> order(n);
    std::vector<double> grad, sum(params.size());

    b.log.clear();
    b.log.push_back(episode_stats(b.head, features, labels, text, b.temperature, 0));
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        if (batch < n) {
            Rng rng(derive_seed(opt.seed, {0x65706f6368, static_cast<std::uint64_t>(epoch)}));
            std::shuffle(order.begin(), order.end(), rng);
        }
        for (std::size_t start = 0, step = 0; start < n; start += batch, ++step) {
            const std::size_t end = std::min(n, start + batch);
            std::fill(sum.begin(), sum.end(), 0.0);
            double loss = 0.0;
            for (std::size_t j = start; j < end; ++j) {
                const std::size_t i = order[j];
                loss += head_loss_and_grad(b.head, features[i], text, b.temperature, labels[i], grad);
                for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += grad[k];
            }
            const double m = static_cast<double>(end - start);
            if (!std::isfinite(loss))
                throw TrainingError("non-finite few-shot loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(step) + " (lr " + std::to_string(opt.learning_rate) +
                                    ", temperature " + std::to_string(b.temperature) + ")");
            for (double& g : sum) g /= m;
            adam.step(std::span<double>(params), std::span<const double>(sum));
            unflatten_head(b.head, params);
        }
        b.log.push_back(episode_stats(b.head, features, labels, text, b.temperature, epoch));
    }
}

}  // namespace

TrainedBundle train_on_features(const std::vector<Matrix>& features, const std::vector<int>& labels,
                                const Matrix& text, const std::vector<std::string>& class_names, double temperature,
                                const FewShotOptions& options) {
    options.opt.validate();
    if (features.empty()) throw ValidationError("few-shot episode is empty");
    if (features.size() != labels.size()) throw ValidationError("feature and label counts differ");
    if (options.head == HeadType::zero_shot) throw ValidationError("zero-shot head cannot be trained");
    if (text.rows() != static_cast<Eigen::Index>(class_names.size()))
        throw ValidationError("text features do not match the class list");

    TrainedBundle b;
    b.class_names = class_names;
    b.temperature = temperature;
    b.opt = options.opt;
    b.mode = options.mode;
    b.views = static_cast<int>(features.front().rows());
    b.feature_dim = static_cast<int>(features.front().cols());
    b.init_seed = derive_seed(options.opt.seed, {0x68656164});
    b.head = init_head(options.head, b.views, b.feature_dim, options, b.init_seed);
    run_training(b, features, labels, text);
    return b;
}

TrainedBundle train_few_shot(const Pipeline& pipeline, const LabeledDataset& episode, const FewShotOptions& options,
                             int jobs) {
    pipeline.validate();
    episode.validate();
    if (episode.clouds.empty()) throw ValidationError("few-shot episode is empty");
    const std::string before = pipeline.fingerprint();

    const std::vector<Matrix> features = extract_all(pipeline, episode.clouds, jobs);
    std::vector<int> labels;
    for (const auto& c : episode.clouds) labels.push_back(*c.label);
    const Matrix text = text_features(pipeline, episode.class_names);

    TrainedBundle b = train_on_features(features, labels, text, episode.class_names, pipeline.temperature, options);
    stamp_pipeline(b, pipeline);

    if (pipeline.fingerprint() != before) throw InvariantError("frozen pipeline changed during few-shot training");
    return b;
}

// ---------------------------------------------------------------- checkpoint

namespace {

json optimizer_json(const OptimizerConfig& o) {
    return {{"algorithm", optimizer_name(o.algorithm)}, {"learning_rate", o.learning_rate},
            {"weight_decay", o.weight_decay},           {"epochs", o.epochs},
            {"batch_size", o.batch_size},               {"seed", o.seed}};
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig o;
    o.algorithm = parse_optimizer(j.at("algorithm").get<std::string>());
    o.learning_rate = j.at("learning_rate").get<double>();
    o.weight_decay = j.at("weight_decay").get<double>();
    o.epochs = j.at("epochs").get<int>();
    o.batch_size = j.at("batch_size").get<int>();
    o.seed = j.at("seed").get<std::uint64_t>();
    return o;
}

}  // namespace

void save_bundle(const fs::path& file, const TrainedBundle& b) {
    json j;
    j["format"] = "pcclip-adapter";
    j["version"] = 1;
    j["head"] = head_type_name(b.head.type);
    j["mode"] = adapter_mode_name(b.mode);
    int hidden = 0, global_dim = 0;
    if (b.head.type == HeadType::viewpoint) hidden = b.head.viewpoint.hidden;
    if (b.head.type == HeadType::interview) {
        hidden = b.head.interview.hidden;
        global_dim = b.head.interview.global_dim;
    }
    j["dims"] = {{"M", b.views},
                 {"C", b.feature_dim},
                 {"C_h", hidden},
                 {"C_g", global_dim},
                 {"K", b.class_names.size()}};
    j["class_names"] = b.class_names;
    j["prompt"] = b.prompt;
    j["temperature"] = b.temperature;
    j["frozen"] = {{"pipeline", b.pipeline_fingerprint},
                   {"translator", b.translator_fingerprint},
                   {"visual_encoder", b.visual_identity},
                   {"text_encoder", b.text_identity}};
    j["optimizer"] = optimizer_json(b.opt);
    j["init_seed"] = b.init_seed;
    json log = json::array();
    for (const auto& r : b.log) log.push_back({r.epoch, r.loss, r.train_acc});
    j["log"] = log;
    j["params"] = b.head.flatten();

    std::ofstream out(file);
    if (!out) throw IoError("cannot write adapter checkpoint " + file.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("failed writing adapter checkpoint " + file.string());
}

TrainedBundle load_bundle(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open adapter checkpoint " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    try {
        if (j.at("format") != "pcclip-adapter") throw ParseError(file.string() + ": not an adapter checkpoint");
        TrainedBundle b;
        const auto& d = j.at("dims");
        b.views = d.at("M").get<int>();
        b.feature_dim = d.at("C").get<int>();
        FewShotOptions shape;
        shape.hidden = d.at("C_h").get<int>();
        shape.global_dim = d.at("C_g").get<int>();
        b.head = init_head(parse_head_type(j.at("head").get<std::string>()), b.views, b.feature_dim, shape, 0);
        b.mode = parse_adapter_mode(j.at("mode").get<std::string>());
        b.class_names = j.at("class_names").get<std::vector<std::string>>();
        if (b.class_names.size() != d.at("K").get<std::size_t>())
            throw ParseError(file.string() + ": class count does not match K");
        b.prompt = j.at("prompt").get<std::string>();
        b.temperature = j.at("temperature").get<double>();
        const auto& fr = j.at("frozen");
        b.pipeline_fingerprint = fr.at("pipeline").get<std::string>();
        b.translator_fingerprint = fr.at("translator").get<std::string>();
        b.visual_identity = fr.at("visual_encoder").get<std::string>();
        b.text_identity = fr.at("text_encoder").get<std::string>();
        b.opt = optimizer_from_json(j.at("optimizer"));
        b.init_seed = j.at("init_seed").get<std::uint64_t>();
        for (const auto& r : j.at("log"))
            b.log.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>()});
        const auto params = j.at("params").get<std::vector<double>>();
        unflatten_head(b.head, params);
        return b;
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
}

void write_training_log(const fs::path& file, const std::vector<TrainingLogRow>& log) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write training log " + file.string());
    out << "epoch,loss,train_acc\n" << std::setprecision(17);
    for (const auto& r : log) out << r.epoch << ',' << r.loss << ',' << r.train_acc << '\n';
}

}  // namespace pcclip
