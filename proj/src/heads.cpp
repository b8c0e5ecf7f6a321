#include "pcclip/heads.hpp"

#include <cmath>

#include "pcclip/error.hpp"
#include "pcclip/rng.hpp"

namespace pcclip {

namespace {

void check_dims(const Matrix& view, const Matrix& text, Eigen::Index alpha_size) {
    if (view.cols() != text.cols())
        throw ValidationError("feature dimension mismatch: views have C=" + std::to_string(view.cols()) +
                              ", text has C=" + std::to_string(text.cols()));
    if (alpha_size != view.rows())
        throw ValidationError("view weight count " + std::to_string(alpha_size) + " does not match M=" +
                              std::to_string(view.rows()));
    if (text.rows() < 1) throw ValidationError("text features are empty");
}

RowVector concat_rows(const Matrix& view) {
    RowVector x(view.size());
    for (Eigen::Index i = 0; i < view.rows(); ++i) x.segment(i * view.cols(), view.cols()) = view.row(i);
    return x;
}

void fill_gaussian(Matrix& m, Rng& rng, double sigma) {
    std::normal_distribution<double> g(0.0, sigma);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = g(rng);
}

// Row-major flatten/unflatten helpers.
void push_matrix(std::vector<double>& out, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
}

void read_matrix(std::span<const double> in, std::size_t& pos, Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[pos++];
}

RowVector relu(const RowVector& v) { return v.cwiseMax(0.0); }

RowVector relu_mask(const RowVector& pre, const RowVector& d) {
    return (pre.array() > 0.0).select(d, 0.0);
}

}  // namespace

Vector softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp();
    return e / e.sum();
}

ZeroShotOutput zero_shot_logits(const Matrix& view, const Matrix& text, const Vector& alpha, double temperature) {
    check_dims(view, text, alpha.size());
    ZeroShotOutput out;
    out.per_view = temperature * view * text.transpose();
    out.logits = out.per_view.transpose() * alpha;
    out.probs = softmax(out.logits);
    return out;
}

// ---------------------------------------------------------------- viewpoint

ViewpointAdapterParams ViewpointAdapterParams::zeros(int views, int dim, int hidden) {
    if (views < 1 || dim < 1 || hidden < 1) throw ValidationError("adapter dimensions must be positive");
    ViewpointAdapterParams p;
    p.views = views;
    p.dim = dim;
    p.hidden = hidden;
    p.local.assign(static_cast<std::size_t>(views), Matrix::Zero(dim, dim));
    p.global1 = Matrix::Zero(hidden, static_cast<Eigen::Index>(views) * dim);
    p.global2 = Matrix::Zero(dim, hidden);
    p.alpha = Vector::Zero(views);
    return p;
}

ViewpointAdapterParams ViewpointAdapterParams::initial(int views, int dim, int hidden, std::uint64_t seed) {
    ViewpointAdapterParams p = zeros(views, dim, hidden);
    Rng rng(seed);
    for (auto& w : p.local) {
        fill_gaussian(w, rng, 0.01);
        w += Matrix::Identity(dim, dim);
    }
    fill_gaussian(p.global1, rng, 0.01);
    fill_gaussian(p.global2, rng, 0.01);
    p.alpha = Vector::Constant(views, 1.0 / views);
    return p;
}

std::size_t ViewpointAdapterParams::param_count() const {
    const auto m = static_cast<std::size_t>(views), c = static_cast<std::size_t>(dim),
               h = static_cast<std::size_t>(hidden);
    return m * c * c + h * m * c + c * h + m;
}

std::vector<double> ViewpointAdapterParams::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& w : local) push_matrix(out, w);
    push_matrix(out, global1);
    push_matrix(out, global2);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) out.push_back(alpha(i));
    return out;
}

void ViewpointAdapterParams::unflatten(std::span<const double> values) {
    if (values.size() != param_count()) throw ValidationError("viewpoint adapter: flat parameter size mismatch");
    std::size_t pos = 0;
    for (auto& w : local) read_matrix(values, pos, w);
    read_matrix(values, pos, global1);
    read_matrix(values, pos, global2);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha(i) = values[pos++];
}

AdapterOutput viewpoint_adapter_forward(const ViewpointAdapterParams& p, const Matrix& view) {
    if (view.rows() != p.views)
        throw ValidationError("viewpoint adapter expects M=" + std::to_string(p.views) + " views, got " +
                              std::to_string(view.rows()));
    if (view.cols() != p.dim)
        throw ValidationError("viewpoint adapter expects C=" + std::to_string(p.dim) + ", got " +
                              std::to_string(view.cols()));
    AdapterOutput out;
    out.local.resize(p.views, p.dim);
    for (int i = 0; i < p.views; ++i)
        out.local.row(i) = relu(view.row(i) * p.local[static_cast<std::size_t>(i)]);
    // No activation after the second global layer.
    out.global = relu(concat_rows(view) * p.global1.transpose()) * p.global2.transpose();
    return out;
}

Vector classify_logits(const ViewpointAdapterParams& p, const Matrix& view, const Matrix& text, double temperature) {
    check_dims(view, text, p.alpha.size());
    const AdapterOutput a = viewpoint_adapter_forward(p, view);
    // Same evaluation order as zero_shot_logits so the residual identity holds exactly.
    const Matrix combined = a.local.rowwise() + a.global;
    const Matrix per_view = temperature * combined * text.transpose();
    return per_view.transpose() * p.alpha;
}

Vector classify(const ViewpointAdapterParams& p, const Matrix& view, const Matrix& text, double temperature) {
    return softmax(classify_logits(p, view, text, temperature));
}

double viewpoint_loss_and_grad(const ViewpointAdapterParams& p, const Matrix& view, const Matrix& text,
                               double temperature, int label, ViewpointAdapterParams& grad) {
    check_dims(view, text, p.alpha.size());
    if (label < 0 || label >= text.rows()) throw ValidationError("label out of range");
    const int M = p.views;
    const RowVector x = concat_rows(view);
    std::vector<RowVector> pre_local(static_cast<std::size_t>(M));
    Matrix local(M, p.dim);
    for (int i = 0; i < M; ++i) {
        pre_local[static_cast<std::size_t>(i)] = view.row(i) * p.local[static_cast<std::size_t>(i)];
        local.row(i) = relu(pre_local[static_cast<std::size_t>(i)]);
    }
    const RowVector pre_hidden = x * p.global1.transpose();
    const RowVector hidden = relu(pre_hidden);
    const RowVector global = hidden * p.global2.transpose();

    Matrix scores(M, text.rows());  // s_i = (l_i + g) T^T
    for (int i = 0; i < M; ++i) scores.row(i) = (local.row(i) + global) * text.transpose();
    const Vector logits = temperature * (scores.transpose() * p.alpha);
    const Vector probs = softmax(logits);
    const double loss = -std::log(probs(label));

    RowVector delta = probs.transpose();
    delta(label) -= 1.0;

    grad = ViewpointAdapterParams::zeros(p.views, p.dim, p.hidden);
    const RowVector dtext = delta * text;  // 1 x C
    for (int i = 0; i < M; ++i) {
        grad.alpha(i) = temperature * delta.dot(scores.row(i));
        const RowVector dpre = relu_mask(pre_local[static_cast<std::size_t>(i)], temperature * p.alpha(i) * dtext);
        grad.local[static_cast<std::size_t>(i)] = view.row(i).transpose() * dpre;
    }
    const RowVector dglobal = temperature * p.alpha.sum() * dtext;
    grad.global2 = dglobal.transpose() * hidden;
    const RowVector dpre_hidden = relu_mask(pre_hidden, dglobal * p.global2);
    grad.global1 = dpre_hidden.transpose() * x;
    return loss;
}

// ---------------------------------------------------------------- inter-view

InterViewAdapterParams InterViewAdapterParams::zeros(int views, int dim, int hidden, int global_dim) {
    if (views < 1 || dim < 1 || hidden < 1 || global_dim < 1)
        throw ValidationError("adapter dimensions must be positive");
    InterViewAdapterParams p;
    p.views = views;
    p.dim = dim;
    p.hidden = hidden;
    p.global_dim = global_dim;
    p.f1 = Matrix::Zero(hidden, static_cast<Eigen::Index>(views) * dim);
    p.f2 = Matrix::Zero(global_dim, hidden);
    p.w = Matrix::Zero(dim, global_dim);
    p.alpha = Vector::Zero(views);
    return p;
}

InterViewAdapterParams InterViewAdapterParams::initial(int views, int dim, int hidden, int global_dim,
                                                       std::uint64_t seed) {
    InterViewAdapterParams p = zeros(views, dim, hidden, global_dim);
    Rng rng(seed);
    fill_gaussian(p.f1, rng, 0.01);
    fill_gaussian(p.f2, rng, 0.01);
    fill_gaussian(p.w, rng, 0.01);
    p.alpha = Vector::Constant(views, 1.0 / views);
    return p;
}

std::size_t InterViewAdapterParams::param_count() const {
    return static_cast<std::size_t>(f1.size() + f2.size() + w.size() + alpha.size());
}

std::vector<double> InterViewAdapterParams::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    push_matrix(out, f1);
    push_matrix(out, f2);
    push_matrix(out, w);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) out.push_back(alpha(i));
    return out;
}

void InterViewAdapterParams::unflatten(std::span<const double> values) {
    if (values.size() != param_count()) throw ValidationError("inter-view adapter: flat parameter size mismatch");
    std::size_t pos = 0;
    read_matrix(values, pos, f1);
    read_matrix(values, pos, f2);
    read_matrix(values, pos, w);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha(i) = values[pos++];
}

namespace {

struct InterViewForward {
    RowVector x, pre_hidden, hidden, g, pre_global, global;
};

InterViewForward interview_features(const InterViewAdapterParams& p, const Matrix& view) {
    if (view.rows() != p.views || view.cols() != p.dim)
        throw ValidationError("inter-view adapter expects " + std::to_string(p.views) + "x" + std::to_string(p.dim) +
                              " view features, got " + std::to_string(view.rows()) + "x" +
                              std::to_string(view.cols()));
    InterViewForward f;
    f.x = concat_rows(view);
    f.pre_hidden = f.x * p.f1.transpose();
    f.hidden = relu(f.pre_hidden);
    f.g = f.hidden * p.f2.transpose();
    f.pre_global = f.g * p.w.transpose();
    f.global = relu(f.pre_global);
    return f;
}

}  // namespace

Vector interview_adapter_logits(const InterViewAdapterParams& p, const Matrix& view, const Matrix& text,
                                const Vector& alpha, double temperature) {
    check_dims(view, text, alpha.size());
    const InterViewForward f = interview_features(p, view);
    Vector logits = Vector::Zero(text.rows());
    for (Eigen::Index i = 0; i < view.rows(); ++i)
        logits += alpha(i) * temperature * (text * (view.row(i) + f.global).transpose());
    return logits;
}

Vector interview_adapter_forward(const InterViewAdapterParams& p, const Matrix& view, const Matrix& text,
                                 const Vector& alpha, double temperature) {
    return softmax(interview_adapter_logits(p, view, text, alpha, temperature));
}

double interview_loss_and_grad(const InterViewAdapterParams& p, const Matrix& view, const Matrix& text,
                               double temperature, int label, InterViewAdapterParams& grad) {
    check_dims(view, text, p.alpha.size());
    if (label < 0 || label >= text.rows()) throw ValidationError("label out of range");
    const InterViewForward f = interview_features(p, view);
    Matrix scores(view.rows(), text.rows());
    for (Eigen::Index i = 0; i < view.rows(); ++i) scores.row(i) = (view.row(i) + f.global) * text.transpose();
    const Vector probs = softmax(temperature * (scores.transpose() * p.alpha));
    const double loss = -std::log(probs(label));

    RowVector delta = probs.transpose();
    delta(label) -= 1.0;
    grad = InterViewAdapterParams::zeros(p.views, p.dim, p.hidden, p.global_dim);
    for (Eigen::Index i = 0; i < view.rows(); ++i) grad.alpha(i) = temperature * delta.dot(scores.row(i));
    const RowVector dglobal = temperature * p.alpha.sum() * (delta * text);
    const RowVector dpre_global = relu_mask(f.pre_global, dglobal);
    grad.w = dpre_global.transpose() * f.g;
    const RowVector dg = dpre_global * p.w;
    grad.f2 = dg.transpose() * f.hidden;
    const RowVector dpre_hidden = relu_mask(f.pre_hidden, dg * p.f2);
    grad.f1 = dpre_hidden.transpose() * f.x;
    return loss;
}

}  // namespace pcclip
