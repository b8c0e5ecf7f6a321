#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcclip/encoder.hpp"

namespace pcclip {

using RowVector = Eigen::RowVectorXd;

Vector softmax(const Vector& logits);

struct ZeroShotOutput {
    Matrix per_view;  // M x K, tau * f_i . t_k
    Vector logits;    // K, sum_i alpha_i per_view[i]
    Vector probs;     // K
};

// view: M x C, text: K x C, both with unit rows.
ZeroShotOutput zero_shot_logits(const Matrix& view, const Matrix& text, const Vector& alpha, double temperature);

// Per-view C x C maps plus a two-layer global branch over the concatenated views.
struct ViewpointAdapterParams {
    int views = 0;
    int dim = 0;
    int hidden = 0;
    std::vector<Matrix> local;  // views x (dim x dim), applied as f_i * W
    Matrix global1;             // hidden x (views*dim)
    Matrix global2;             // dim x hidden
    Vector alpha;               // views

    static ViewpointAdapterParams zeros(int views, int dim, int hidden);
    // W_l = I + N(0, 0.01^2), global weights N(0, 0.01^2), alpha = 1/M.
    static ViewpointAdapterParams initial(int views, int dim, int hidden, std::uint64_t seed);

    std::size_t param_count() const;
    // Order: local[0..M-1] row-major, global1 row-major, global2 row-major, alpha.
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> values);
    friend bool operator==(const ViewpointAdapterParams&, const ViewpointAdapterParams&) = default;
};

struct AdapterOutput {
    Matrix local;      // M x C
    RowVector global;  // 1 x C
};

AdapterOutput viewpoint_adapter_forward(const ViewpointAdapterParams& params, const Matrix& view);

Vector classify_logits(const ViewpointAdapterParams& params, const Matrix& view, const Matrix& text,
                       double temperature);
Vector classify(const ViewpointAdapterParams& params, const Matrix& view, const Matrix& text, double temperature);

// Cross-entropy of classify() against `label`; fills `grad` (same shape as params).
double viewpoint_loss_and_grad(const ViewpointAdapterParams& params, const Matrix& view, const Matrix& text,
                               double temperature, int label, ViewpointAdapterParams& grad);

// Baseline head: global bottleneck over concatenated views, added to every view.
struct InterViewAdapterParams {
    int views = 0;
    int dim = 0;
    int hidden = 0;
    int global_dim = 0;
    Matrix f1;     // hidden x (views*dim)
    Matrix f2;     // global_dim x hidden
    Matrix w;      // dim x global_dim
    Vector alpha;  // views

    static InterViewAdapterParams zeros(int views, int dim, int hidden, int global_dim);
    // All weights N(0, 0.01^2), alpha = 1/M.
    static InterViewAdapterParams initial(int views, int dim, int hidden, int global_dim, std::uint64_t seed);

    std::size_t param_count() const;
    // Order: f1, f2, w (row-major), alpha.
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> values);
    friend bool operator==(const InterViewAdapterParams&, const InterViewAdapterParams&) = default;
};

Vector interview_adapter_logits(const InterViewAdapterParams& params, const Matrix& view, const Matrix& text,
                                const Vector& alpha, double temperature);
Vector interview_adapter_forward(const InterViewAdapterParams& params, const Matrix& view, const Matrix& text,
                                 const Vector& alpha, double temperature);

// Uses params.alpha as the view weights.
double interview_loss_and_grad(const InterViewAdapterParams& params, const Matrix& view, const Matrix& text,
                               double temperature, int label, InterViewAdapterParams& grad);

}  // namespace pcclip
