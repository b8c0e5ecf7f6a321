#include "pcclip/unet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcclip/error.hpp"
#include "pcclip/rng.hpp"

namespace pcclip {

Normalization parse_normalization(const std::string& s) {
    if (s == "none") return Normalization::none;
    if (s == "group") return Normalization::group;
    throw ValidationError("unknown normalization '" + s + "' (expected none or group)");
}

std::string normalization_name(Normalization n) { return n == Normalization::group ? "group" : "none"; }

void TranslatorConfig::validate() const {
    if (depth_levels < 1 || depth_levels > 8) throw ValidationError("translator depth_levels must be in [1,8]");
    if (base_channels < 1) throw ValidationError("translator base_channels must be positive");
    if (input_channels != 1) throw ValidationError("translator input_channels must be 1");
    if (output_channels != 3) throw ValidationError("translator output_channels must be 3");
}

void TranslatorConfig::check_resolution(int resolution) const {
    const int div = 1 << depth_levels;
    if (resolution < div || resolution % div != 0)
        throw ValidationError("resolution " + std::to_string(resolution) + " is not divisible by 2^depth_levels = " +
                              std::to_string(div));
}

namespace {

template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// 3x3, zero padding 1. Rows: ci*9 + ky*3 + kx.
template <typename T>
RowMat<T> im2col3(const FeatureMap<T>& x) {
    const int c = x.channels(), h = x.height, w = x.width;
    RowMat<T> cols = RowMat<T>::Zero(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(h) * w);
    for (int ci = 0; ci < c; ++ci) {
        const T* src = x.data.row(ci).data();
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = cols.row(ci * 9 + ky * 3 + kx).data();
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    const T* srow = src + static_cast<std::ptrdiff_t>(sy) * w + (kx - 1);
                    T* drow = dst + static_cast<std::ptrdiff_t>(y) * w;
                    for (int xx = x0; xx < x1; ++xx) drow[xx] = srow[xx];
                }
            }
    }
    return cols;
}

template <typename T>
void col2im3(const RowMat<T>& cols, int c, int h, int w, RowMat<T>& dx) {
    dx.setZero(c, static_cast<Eigen::Index>(h) * w);
    for (int ci = 0; ci < c; ++ci) {
        T* dst = dx.row(ci).data();
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = cols.row(ci * 9 + ky * 3 + kx).data();
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    T* drow = dst + static_cast<std::ptrdiff_t>(sy) * w + (kx - 1);
                    const T* srow = src + static_cast<std::ptrdiff_t>(y) * w;
                    for (int xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
                }
            }
    }
}

template <typename T>
FeatureMap<T> conv_forward(const typename UNet<T>::Conv& L, std::span<const T> p, const FeatureMap<T>& x) {
    CMap<T> W(p.data() + L.w_off, L.cout, static_cast<Eigen::Index>(L.cin) * L.k * L.k);
    FeatureMap<T> y{x.height, x.width, {}};
    if (L.k == 1) {
        y.data.noalias() = W * x.data;
    } else {
        y.data.noalias() = W * im2col3(x);
    }
    if (L.has_bias) y.data.colwise() += CVec<T>(p.data() + L.b_off, L.cout);
    return y;
}

template <typename T>
void conv_backward(const typename UNet<T>::Conv& L, std::span<const T> p, const FeatureMap<T>& x,
                   const RowMat<T>& dy, std::span<T> g, RowMat<T>* dx) {
    const Eigen::Index kk = static_cast<Eigen::Index>(L.cin) * L.k * L.k;
    CMap<T> W(p.data() + L.w_off, L.cout, kk);
    MMap<T> dW(g.data() + L.w_off, L.cout, kk);
    if (L.has_bias) MVec<T>(g.data() + L.b_off, L.cout) += dy.rowwise().sum();
    if (L.k == 1) {
        dW.noalias() += dy * x.data.transpose();
        if (dx) dx->noalias() = W.transpose() * dy;
    } else {
        const RowMat<T> cols = im2col3(x);
        dW.noalias() += dy * cols.transpose();
        if (dx) {
            const RowMat<T> dcols = W.transpose() * dy;
            col2im3(dcols, L.cin, x.height, x.width, *dx);
        }
    }
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
    x.data = x.data.cwiseMax(T(0));
}

// Zero the gradient where the post-activation output is not positive.
template <typename T>
void relu_backward(const FeatureMap<T>& out, RowMat<T>& d) {
    d = (out.data.array() > T(0)).select(d, T(0));
}

template <typename T>
FeatureMap<T> maxpool(const FeatureMap<T>& x, std::vector<int>& argmax) {
    const int h = x.height / 2, w = x.width / 2, c = x.channels();
    FeatureMap<T> y{h, w, RowMat<T>(c, static_cast<Eigen::Index>(h) * w)};
    argmax.assign(static_cast<std::size_t>(c) * h * w, 0);
    for (int ci = 0; ci < c; ++ci) {
        const T* src = x.data.row(ci).data();
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                int best = (2 * yy) * x.width + 2 * xx;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int idx = (2 * yy + dy) * x.width + 2 * xx + dx;
                        if (src[idx] > src[best]) best = idx;
                    }
                const std::size_t o = static_cast<std::size_t>(yy) * w + xx;
                y.data(ci, static_cast<Eigen::Index>(o)) = src[best];
                argmax[static_cast<std::size_t>(ci) * h * w + o] = best;
            }
    }
    return y;
}

template <typename T>
RowMat<T> maxpool_backward(const RowMat<T>& dy, const std::vector<int>& argmax, int in_h, int in_w) {
    const auto c = dy.rows(), n = dy.cols();
    RowMat<T> dx = RowMat<T>::Zero(c, static_cast<Eigen::Index>(in_h) * in_w);
    for (Eigen::Index ci = 0; ci < c; ++ci)
        for (Eigen::Index o = 0; o < n; ++o) dx(ci, argmax[static_cast<std::size_t>(ci * n + o)]) += dy(ci, o);
    return dx;
}

template <typename T>
FeatureMap<T> upconv_forward(const typename UNet<T>::UpConv& L, std::span<const T> p, const FeatureMap<T>& x) {
    CMap<T> W(p.data() + L.w_off, L.cin, static_cast<Eigen::Index>(L.cout) * 4);
    CVec<T> b(p.data() + L.b_off, L.cout);
    const RowMat<T> y4 = W.transpose() * x.data;  // (cout*4) x (h*w)
    const int h = x.height, w = x.width, oh = 2 * h, ow = 2 * w;
    FeatureMap<T> y{oh, ow, RowMat<T>(L.cout, static_cast<Eigen::Index>(oh) * ow)};
    for (int co = 0; co < L.cout; ++co)
        for (int ky = 0; ky < 2; ++ky)
            for (int kx = 0; kx < 2; ++kx) {
                const T* src = y4.row(co * 4 + ky * 2 + kx).data();
                T* dst = y.data.row(co).data();
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx)
                        dst[(2 * yy + ky) * ow + 2 * xx + kx] = src[yy * w + xx] + b[co];
            }
    return y;
}

template <typename T>
void upconv_backward(const typename UNet<T>::UpConv& L, std::span<const T> p, const FeatureMap<T>& x,
                     const RowMat<T>& dy, std::span<T> g, RowMat<T>& dx) {
    const int h = x.height, w = x.width, ow = 2 * w;
    RowMat<T> dy4(static_cast<Eigen::Index>(L.cout) * 4, static_cast<Eigen::Index>(h) * w);
    for (int co = 0; co < L.cout; ++co)
        for (int ky = 0; ky < 2; ++ky)
            for (int kx = 0; kx < 2; ++kx) {
                const T* src = dy.row(co).data();
                T* dst = dy4.row(co * 4 + ky * 2 + kx).data();
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx) dst[yy * w + xx] = src[(2 * yy + ky) * ow + 2 * xx + kx];
            }
    CMap<T> W(p.data() + L.w_off, L.cin, static_cast<Eigen::Index>(L.cout) * 4);
    MMap<T> dW(g.data() + L.w_off, L.cin, static_cast<Eigen::Index>(L.cout) * 4);
    MVec<T> db(g.data() + L.b_off, L.cout);
    db += dy.rowwise().sum();
    dW.noalias() += x.data * dy4.transpose();
    dx.noalias() = W * dy4;
}

template <typename T>
FeatureMap<T> concat(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    FeatureMap<T> y{a.height, a.width, RowMat<T>(a.channels() + b.channels(), a.data.cols())};
    y.data.topRows(a.channels()) = a.data;
    y.data.bottomRows(b.channels()) = b.data;
    return y;
}

// GroupNorm over (channels-in-group x pixels) of one sample.
template <typename T>
void group_norm_forward(const typename UNet<T>::Norm& N, std::span<const T> p, RowMat<T>& x,
                        typename UNet<T>::BlockCache& bc) {
    constexpr double kEps = 1e-5;
    const int per = N.channels / N.groups;
    const Eigen::Index hw = x.cols();
    bc.inv_std.assign(static_cast<std::size_t>(N.groups), T(0));
    bc.xhat.resize(x.rows(), hw);
    for (int gi = 0; gi < N.groups; ++gi) {
        auto blk = x.middleRows(gi * per, per);
        const double n = static_cast<double>(per) * static_cast<double>(hw);
        const double mean = blk.template cast<double>().sum() / n;
        const double var = (blk.template cast<double>().array() - mean).square().sum() / n;
        const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
        bc.inv_std[static_cast<std::size_t>(gi)] = inv;
        bc.xhat.middleRows(gi * per, per) = ((blk.array() - static_cast<T>(mean)) * inv).matrix();
    }
    for (int c = 0; c < N.channels; ++c)
        x.row(c) = (bc.xhat.row(c).array() * p[N.gamma_off + static_cast<std::size_t>(c)] +
                    p[N.beta_off + static_cast<std::size_t>(c)])
                       .matrix();
}

template <typename T>
void group_norm_backward(const typename UNet<T>::Norm& N, std::span<const T> p,
                         const typename UNet<T>::BlockCache& bc, RowMat<T>& d, std::span<T> g) {
    const int per = N.channels / N.groups;
    const Eigen::Index hw = d.cols();
    for (int c = 0; c < N.channels; ++c) {
        g[N.gamma_off + static_cast<std::size_t>(c)] += (d.row(c).array() * bc.xhat.row(c).array()).sum();
        g[N.beta_off + static_cast<std::size_t>(c)] += d.row(c).sum();
        d.row(c) *= p[N.gamma_off + static_cast<std::size_t>(c)];
    }
    const T n = static_cast<T>(per) * static_cast<T>(hw);
    for (int gi = 0; gi < N.groups; ++gi) {
        auto dx = d.middleRows(gi * per, per);
        auto xh = bc.xhat.middleRows(gi * per, per);
        const T sum_d = dx.sum();
        const T sum_dx = (dx.array() * xh.array()).sum();
        const T inv = bc.inv_std[static_cast<std::size_t>(gi)];
        dx = ((dx.array() * n - sum_d - xh.array() * sum_dx) * (inv / n)).matrix();
    }
}

template <typename T>
FeatureMap<T> block_forward(const typename UNet<T>::Block& B, std::span<const T> p, const FeatureMap<T>& x,
                            typename UNet<T>::BlockCache& bc) {
    FeatureMap<T> y = conv_forward<T>(B.conv, p, x);
    if (B.normalized) group_norm_forward<T>(B.norm, p, y.data, bc);
    relu_inplace(y);
    return y;
}

// `d` holds dLoss/d(block output) on entry.
template <typename T>
void block_backward(const typename UNet<T>::Block& B, std::span<const T> p, const FeatureMap<T>& x,
                    const FeatureMap<T>& out, const typename UNet<T>::BlockCache& bc, RowMat<T>& d, std::span<T> g,
                    RowMat<T>* dx) {
    relu_backward(out, d);
    if (B.normalized) group_norm_backward<T>(B.norm, p, bc, d, g);
    conv_backward<T>(B.conv, p, x, d, g, dx);
}

}  // namespace

template <typename T>
UNet<T>::UNet(TranslatorConfig config) : config_(config) {
    config_.validate();
    std::size_t off = 0;
    const bool norm = config_.normalization == Normalization::group;
    auto conv = [&](int cin, int cout, int k, bool bias) {
        Conv c{cin, cout, k, off, bias, 0};
        off += static_cast<std::size_t>(cin) * cout * k * k;
        if (bias) {
            c.b_off = off;
            off += static_cast<std::size_t>(cout);
        }
        return c;
    };
    auto block = [&](int cin, int cout) {
        Block b;
        b.conv = conv(cin, cout, 3, !norm);
        b.normalized = norm;
        if (norm) {
            b.norm.channels = cout;
            b.norm.groups = std::gcd(cout, 8);
            b.norm.gamma_off = off;
            b.norm.beta_off = off + static_cast<std::size_t>(cout);
            off += 2 * static_cast<std::size_t>(cout);
        }
        return b;
    };
    const int L = config_.depth_levels;
    const int b = config_.base_channels;
    auto width = [&](int level) { return b << level; };

    int cin = config_.input_channels;
    for (int l = 0; l <= L; ++l) {
        const int cout = width(l);
        auto b0 = block(cin, cout);
        auto b1 = block(cout, cout);
        enc_.push_back({b0, b1});
        cin = cout;
    }
    up_.resize(static_cast<std::size_t>(L));
    dec_.resize(static_cast<std::size_t>(L));
    for (int l = L - 1; l >= 0; --l) {
        UpConv u{width(l + 1), width(l), off, 0};
        off += static_cast<std::size_t>(u.cin) * u.cout * 4;
        u.b_off = off;
        off += static_cast<std::size_t>(u.cout);
        up_[static_cast<std::size_t>(l)] = u;
        const int dec_in = config_.skip_connections ? 2 * width(l) : width(l);
        auto b0 = block(dec_in, width(l));
        auto b1 = block(width(l), width(l));
        dec_[static_cast<std::size_t>(l)] = {b0, b1};
    }
    head_ = conv(width(0), config_.output_channels, 1, true);
    param_count_ = off;
}

template <typename T>
std::vector<T> UNet<T>::init_params(std::uint64_t seed) const {
    std::vector<T> p(param_count_, T(0));
    Rng rng(seed);
    auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < n; ++i) p[off + i] = static_cast<T>(u(rng));
    };
    auto fill_conv = [&](const Conv& c) {
        fill(c.w_off, static_cast<std::size_t>(c.cin) * c.cout * c.k * c.k, c.cin * c.k * c.k);
    };
    auto fill_block = [&](const Block& b) {
        fill_conv(b.conv);
        if (b.normalized)
            for (int c = 0; c < b.norm.channels; ++c) p[b.norm.gamma_off + static_cast<std::size_t>(c)] = T(1);
    };
    for (const auto& e : enc_) {
        fill_block(e[0]);
        fill_block(e[1]);
    }
    for (int l = config_.depth_levels - 1; l >= 0; --l) {
        const auto& u = up_[static_cast<std::size_t>(l)];
        fill(u.w_off, static_cast<std::size_t>(u.cin) * u.cout * 4, u.cin);
        fill_block(dec_[static_cast<std::size_t>(l)][0]);
        fill_block(dec_[static_cast<std::size_t>(l)][1]);
    }
    fill_conv(head_);
    return p;
}

template <typename T>
FeatureMap<T> UNet<T>::forward(std::span<const T> p, const FeatureMap<T>& input, Cache* cache) const {
    if (p.size() != param_count_) throw ValidationError("translator parameter count mismatch");
    if (input.channels() != config_.input_channels) throw ValidationError("translator input channel mismatch");
    if (input.height != input.width) throw ValidationError("translator input must be square");
    config_.check_resolution(input.height);

    const int L = config_.depth_levels;
    const auto levels = static_cast<std::size_t>(L);
    Cache local;
    Cache& c = cache ? *cache : local;
    c.enc_in.assign(levels + 1, {});
    c.enc_mid.assign(levels + 1, {});
    c.enc_out.assign(levels + 1, {});
    c.enc_bc.assign(levels + 1, {});
    c.pool_argmax.assign(levels + 1, {});
    c.up_in.assign(levels, {});
    c.dec_in.assign(levels, {});
    c.dec_mid.assign(levels, {});
    c.dec_out.assign(levels, {});
    c.dec_bc.assign(levels, {});

    for (std::size_t li = 0; li <= levels; ++li) {
        c.enc_in[li] = li == 0 ? input : maxpool(c.enc_out[li - 1], c.pool_argmax[li]);
        c.enc_mid[li] = block_forward<T>(enc_[li][0], p, c.enc_in[li], c.enc_bc[li][0]);
        c.enc_out[li] = block_forward<T>(enc_[li][1], p, c.enc_mid[li], c.enc_bc[li][1]);
    }
    FeatureMap<T> y = c.enc_out[levels];
    for (int l = L - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        c.up_in[li] = y;
        FeatureMap<T> u = upconv_forward<T>(up_[li], p, y);
        c.dec_in[li] = config_.skip_connections ? concat(c.enc_out[li], u) : std::move(u);
        c.dec_mid[li] = block_forward<T>(dec_[li][0], p, c.dec_in[li], c.dec_bc[li][0]);
        c.dec_out[li] = block_forward<T>(dec_[li][1], p, c.dec_mid[li], c.dec_bc[li][1]);
        y = c.dec_out[li];
    }
    c.head_in = y;
    FeatureMap<T> out = conv_forward<T>(head_, p, y);
    out.data = (T(1) / (T(1) + (-out.data.array()).exp())).matrix();
    c.output = out;
    return out;
}

template <typename T>
void UNet<T>::backward(std::span<const T> p, const Cache& c, const RowMat<T>& d_output, std::span<T> g) const {
    if (g.size() != param_count_) throw ValidationError("translator gradient size mismatch");
    const int L = config_.depth_levels;
    const auto levels = static_cast<std::size_t>(L);

    RowMat<T> d = (d_output.array() * c.output.data.array() * (T(1) - c.output.data.array())).matrix();
    RowMat<T> dx;
    conv_backward<T>(head_, p, c.head_in, d, g, &dx);
    d = std::move(dx);

    // Gradients reaching enc_out[l] through the skip connections.
    std::vector<RowMat<T>> skip_grad(levels);
    // Decoder levels ran from L-1 down to 0; unwind them in reverse.
    for (std::size_t li = 0; li < levels; ++li) {
        block_backward<T>(dec_[li][1], p, c.dec_mid[li], c.dec_out[li], c.dec_bc[li][1], d, g, &dx);
        d = std::move(dx);
        block_backward<T>(dec_[li][0], p, c.dec_in[li], c.dec_mid[li], c.dec_bc[li][0], d, g, &dx);
        d = std::move(dx);
        RowMat<T> du;
        if (config_.skip_connections) {
            const int skip_c = c.enc_out[li].channels();
            skip_grad[li] = d.topRows(skip_c);
            du = d.bottomRows(d.rows() - skip_c);
        } else {
            du = std::move(d);
        }
        upconv_backward<T>(up_[li], p, c.up_in[li], du, g, dx);
        d = std::move(dx);
    }
    // d is now dLoss/d enc_out[L].
    for (int l = L; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        if (l < L && config_.skip_connections) d += skip_grad[li];
        block_backward<T>(enc_[li][1], p, c.enc_mid[li], c.enc_out[li], c.enc_bc[li][1], d, g, &dx);
        d = std::move(dx);
        const bool need_dx = l > 0;
        block_backward<T>(enc_[li][0], p, c.enc_in[li], c.enc_mid[li], c.enc_bc[li][0], d, g,
                          need_dx ? &dx : nullptr);
        if (need_dx)
            d = maxpool_backward<T>(dx, c.pool_argmax[li], c.enc_out[li - 1].height, c.enc_out[li - 1].width);
    }
}

template class UNet<float>;
template class UNet<double>;

}  // namespace pcclip
