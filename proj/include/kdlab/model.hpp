#pragma once

// Model state, Glorot initialization, and exact batched forward/backward for
// every layer kind. Reverse-mode gradients match the scalar loss whose
// logit-gradient the caller supplies; all reductions accumulate in binary64
// with fixed element order, so training trajectories are bit-reproducible.
//
// forward() never mutates the model. BatchNorm batch statistics are returned
// inside the caches; the training loop commits them explicitly via
// commit_batchnorm().

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "kdlab/layers.hpp"
#include "kdlab/rng.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

enum class Mode { train, eval };

template <typename Scalar>
using ParamSet = std::vector<std::vector<BasicTensor<Scalar>>>;

template <typename Scalar>
struct BasicModel {
    ModelSpec spec;
    ResolvedShapes shapes;
    ParamSet<Scalar> params;    // dense/output: {W[in x out], b}; conv: {K, b}; batchnorm: {gamma, beta}
    ParamSet<Scalar> bn_stats;  // batchnorm: {running_mean, running_var}
    Mode mode = Mode::eval;

    template <typename T>
    BasicModel<T> cast() const {
        BasicModel<T> m;
        m.spec = spec;
        m.shapes = shapes;
        m.mode = mode;
        m.params.resize(params.size());
        m.bn_stats.resize(bn_stats.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            for (const auto& t : params[i]) m.params[i].push_back(t.template cast<T>());
        for (std::size_t i = 0; i < bn_stats.size(); ++i)
            for (const auto& t : bn_stats[i]) m.bn_stats[i].push_back(t.template cast<T>());
        return m;
    }
};

using Model = BasicModel<float>;

template <typename Scalar>
struct LayerCache {
    BasicTensor<Scalar> input;           // layer input (dense/conv/relu/output)
    BasicTensor<Scalar> mask;            // dropout keep-mask, already scaled
    std::vector<std::size_t> argmax;     // maxpool winners, flat into the batched input
    std::vector<std::size_t> in_shape;   // shape before flatten/maxpool
    BasicTensor<Scalar> xhat;            // batchnorm normalized input
    std::vector<double> invstd;          // batchnorm 1/sqrt(var + eps), per channel
    std::vector<double> batch_mean, batch_var;
};

template <typename Scalar>
struct ForwardResult {
    BasicTensor<Scalar> logits;       // [B x C]
    BasicTensor<Scalar> penultimate;  // [B x D], input of the Output layer
    std::vector<LayerCache<Scalar>> caches;
    bool train_mode = false;
};

// ---------------------------------------------------------------------------
// initialization

template <typename Scalar = float>
BasicModel<Scalar> init_params(const ModelSpec& spec, SeededRng& rng) {
    BasicModel<Scalar> m;
    m.spec = spec;
    m.shapes = resolve_shapes(spec);
    m.params.resize(spec.layers.size());
    m.bn_stats.resize(spec.layers.size());
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        auto glorot = [&](std::vector<std::size_t> shape, double fan_in, double fan_out) {
            BasicTensor<Scalar> w(std::move(shape));
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (std::size_t i = 0; i < w.size(); ++i)
                w[i] = static_cast<Scalar>((2.0 * rng.uniform01() - 1.0) * limit);
            return w;
        };
        switch (l.kind) {
            case LayerKind::dense:
                m.params[li] = {glorot({l.in, l.out}, double(l.in), double(l.out)),
                                BasicTensor<Scalar>({l.out})};
                break;
            case LayerKind::output: {
                const std::size_t d = m.shapes.inputs[li][0];
                m.params[li] = {glorot({d, l.classes}, double(d), double(l.classes)),
                                BasicTensor<Scalar>({l.classes})};
                break;
            }
            case LayerKind::conv2d:
                m.params[li] = {glorot({l.c_out, l.c_in, l.kh, l.kw}, double(l.c_in * l.kh * l.kw),
                                       double(l.c_out * l.kh * l.kw)),
                                BasicTensor<Scalar>({l.c_out})};
                break;
            case LayerKind::batchnorm:
                m.params[li] = {BasicTensor<Scalar>::full({l.channels}, Scalar(1)),
                                BasicTensor<Scalar>({l.channels})};
                m.bn_stats[li] = {BasicTensor<Scalar>({l.channels}),
                                  BasicTensor<Scalar>::full({l.channels}, Scalar(1))};
                break;
            default:
                break;
        }
    }
    return m;
}

namespace detail {

template <typename Scalar>
BasicTensor<Scalar> transpose2d(const BasicTensor<Scalar>& t) {
    const std::size_t r = t.extent(0), c = t.extent(1);
    BasicTensor<Scalar> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t[i * c + j];
    return out;
}

// y = x * W + b over a batch, bias seeded into the binary64 accumulator.
template <typename Scalar>
BasicTensor<Scalar> affine_forward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w,
                                   const BasicTensor<Scalar>& b) {
    const std::size_t batch = x.extent(0), in = x.extent(1), out = w.extent(1);
    BasicTensor<Scalar> y({batch, out});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
        std::vector<double> acc(out);
        for (std::size_t j = 0; j < out; ++j) acc[j] = static_cast<double>(b[j]);
        const Scalar* xrow = x.data() + static_cast<std::size_t>(bi) * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = static_cast<double>(xrow[k]);
            const Scalar* wrow = w.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) acc[j] += xv * static_cast<double>(wrow[j]);
        }
        Scalar* yrow = y.data() + static_cast<std::size_t>(bi) * out;
        for (std::size_t j = 0; j < out; ++j) yrow[j] = static_cast<Scalar>(acc[j]);
    }
    return y;
}

// Batched convolution; bias seeded into the accumulator.
template <typename Scalar>
BasicTensor<Scalar> conv_forward(const BasicTensor<Scalar>& x, const LayerSpec& l,
                                 const BasicTensor<Scalar>& k, const BasicTensor<Scalar>& b) {
    const std::size_t batch = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t oh = conv_out_extent(h, l.kh, l.stride, l.padding);
    const std::size_t ow = conv_out_extent(w, l.kw, l.stride, l.padding);
    const std::size_t pad_y = conv_pad_low(h, l.kh, l.stride, l.padding);
    const std::size_t pad_x = conv_pad_low(w, l.kw, l.stride, l.padding);
    BasicTensor<Scalar> y({batch, l.c_out, oh, ow});
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
        for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(l.c_out); ++o) {
            std::vector<double> acc(oh * ow, static_cast<double>(b[static_cast<std::size_t>(o)]));
            for (std::size_t ci = 0; ci < cin; ++ci)
                conv_accumulate_plane(acc.data(),
                                      x.data() + (static_cast<std::size_t>(bi) * cin + ci) * h * w,
                                      k.data() + (static_cast<std::size_t>(o) * cin + ci) * l.kh * l.kw,
                                      h, w, oh, ow, l.kh, l.kw, l.stride, pad_y, pad_x);
            Scalar* yp = y.data() + (static_cast<std::size_t>(bi) * l.c_out + static_cast<std::size_t>(o)) * oh * ow;
            for (std::size_t i = 0; i < oh * ow; ++i) yp[i] = static_cast<Scalar>(acc[i]);
        }
    }
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward

template <typename Scalar>
ForwardResult<Scalar> forward(const BasicModel<Scalar>& model, const BasicTensor<Scalar>& batch,
                              SeededRng* dropout_rng = nullptr) {
    const auto& spec = model.spec;
    if (batch.rank() != spec.input_shape.size() + 1)
        throw ShapeError("batch rank does not match model input shape");
    for (std::size_t d = 0; d < spec.input_shape.size(); ++d)
        if (batch.extent(d + 1) != spec.input_shape[d])
            throw ShapeError("batch extent " + std::to_string(d + 1) + " does not match model input shape");
    const std::size_t nb = batch.extent(0);
    const bool train = model.mode == Mode::train;

    ForwardResult<Scalar> res;
    res.train_mode = train;
    res.caches.resize(spec.layers.size());
    BasicTensor<Scalar> cur = batch;

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        LayerCache<Scalar>& cache = res.caches[li];
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::output: {
                cache.input = cur;
                if (l.kind == LayerKind::output) res.penultimate = cur;
                cur = detail::affine_forward(cur, model.params[li][0], model.params[li][1]);
                break;
            }
            case LayerKind::conv2d: {
                cache.input = cur;
                cur = detail::conv_forward(cur, l, model.params[li][0], model.params[li][1]);
                break;
            }
            case LayerKind::relu: {
                cache.input = cur;
                BasicTensor<Scalar> y(cur.shape());
                for (std::size_t i = 0; i < cur.size(); ++i)
                    y[i] = cur[i] > Scalar(0) ? cur[i] : Scalar(0);
                cur = std::move(y);
                break;
            }
            case LayerKind::maxpool2: {
                cache.in_shape = cur.shape();
                const std::size_t c = cur.extent(1), h = cur.extent(2), w = cur.extent(3);
                BasicTensor<Scalar> y({nb, c, h / 2, w / 2});
                cache.argmax.resize(y.size());
                const Scalar* in = cur.data();
                for (std::size_t bi = 0; bi < nb; ++bi) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t plane = (bi * c + ch) * h * w;
                        for (std::size_t oy = 0; oy < h / 2; ++oy) {
                            for (std::size_t ox = 0; ox < w / 2; ++ox) {
                                const std::size_t base = plane + (2 * oy) * w + 2 * ox;
                                const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                                std::size_t best = cand[0];
                                for (int t = 1; t < 4; ++t)
                                    if (in[cand[t]] > in[best]) best = cand[t];
                                const std::size_t oi = ((bi * c + ch) * (h / 2) + oy) * (w / 2) + ox;
                                y[oi] = in[best];
                                cache.argmax[oi] = best;
                            }
                        }
                    }
                }
                cur = std::move(y);
                break;
            }
            case LayerKind::flatten: {
                cache.in_shape = cur.shape();
                cur = cur.reshaped({nb, cur.size() / nb});
                break;
            }
            case LayerKind::dropout: {
                if (!train) break;  // inverted dropout: eval is the identity
                if (!dropout_rng)
                    throw ConfigError("train-mode forward through dropout requires an rng");
                BasicTensor<Scalar> mask(cur.shape());
                const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - l.rate));
                for (std::size_t i = 0; i < mask.size(); ++i)
                    mask[i] = dropout_rng->uniform01() < l.rate ? Scalar(0) : keep_scale;
                BasicTensor<Scalar> y(cur.shape());
                for (std::size_t i = 0; i < cur.size(); ++i) y[i] = cur[i] * mask[i];
                cache.mask = std::move(mask);
                cur = std::move(y);
                break;
            }
            case LayerKind::batchnorm: {
                const std::size_t ch = l.channels;
                const std::size_t spatial = cur.size() / (nb * ch);
                BasicTensor<Scalar> xhat(cur.shape());
                BasicTensor<Scalar> y(cur.shape());
                cache.invstd.resize(ch);
                cache.batch_mean.resize(ch);
                cache.batch_var.resize(ch);
                const Scalar* x = cur.data();
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(ch); ++ci) {
                    const std::size_t c = static_cast<std::size_t>(ci);
                    double mean, var;
                    if (train) {
                        const double n = static_cast<double>(nb * spatial);
                        double s = 0.0;
                        for (std::size_t bi = 0; bi < nb; ++bi) {
                            const Scalar* p = x + (bi * ch + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) s += static_cast<double>(p[i]);
                        }
                        mean = s / n;
                        double sq = 0.0;
                        for (std::size_t bi = 0; bi < nb; ++bi) {
                            const Scalar* p = x + (bi * ch + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) {
                                const double d = static_cast<double>(p[i]) - mean;
                                sq += d * d;
                            }
                        }
                        var = sq / n;  // population variance, also what the running average tracks
                    } else {
                        mean = static_cast<double>(model.bn_stats[li][0][c]);
                        var = static_cast<double>(model.bn_stats[li][1][c]);
                    }
                    const double inv = 1.0 / std::sqrt(var + l.bn_eps);
                    cache.invstd[c] = inv;
                    cache.batch_mean[c] = mean;
                    cache.batch_var[c] = var;
                    const double g = static_cast<double>(model.params[li][0][c]);
                    const double sh = static_cast<double>(model.params[li][1][c]);
                    for (std::size_t bi = 0; bi < nb; ++bi) {
                        const std::size_t off = (bi * ch + c) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                            const double xh = (static_cast<double>(x[off + i]) - mean) * inv;
                            xhat[off + i] = static_cast<Scalar>(xh);
                            y[off + i] = static_cast<Scalar>(g * xh + sh);
                        }
                    }
                }
                cache.xhat = std::move(xhat);
                cur = std::move(y);
                break;
            }
        }
    }
    res.logits = std::move(cur);
    return res;
}

// Fold the batch statistics recorded during a train-mode forward into the
// running estimates: running = momentum * running + (1 - momentum) * batch.
template <typename Scalar>
void commit_batchnorm(BasicModel<Scalar>& model, const ForwardResult<Scalar>& fwd) {
    if (!fwd.train_mode) return;
    for (std::size_t li = 0; li < model.spec.layers.size(); ++li) {
        const LayerSpec& l = model.spec.layers[li];
        if (l.kind != LayerKind::batchnorm) continue;
        const LayerCache<Scalar>& cache = fwd.caches[li];
        for (std::size_t c = 0; c < l.channels; ++c) {
            auto& rm = model.bn_stats[li][0][c];
            auto& rv = model.bn_stats[li][1][c];
            rm = static_cast<Scalar>(l.bn_momentum * static_cast<double>(rm) +
                                     (1.0 - l.bn_momentum) * cache.batch_mean[c]);
            rv = static_cast<Scalar>(l.bn_momentum * static_cast<double>(rv) +
                                     (1.0 - l.bn_momentum) * cache.batch_var[c]);
        }
    }
}

// ---------------------------------------------------------------------------
// backward

template <typename Scalar>
ParamSet<Scalar> zero_gradients(const BasicModel<Scalar>& model) {
    ParamSet<Scalar> g(model.params.size());
    for (std::size_t li = 0; li < model.params.size(); ++li)
        for (const auto& t : model.params[li]) g[li].emplace_back(t.shape());
    return g;
}

template <typename Scalar>
ParamSet<Scalar> backward(const BasicModel<Scalar>& model, const ForwardResult<Scalar>& fwd,
                          const BasicTensor<Scalar>& dlogits) {
    const auto& spec = model.spec;
    if (fwd.caches.size() != spec.layers.size())
        throw ShapeError("forward caches do not match this model");
    if (!dlogits.same_shape(fwd.logits))
        throw ShapeError("dlogits shape does not match forward logits");

    ParamSet<Scalar> grads = zero_gradients(model);
    BasicTensor<Scalar> d = dlogits;
    const std::size_t nb = dlogits.extent(0);

    for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
        const LayerSpec& l = spec.layers[ri];
        const LayerCache<Scalar>& cache = fwd.caches[ri];
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::output: {
                const BasicTensor<Scalar>& x = cache.input;
                const BasicTensor<Scalar>& w = model.params[ri][0];
                grads[ri][0] = matmul(detail::transpose2d(x), d);  // dW, batch-summed
                const std::size_t out = w.extent(1);
                std::vector<double> db(out, 0.0);
                for (std::size_t bi = 0; bi < nb; ++bi)
                    for (std::size_t j = 0; j < out; ++j)
                        db[j] += static_cast<double>(d[bi * out + j]);
                for (std::size_t j = 0; j < out; ++j) grads[ri][1][j] = static_cast<Scalar>(db[j]);
                d = matmul(d, detail::transpose2d(w));
                break;
            }
            case LayerKind::conv2d: {
                const BasicTensor<Scalar>& x = cache.input;
                const BasicTensor<Scalar>& k = model.params[ri][0];
                const std::size_t cin = x.extent(1), h = x.extent(2), w = x.extent(3);
                const std::size_t oh = d.extent(2), ow = d.extent(3);
                const std::size_t pad_y = detail::conv_pad_low(h, l.kh, l.stride, l.padding);
                const std::size_t pad_x = detail::conv_pad_low(w, l.kw, l.stride, l.padding);
                BasicTensor<Scalar>& dk = grads[ri][0];
                BasicTensor<Scalar>& db = grads[ri][1];
                // bias and kernel gradients, parallel over output channels
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t oi = 0; oi < static_cast<std::ptrdiff_t>(l.c_out); ++oi) {
                    const std::size_t o = static_cast<std::size_t>(oi);
                    double bsum = 0.0;
                    std::vector<double> kacc(cin * l.kh * l.kw, 0.0);
                    for (std::size_t bi = 0; bi < nb; ++bi) {
                        const Scalar* dpl = d.data() + (bi * l.c_out + o) * oh * ow;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const double g = static_cast<double>(dpl[oy * ow + ox]);
                                bsum += g;
                                if (g == 0.0) continue;
                                for (std::size_t ci = 0; ci < cin; ++ci) {
                                    const Scalar* ipl = x.data() + (bi * cin + ci) * h * w;
                                    double* ka = kacc.data() + ci * l.kh * l.kw;
                                    for (std::size_t ky = 0; ky < l.kh; ++ky) {
                                        const std::ptrdiff_t iy =
                                            static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                            static_cast<std::ptrdiff_t>(pad_y);
                                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                        for (std::size_t kx = 0; kx < l.kw; ++kx) {
                                            const std::ptrdiff_t ix =
                                                static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                                static_cast<std::ptrdiff_t>(pad_x);
                                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                            ka[ky * l.kw + kx] +=
                                                g * static_cast<double>(ipl[iy * w + ix]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    db[o] = static_cast<Scalar>(bsum);
                    for (std::size_t i = 0; i < kacc.size(); ++i)
                        dk[o * cin * l.kh * l.kw + i] = static_cast<Scalar>(kacc[i]);
                }
                // input gradient, parallel over (example, input channel)
                BasicTensor<Scalar> dx({nb, cin, h, w});
#pragma omp parallel for collapse(2) schedule(static)
                for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(nb); ++bi) {
                    for (std::ptrdiff_t cii = 0; cii < static_cast<std::ptrdiff_t>(cin); ++cii) {
                        const std::size_t b = static_cast<std::size_t>(bi);
                        const std::size_t ci = static_cast<std::size_t>(cii);
                        std::vector<double> acc(h * w, 0.0);
                        for (std::size_t o = 0; o < l.c_out; ++o) {
                            const Scalar* kp = k.data() + (o * cin + ci) * l.kh * l.kw;
                            const Scalar* dpl = d.data() + (b * l.c_out + o) * oh * ow;
                            for (std::size_t ky = 0; ky < l.kh; ++ky) {
                                for (std::size_t kx = 0; kx < l.kw; ++kx) {
                                    const double kv = static_cast<double>(kp[ky * l.kw + kx]);
                                    if (kv == 0.0) continue;
                                    for (std::size_t oy = 0; oy < oh; ++oy) {
                                        const std::ptrdiff_t iy =
                                            static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                            static_cast<std::ptrdiff_t>(pad_y);
                                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                        for (std::size_t ox = 0; ox < ow; ++ox) {
                                            const std::ptrdiff_t ix =
                                                static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                                static_cast<std::ptrdiff_t>(pad_x);
                                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                            acc[static_cast<std::size_t>(iy) * w +
                                                static_cast<std::size_t>(ix)] +=
                                                kv * static_cast<double>(dpl[oy * ow + ox]);
                                        }
                                    }
                                }
                            }
                        }
                        Scalar* dxp = dx.data() + (b * cin + ci) * h * w;
                        for (std::size_t i = 0; i < h * w; ++i) dxp[i] = static_cast<Scalar>(acc[i]);
                    }
                }
                d = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                const BasicTensor<Scalar>& x = cache.input;
                BasicTensor<Scalar> dx(d.shape());
                for (std::size_t i = 0; i < d.size(); ++i)
                    dx[i] = x[i] > Scalar(0) ? d[i] : Scalar(0);
                d = std::move(dx);
                break;
            }
            case LayerKind::maxpool2: {
                BasicTensor<Scalar> dx(cache.in_shape);
                for (std::size_t oi = 0; oi < d.size(); ++oi) dx[cache.argmax[oi]] += d[oi];
                d = std::move(dx);
                break;
            }
            case LayerKind::flatten: {
                d = d.reshaped(cache.in_shape);
                break;
            }
            case LayerKind::dropout: {
                if (cache.mask.size() == 0) break;  // eval-mode forward: identity
                BasicTensor<Scalar> dx(d.shape());
                for (std::size_t i = 0; i < d.size(); ++i) dx[i] = d[i] * cache.mask[i];
                d = std::move(dx);
                break;
            }
            case LayerKind::batchnorm: {
                const std::size_t ch = l.channels;
                const std::size_t spatial = d.size() / (nb * ch);
                BasicTensor<Scalar> dx(d.shape());
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t cii = 0; cii < static_cast<std::ptrdiff_t>(ch); ++cii) {
                    const std::size_t c = static_cast<std::size_t>(cii);
                    const double g = static_cast<double>(model.params[ri][0][c]);
                    const double inv = cache.invstd[c];
                    double sum_d = 0.0, sum_dx = 0.0, sum_dg = 0.0;
                    for (std::size_t bi = 0; bi < nb; ++bi) {
                        const std::size_t off = (bi * ch + c) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                            const double dv = static_cast<double>(d[off + i]);
                            const double xh = static_cast<double>(cache.xhat[off + i]);
                            sum_d += dv;
                            sum_dg += dv * xh;
                            sum_dx += dv * g * xh;
                        }
                    }
                    grads[ri][0][c] = static_cast<Scalar>(sum_dg);  // dgamma
                    grads[ri][1][c] = static_cast<Scalar>(sum_d);   // dbeta
                    if (fwd.train_mode) {
                        const double n = static_cast<double>(nb * spatial);
                        const double mean_dh = (sum_d * g) / n;
                        const double mean_dhx = sum_dx / n;
                        for (std::size_t bi = 0; bi < nb; ++bi) {
                            const std::size_t off = (bi * ch + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) {
                                const double dh = static_cast<double>(d[off + i]) * g;
                                const double xh = static_cast<double>(cache.xhat[off + i]);
                                dx[off + i] = static_cast<Scalar>(inv * (dh - mean_dh - xh * mean_dhx));
                            }
                        }
                    } else {
                        for (std::size_t bi = 0; bi < nb; ++bi) {
                            const std::size_t off = (bi * ch + c) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i)
                                dx[off + i] = static_cast<Scalar>(static_cast<double>(d[off + i]) * g * inv);
                        }
                    }
                }
                d = std::move(dx);
                break;
            }
        }
    }
    return grads;
}

}  // namespace kdlab
