#pragma once

// Layer and model descriptions plus shape composition rules.
//
// A ModelSpec is an ordered layer list ending in Output(classes); the Output
// layer is the final classification Dense layer and the activations feeding
// it are the model's penultimate representation.

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

enum class LayerKind { dense, conv2d, relu, maxpool2, flatten, dropout, batchnorm, output };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2: return "maxpool2";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dropout: return "dropout";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::output: return "output";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0, out = 0;                      // dense
    std::size_t c_in = 0, c_out = 0, kh = 0, kw = 0;  // conv2d
    std::size_t stride = 1;
    Padding padding = Padding::valid;
    double rate = 0.0;        // dropout
    std::size_t channels = 0; // batchnorm
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
    std::size_t classes = 0;  // output

    static LayerSpec Dense(std::size_t in, std::size_t out) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in = in;
        s.out = out;
        return s;
    }
    static LayerSpec Conv2D(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                            std::size_t stride = 1, Padding padding = Padding::valid) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.c_in = c_in;
        s.c_out = c_out;
        s.kh = kh;
        s.kw = kw;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec ReLU() {
        LayerSpec s;
        s.kind = LayerKind::relu;
        return s;
    }
    static LayerSpec MaxPool2() {
        LayerSpec s;
        s.kind = LayerKind::maxpool2;
        return s;
    }
    static LayerSpec Flatten() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }
    static LayerSpec Dropout(double rate) {
        LayerSpec s;
        s.kind = LayerKind::dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9) {
        LayerSpec s;
        s.kind = LayerKind::batchnorm;
        s.channels = channels;
        s.bn_eps = eps;
        s.bn_momentum = momentum;
        return s;
    }
    static LayerSpec Output(std::size_t classes) {
        LayerSpec s;
        s.kind = LayerKind::output;
        s.classes = classes;
        return s;
    }

    void validate() const {
        switch (kind) {
            case LayerKind::dense:
                if (in == 0 || out == 0) throw ConfigError("dense extents must be positive");
                break;
            case LayerKind::conv2d:
                if (c_in == 0 || c_out == 0 || kh == 0 || kw == 0 || stride == 0)
                    throw ConfigError("conv2d extents and stride must be positive");
                break;
            case LayerKind::dropout:
                if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
                break;
            case LayerKind::batchnorm:
                if (channels == 0) throw ConfigError("batchnorm channel count must be positive");
                if (bn_eps <= 0.0) throw ConfigError("batchnorm eps must be > 0");
                break;
            case LayerKind::output:
                if (classes == 0) throw ConfigError("output class count must be positive");
                break;
            default:
                break;
        }
    }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> input_shape;
};

// Per-layer resolved shapes from walking the spec. Throws on any composition
// violation (the spec's "invalid composition" error).
struct ResolvedShapes {
    std::vector<std::vector<std::size_t>> inputs;   // input shape of each layer
    std::vector<std::vector<std::size_t>> outputs;  // output shape of each layer
    std::size_t penultimate_dim = 0;                // flat width entering the Output layer
    std::size_t classes = 0;
};

inline ResolvedShapes resolve_shapes(const ModelSpec& spec) {
    if (spec.layers.empty()) throw ConfigError("model spec has no layers");
    if (spec.input_shape.empty()) throw ConfigError("model spec has no input shape");
    ResolvedShapes rs;
    std::vector<std::size_t> cur = spec.input_shape;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        l.validate();
        if (l.kind == LayerKind::output && li + 1 != spec.layers.size())
            throw ConfigError("output layer must be the final layer");
        rs.inputs.push_back(cur);
        const std::string at = "layer " + std::to_string(li) + " (" + to_string(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::dense:
                if (cur.size() != 1 || cur[0] != l.in)
                    throw ConfigError(at + ": expects flat input of width " + std::to_string(l.in));
                cur = {l.out};
                break;
            case LayerKind::conv2d: {
                if (cur.size() != 3 || cur[0] != l.c_in)
                    throw ConfigError(at + ": expects [c x h x w] input with c = " + std::to_string(l.c_in));
                const std::size_t oh = detail::conv_out_extent(cur[1], l.kh, l.stride, l.padding);
                const std::size_t ow = detail::conv_out_extent(cur[2], l.kw, l.stride, l.padding);
                cur = {l.c_out, oh, ow};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::maxpool2:
                if (cur.size() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0)
                    throw ConfigError(at + ": needs [c x h x w] input with even h, w");
                cur = {cur[0], cur[1] / 2, cur[2] / 2};
                break;
            case LayerKind::flatten:
                cur = {std::accumulate(cur.begin(), cur.end(), std::size_t(1), std::multiplies<>())};
                break;
            case LayerKind::dropout:
                break;
            case LayerKind::batchnorm: {
                const std::size_t ch = cur[0];
                if ((cur.size() != 3 && cur.size() != 1) || ch != l.channels)
                    throw ConfigError(at + ": channel count " + std::to_string(l.channels) +
                                      " does not match input");
                break;
            }
            case LayerKind::output:
                if (cur.size() != 1)
                    throw ConfigError(at + ": needs a flat input (insert Flatten first)");
                rs.penultimate_dim = cur[0];
                rs.classes = l.classes;
                cur = {l.classes};
                break;
        }
        rs.outputs.push_back(cur);
    }
    if (spec.layers.back().kind != LayerKind::output)
        throw ConfigError("model spec must end in an Output layer");
    return rs;
}

// Trainable parameter total: weights + biases, batchnorm scale + shift.
// Running statistics are state, not parameters.
inline std::size_t param_count(const ModelSpec& spec) {
    const ResolvedShapes rs = resolve_shapes(spec);
    std::size_t n = 0;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        switch (l.kind) {
            case LayerKind::dense: n += l.in * l.out + l.out; break;
            case LayerKind::conv2d: n += l.c_out * l.c_in * l.kh * l.kw + l.c_out; break;
            case LayerKind::batchnorm: n += 2 * l.channels; break;
            case LayerKind::output: n += rs.penultimate_dim * l.classes + l.classes; break;
            default: break;
        }
    }
    return n;
}

}  // namespace kdlab
