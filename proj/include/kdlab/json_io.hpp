#pragma once

// JSON round-trips for specs and configs (checkpoint headers, experiment
// records). Strict schema validation with unknown-key rejection lives in the
// experiment layer; these converters trust their input.

#include <json.hpp>

#include "kdlab/layers.hpp"

namespace kdlab {

using json = nlohmann::json;

inline json to_json(const LayerSpec& l) {
    json j;
    j["kind"] = to_string(l.kind);
    switch (l.kind) {
        case LayerKind::dense:
            j["in"] = l.in;
            j["out"] = l.out;
            break;
        case LayerKind::conv2d:
            j["c_in"] = l.c_in;
            j["c_out"] = l.c_out;
            j["kh"] = l.kh;
            j["kw"] = l.kw;
            j["stride"] = l.stride;
            j["padding"] = to_string(l.padding);
            break;
        case LayerKind::dropout:
            j["rate"] = l.rate;
            break;
        case LayerKind::batchnorm:
            j["channels"] = l.channels;
            j["eps"] = l.bn_eps;
            j["momentum"] = l.bn_momentum;
            break;
        case LayerKind::output:
            j["classes"] = l.classes;
            break;
        default:
            break;
    }
    return j;
}

inline LayerSpec layer_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") return LayerSpec::Dense(j.at("in"), j.at("out"));
    if (kind == "conv2d") {
        const std::string pad = j.value("padding", "valid");
        if (pad != "valid" && pad != "same")
            throw ConfigError("conv2d padding must be 'valid' or 'same', got '" + pad + "'");
        return LayerSpec::Conv2D(j.at("c_in"), j.at("c_out"), j.at("kh"), j.at("kw"),
                                 j.value("stride", std::size_t(1)),
                                 pad == "same" ? Padding::same : Padding::valid);
    }
    if (kind == "relu") return LayerSpec::ReLU();
    if (kind == "maxpool2") return LayerSpec::MaxPool2();
    if (kind == "flatten") return LayerSpec::Flatten();
    if (kind == "dropout") return LayerSpec::Dropout(j.at("rate"));
    if (kind == "batchnorm")
        return LayerSpec::BatchNorm(j.at("channels"), j.value("eps", 1e-5),
                                    j.value("momentum", 0.9));
    if (kind == "output") return LayerSpec::Output(j.at("classes"));
    throw ConfigError("unknown layer kind '" + kind + "'");
}

inline json to_json(const ModelSpec& s) {
    json j;
    j["input_shape"] = s.input_shape;
    j["layers"] = json::array();
    for (const auto& l : s.layers) j["layers"].push_back(to_json(l));
    return j;
}

inline ModelSpec model_spec_from_json(const json& j) {
    ModelSpec s;
    s.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    for (const auto& lj : j.at("layers")) s.layers.push_back(layer_from_json(lj));
    return s;
}

}  // namespace kdlab
