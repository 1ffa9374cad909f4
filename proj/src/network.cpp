#include "mmdstyle/network.h"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace mmdstyle {

namespace {

constexpr std::array<Vgg19Conv, 16> kVgg19 = {{
    {"conv1_1", 3, 64},    {"conv1_2", 64, 64},
    {"conv2_1", 64, 128},  {"conv2_2", 128, 128},
    {"conv3_1", 128, 256}, {"conv3_2", 256, 256}, {"conv3_3", 256, 256}, {"conv3_4", 256, 256},
    {"conv4_1", 256, 512}, {"conv4_2", 512, 512}, {"conv4_3", 512, 512}, {"conv4_4", 512, 512},
    {"conv5_1", 512, 512}, {"conv5_2", 512, 512}, {"conv5_3", 512, 512}, {"conv5_4", 512, 512},
}};

std::string dims_str(const std::vector<std::uint32_t>& dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

const WeightTensor& require_tensor(const WeightContainer& weights, const std::string& name,
                                   const std::vector<std::uint32_t>& dims) {
    const WeightTensor* t = weights.find(name);
    if (t == nullptr) throw std::invalid_argument("weights: missing tensor " + name);
    if (t->dims != dims) {
        throw std::invalid_argument("weights: " + name + " has dims " + dims_str(t->dims) +
                                    ", expected " + dims_str(dims));
    }
    return *t;
}

}  // namespace

NetworkSpec::NetworkSpec(std::vector<Layer> layers, PoolMode pooling)
    : layers_(std::move(layers)), pooling_(pooling) {
    std::set<std::string_view> seen;
    std::size_t channels = 0;
    for (const auto& layer : layers_) {
        if (layer.name.empty()) throw std::invalid_argument("network: empty layer name");
        if (!seen.insert(layer.name).second) {
            throw std::invalid_argument("network: duplicate layer name " + layer.name);
        }
        if ((layer.kind == LayerKind::Conv) != layer.conv.has_value()) {
            throw std::invalid_argument("network: layer " + layer.name +
                                        " must carry conv params iff it is a conv layer");
        }
        if (layer.conv) {
            layer.conv->validate();
            if (channels != 0 && layer.conv->in_channels() != channels) {
                throw std::invalid_argument("network: " + layer.name + " expects " +
                                            std::to_string(layer.conv->in_channels()) +
                                            " input channels, chain provides " +
                                            std::to_string(channels));
            }
            channels = layer.conv->out_channels();
        }
    }
}

std::size_t NetworkSpec::index_of(std::string_view name) const {
    auto it = std::find_if(layers_.begin(), layers_.end(),
                           [&](const Layer& l) { return l.name == name; });
    if (it == layers_.end()) throw std::out_of_range("network: unknown layer " + std::string(name));
    return static_cast<std::size_t>(it - layers_.begin());
}

bool NetworkSpec::contains(std::string_view name) const {
    return std::any_of(layers_.begin(), layers_.end(),
                       [&](const Layer& l) { return l.name == name; });
}

std::size_t NetworkSpec::output_channels(std::string_view name) const {
    const std::size_t idx = index_of(name);
    for (std::size_t i = idx + 1; i-- > 0;) {
        if (layers_[i].conv) return layers_[i].conv->out_channels();
    }
    throw std::invalid_argument("network: layer " + std::string(name) +
                                " precedes every conv; channel count depends on the input");
}

std::span<const Vgg19Conv> vgg19_conv_table() { return kVgg19; }

NetworkSpec build_vgg19(const WeightContainer& weights, PoolMode pooling) {
    std::vector<Layer> layers;
    int pools = 0;
    for (std::size_t i = 0; i < kVgg19.size(); ++i) {
        const auto& c = kVgg19[i];
        const std::string name = c.name;
        const auto& w = require_tensor(weights, name + ".weight",
                                       {c.out_channels, c.in_channels, 3, 3});
        const auto& b = require_tensor(weights, name + ".bias", {c.out_channels});

        ConvParams params;
        params.kernel = Tensor4({c.out_channels, c.in_channels, 3, 3},
                                std::vector<double>(w.data.begin(), w.data.end()));
        params.bias.assign(b.data.begin(), b.data.end());
        params.stride = 1;
        params.padding = 1;
        layers.push_back({name, LayerKind::Conv, std::move(params)});
        layers.push_back({"relu" + name.substr(4), LayerKind::Relu, std::nullopt});

        const bool block_end = i + 1 == kVgg19.size() || kVgg19[i + 1].name[4] != c.name[4];
        if (block_end) {
            layers.push_back({"pool" + std::to_string(++pools), LayerKind::Pool, std::nullopt});
        }
    }
    return NetworkSpec(std::move(layers), pooling);
}

const Tensor4& ActivationCache::at(std::string_view layer) const {
    auto it = captured_.find(layer);
    if (it == captured_.end()) {
        throw std::out_of_range("activation cache: layer " + std::string(layer) + " not captured");
    }
    return *steps_[it->second].output;
}

bool ActivationCache::contains(std::string_view layer) const {
    return captured_.find(layer) != captured_.end();
}

std::vector<std::string> ActivationCache::captured_names() const {
    std::vector<std::string> names;
    for (const auto& [name, idx] : captured_) names.push_back(name);
    return names;
}

ActivationCache forward_capture(const NetworkSpec& spec, const Tensor4& image,
                                const std::set<std::string>& capture) {
    const auto& layers = spec.layers();
    std::size_t depth = 0;
    for (const auto& name : capture) depth = std::max(depth, spec.index_of(name) + 1);

    ActivationCache cache;
    cache.input_ = image;
    cache.steps_.reserve(depth);
    Tensor4 current = image;
    for (std::size_t i = 0; i < depth; ++i) {
        const Layer& layer = layers[i];
        ActivationCache::Step step;
        step.input_shape = current.shape();
        switch (layer.kind) {
            case LayerKind::Conv:
                current = conv2d_forward(current, *layer.conv);
                break;
            case LayerKind::Relu:
                current = relu_forward(current);
                break;
            case LayerKind::Pool: {
                if (current.shape().height < 2 || current.shape().width < 2) {
                    throw ShapeError("forward: image too small, " + layer.name + " receives " +
                                     current.shape().str());
                }
                auto pooled = pool2x2_forward(current, spec.pooling());
                current = std::move(pooled.output);
                step.argmax = std::move(pooled.argmax);
                break;
            }
        }
        step.output_shape = current.shape();
        const bool captured = capture.contains(layer.name);
        if (captured) cache.captured_.emplace(layer.name, i);
        if (captured || layer.kind == LayerKind::Relu) step.output = current;
        cache.steps_.push_back(std::move(step));
    }
    return cache;
}

Tensor4 backward_to_image(const NetworkSpec& spec, const ActivationCache& cache,
                          const LayerGradients& grads) {
    const auto& layers = spec.layers();
    std::size_t depth = 0;
    for (const auto& [name, grad] : grads) {
        if (!cache.contains(name)) {
            throw std::invalid_argument("backward: gradient for non-captured layer " + name);
        }
        const std::size_t idx = spec.index_of(name);
        if (grad.shape() != cache.steps_[idx].output_shape) {
            throw ShapeError("backward: gradient for " + name + " has shape " +
                             grad.shape().str() + ", activation is " +
                             cache.steps_[idx].output_shape.str());
        }
        depth = std::max(depth, idx + 1);
    }
    if (depth == 0) return Tensor4(cache.input().shape());

    Tensor4 stream(cache.steps_[depth - 1].output_shape);
    for (std::size_t i = depth; i-- > 0;) {
        const Layer& layer = layers[i];
        const auto& step = cache.steps_[i];
        if (auto it = grads.find(layer.name); it != grads.end()) stream += it->second;
        switch (layer.kind) {
            case LayerKind::Conv:
                stream = conv2d_backward_input(stream, *layer.conv, step.input_shape);
                break;
            case LayerKind::Relu:
                stream = relu_backward(stream, *step.output);
                break;
            case LayerKind::Pool:
                stream = pool2x2_backward(stream, step.argmax, spec.pooling(), step.input_shape);
                break;
        }
    }
    return stream;
}

}  // namespace mmdstyle
