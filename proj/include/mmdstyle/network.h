#pragma once

#include "mmdstyle/tensor.h"
#include "mmdstyle/weights_io.h"

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace mmdstyle {

enum class LayerKind { Conv, Relu, Pool };

struct Layer {
    std::string name;
    LayerKind kind = LayerKind::Relu;
    std::optional<ConvParams> conv;  // set iff kind == Conv
};

/// An immutable chain of conv/relu/pool layers with weights bound.
class NetworkSpec {
public:
    NetworkSpec(std::vector<Layer> layers, PoolMode pooling);

    const std::vector<Layer>& layers() const { return layers_; }
    PoolMode pooling() const { return pooling_; }

    /// Throws std::out_of_range for an unknown layer name.
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;

    /// Channel count produced by the named layer.
    std::size_t output_channels(std::string_view name) const;

private:
    std::vector<Layer> layers_;
    PoolMode pooling_;
};

struct Vgg19Conv {
    const char* name;
    std::uint32_t in_channels;
    std::uint32_t out_channels;
};

/// The sixteen 3x3 convolutions of VGG-19 in forward order.
std::span<const Vgg19Conv> vgg19_conv_table();

/// Binds `<conv>.weight` (out,in,3,3) and `<conv>.bias` (out) from the
/// container into the canonical VGG-19 chain. Pooling stages are pool1..pool5.
NetworkSpec build_vgg19(const WeightContainer& weights, PoolMode pooling = PoolMode::Max);

/// Captured activations of one forward pass, plus what the backward sweep
/// needs to run from any executed layer down to the image.
class ActivationCache {
public:
    const Tensor4& input() const { return input_; }
    const Tensor4& at(std::string_view layer) const;
    bool contains(std::string_view layer) const;
    std::vector<std::string> captured_names() const;
    std::size_t size() const { return captured_.size(); }

    /// Number of leading layers that were executed.
    std::size_t depth() const { return steps_.size(); }

private:
    friend ActivationCache forward_capture(const NetworkSpec&, const Tensor4&,
                                           const std::set<std::string>&);
    friend Tensor4 backward_to_image(const NetworkSpec&, const ActivationCache&,
                                     const std::map<std::string, Tensor4>&);

    struct Step {
        Shape input_shape;
        Shape output_shape;
        std::optional<Tensor4> output;  // kept for relu gating and captures
        std::optional<PoolArgmax> argmax;
    };

    Tensor4 input_;
    std::vector<Step> steps_;
    std::map<std::string, std::size_t, std::less<>> captured_;
};

using LayerGradients = std::map<std::string, Tensor4>;

/// Runs the chain up to the deepest requested layer.
ActivationCache forward_capture(const NetworkSpec& spec, const Tensor4& image,
                                const std::set<std::string>& capture);

/// Sums the injected per-layer gradients into one backward sweep and returns
/// the gradient with respect to the cached input image.
Tensor4 backward_to_image(const NetworkSpec& spec, const ActivationCache& cache,
                          const LayerGradients& grads);

}  // namespace mmdstyle
