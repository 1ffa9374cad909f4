#include "test_support.h"

#include <cmath>

namespace mmdstyle::testing {

Tensor4 random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor4 t(shape);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

FeatureMatrix random_features(std::size_t channels, std::size_t positions, std::mt19937_64& rng,
                              double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    FeatureMatrix::Matrix m(static_cast<Eigen::Index>(channels),
                            static_cast<Eigen::Index>(positions));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    return FeatureMatrix(std::move(m));
}

ConvParams random_conv(std::size_t out_ch, std::size_t in_ch, std::size_t k, std::size_t stride,
                       std::size_t padding, std::mt19937_64& rng) {
    ConvParams p;
    const double scale = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
    p.kernel = random_tensor({out_ch, in_ch, k, k}, rng, -scale, scale);
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    for (std::size_t i = 0; i < out_ch; ++i) p.bias.push_back(dist(rng));
    p.stride = stride;
    p.padding = padding;
    return p;
}

Tensor4 naive_conv2d(const Tensor4& input, const ConvParams& params) {
    const Shape& in = input.shape();
    const Shape& k = params.kernel.shape();
    const std::size_t oh = (in.height + 2 * params.padding - k.height) / params.stride + 1;
    const std::size_t ow = (in.width + 2 * params.padding - k.width) / params.stride + 1;
    Tensor4 out({in.batch, k.batch, oh, ow});
    for (std::size_t b = 0; b < in.batch; ++b)
        for (std::size_t o = 0; o < k.batch; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = params.bias[o];
                    for (std::size_t c = 0; c < k.channels; ++c)
                        for (std::size_t ky = 0; ky < k.height; ++ky)
                            for (std::size_t kx = 0; kx < k.width; ++kx) {
                                const long iy = static_cast<long>(y * params.stride + ky) -
                                                static_cast<long>(params.padding);
                                const long ix = static_cast<long>(x * params.stride + kx) -
                                                static_cast<long>(params.padding);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.height) ||
                                    ix >= static_cast<long>(in.width))
                                    continue;
                                acc += params.kernel.at(o, c, ky, kx) *
                                       input.at(b, c, static_cast<std::size_t>(iy),
                                                static_cast<std::size_t>(ix));
                            }
                    out.at(b, o, y, x) = acc;
                }
    return out;
}

std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double step) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double up = f(x);
        x[i] = orig - step;
        const double down = f(x);
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

NetworkSpec toy_spec(std::uint64_t seed, PoolMode pooling, std::size_t c1, std::size_t c2) {
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    layers.push_back({"conv1", LayerKind::Conv, random_conv(c1, 3, 3, 1, 1, rng)});
    layers.push_back({"relu1", LayerKind::Relu, std::nullopt});
    layers.push_back({"pool1", LayerKind::Pool, std::nullopt});
    layers.push_back({"conv2", LayerKind::Conv, random_conv(c2, c1, 3, 1, 1, rng)});
    layers.push_back({"relu2", LayerKind::Relu, std::nullopt});
    return NetworkSpec(std::move(layers), pooling);
}

NetworkSpec toy_protocol_spec(std::uint64_t seed, PoolMode pooling) {
    const std::size_t c1 = 4, c2 = 6;
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    layers.push_back({"conv1", LayerKind::Conv, random_conv(c1, 3, 3, 1, 1, rng)});
    layers.push_back({"relu1", LayerKind::Relu, std::nullopt});
    layers.push_back({"pool1", LayerKind::Pool, std::nullopt});
    layers.push_back({"conv2", LayerKind::Conv, random_conv(c2, c1, 3, 1, 1, rng)});
    layers.push_back({"relu2", LayerKind::Relu, std::nullopt});
    layers.push_back({"conv3", LayerKind::Conv, random_conv(c2, c2, 3, 1, 1, rng)});
    layers.push_back({"relu3", LayerKind::Relu, std::nullopt});
    return NetworkSpec(std::move(layers), pooling);
}

Tensor4 toy_content(std::uint64_t seed, std::size_t height, std::size_t width) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.5, 2.0), phase(0.0, 6.283185307179586);
    Tensor4 t({1, 3, height, width});
    for (std::size_t c = 0; c < 3; ++c) {
        const double fy = freq(rng), fx = freq(rng), py = phase(rng), px = phase(rng);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double u = 6.283185307179586 * static_cast<double>(y) / height;
                const double v = 6.283185307179586 * static_cast<double>(x) / width;
                t.at(0, c, y, x) = 60.0 * std::sin(fy * u + py) * std::cos(fx * v + px);
            }
    }
    return t;
}

Tensor4 toy_style(std::uint64_t seed, std::size_t height, std::size_t width) {
    std::mt19937_64 rng(seed ^ 0x5eed);
    std::uniform_real_distribution<double> noise(-30.0, 30.0);
    std::uniform_int_distribution<int> period(2, 4);
    Tensor4 t({1, 3, height, width});
    for (std::size_t c = 0; c < 3; ++c) {
        const int p = period(rng);
        const double level = 40.0 * static_cast<double>(c) - 40.0;
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const bool on = ((x + (c == 1 ? y : 0)) / static_cast<std::size_t>(p)) % 2 == 0;
                t.at(0, c, y, x) = level + (on ? 80.0 : -80.0) + noise(rng);
            }
    }
    return t;
}

TransferConfig toy_config(const FusionSpec& method, double gamma, std::uint64_t seed) {
    TransferConfig config;
    config.content_layer = "relu2";
    config.style_layers = {"relu1", "relu2"};
    config.method = method;
    config.gamma = gamma;
    config.seed = seed;
    return config;
}

TransferConfig toy_protocol_config(const FusionSpec& method, double gamma, std::uint64_t seed) {
    auto config = toy_config(method, gamma, seed);
    config.content_layer = "relu3";
    return config;
}

WeightContainer random_vgg19_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    WeightContainer container;
    for (const auto& conv : vgg19_conv_table()) {
        const double scale = std::sqrt(6.0 / (9.0 * conv.in_channels));
        std::uniform_real_distribution<float> w(static_cast<float>(-scale),
                                                static_cast<float>(scale));
        WeightTensor weight{std::string(conv.name) + ".weight",
                            {conv.out_channels, conv.in_channels, 3, 3},
                            {}};
        weight.data.resize(weight.element_count());
        for (float& v : weight.data) v = w(rng);
        WeightTensor bias{std::string(conv.name) + ".bias", {conv.out_channels}, {}};
        bias.data.assign(conv.out_channels, 0.0f);
        container.add(std::move(weight));
        container.add(std::move(bias));
    }
    return container;
}

}  // namespace mmdstyle::testing
