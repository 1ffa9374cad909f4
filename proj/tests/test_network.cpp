#include "mmdstyle/network.h"

#include "support/test_support.h"

#include <gtest/gtest.h>

#include <numeric>

using namespace mmdstyle;
using mmdstyle::testing::finite_difference;
using mmdstyle::testing::random_tensor;
using mmdstyle::testing::random_vgg19_weights;
using mmdstyle::testing::relative_error;
using mmdstyle::testing::toy_spec;

namespace {

const WeightContainer& vgg_weights() {
    static const WeightContainer w = random_vgg19_weights(42);
    return w;
}

WeightContainer without(const WeightContainer& src, std::string_view drop) {
    WeightContainer out;
    for (const auto& t : src.entries()) {
        if (t.name != drop) out.add(t);
    }
    return out;
}

double dot(const Tensor4& a, const Tensor4& b) {
    return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), 0.0);
}

std::string build_error(const WeightContainer& w) {
    try {
        build_vgg19(w);
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Vgg19, BuildsCanonicalChain) {
    const auto spec = build_vgg19(vgg_weights());
    EXPECT_EQ(vgg19_conv_table().size(), 16u);
    EXPECT_EQ(spec.layers().size(), 16u + 16u + 5u);
    EXPECT_EQ(spec.output_channels("relu1_1"), 64u);
    EXPECT_EQ(spec.output_channels("relu4_2"), 512u);
    EXPECT_LT(spec.index_of("relu4_2"), spec.index_of("relu5_1"));
    EXPECT_TRUE(spec.contains("pool5"));
    EXPECT_THROW(spec.index_of("relu9_9"), std::out_of_range);
}

TEST(Vgg19, MissingTensorIsNamed) {
    const auto msg = build_error(without(vgg_weights(), "conv3_2.weight"));
    EXPECT_NE(msg.find("conv3_2.weight"), std::string::npos) << msg;
}

TEST(Vgg19, WrongDimsAreNamed) {
    WeightContainer w;
    for (const auto& t : vgg_weights().entries()) {
        if (t.name == "conv1_1.weight") {
            WeightTensor bad{t.name, {64, 4, 3, 3}, std::vector<float>(64 * 4 * 9, 0.0f)};
            w.add(bad);
        } else {
            w.add(t);
        }
    }
    const auto msg = build_error(w);
    EXPECT_NE(msg.find("conv1_1.weight"), std::string::npos) << msg;
}

TEST(Vgg19, CaptureShapesOn64x64) {
    const auto spec = build_vgg19(vgg_weights());
    std::mt19937_64 rng(1);
    const auto img = random_tensor({1, 3, 64, 64}, rng, -100, 100);
    const auto cache = forward_capture(spec, img, {"relu1_1", "relu4_2", "relu5_1"});
    EXPECT_EQ(cache.at("relu1_1").shape(), (Shape{1, 64, 64, 64}));
    EXPECT_EQ(cache.at("relu4_2").shape(), (Shape{1, 512, 8, 8}));
    EXPECT_EQ(cache.at("relu5_1").shape(), (Shape{1, 512, 4, 4}));
    EXPECT_EQ(cache.size(), 3u);
    EXPECT_EQ(cache.depth(), spec.index_of("relu5_1") + 1);
    for (double v : cache.at("relu5_1").data()) EXPECT_GE(v, 0.0);
}

TEST(Forward, EmptyCaptureRunsNothing) {
    const auto spec = toy_spec(1);
    std::mt19937_64 rng(2);
    const auto cache = forward_capture(spec, random_tensor({1, 3, 8, 8}, rng), {});
    EXPECT_EQ(cache.size(), 0u);
    EXPECT_EQ(cache.depth(), 0u);
}

TEST(Forward, UnknownLayerAndBadInput) {
    const auto spec = toy_spec(1);
    std::mt19937_64 rng(3);
    EXPECT_THROW(forward_capture(spec, random_tensor({1, 3, 8, 8}, rng), {"nope"}),
                 std::out_of_range);
    EXPECT_THROW(forward_capture(spec, random_tensor({1, 4, 8, 8}, rng), {"relu2"}), ShapeError);
}

TEST(Forward, Deterministic) {
    const auto spec = toy_spec(5);
    std::mt19937_64 rng(4);
    const auto img = random_tensor({1, 3, 8, 8}, rng);
    const auto a = forward_capture(spec, img, {"relu1", "relu2"});
    const auto b = forward_capture(spec, img, {"relu1", "relu2"});
    EXPECT_EQ(a.at("relu2"), b.at("relu2"));
    EXPECT_EQ(a.at("relu1"), b.at("relu1"));
}

TEST(Backward, NoGradientsGivesZeroImageGradient) {
    const auto spec = toy_spec(6);
    std::mt19937_64 rng(5);
    const auto img = random_tensor({1, 3, 8, 8}, rng);
    const auto cache = forward_capture(spec, img, {"relu2"});
    EXPECT_EQ(backward_to_image(spec, cache, {}), Tensor4(img.shape()));
    LayerGradients zero{{"relu2", Tensor4(cache.at("relu2").shape())}};
    EXPECT_EQ(backward_to_image(spec, cache, zero), Tensor4(img.shape()));
}

TEST(Backward, RejectsUncapturedOrMisshapen) {
    const auto spec = toy_spec(7);
    std::mt19937_64 rng(6);
    const auto cache = forward_capture(spec, random_tensor({1, 3, 8, 8}, rng), {"relu1"});
    EXPECT_THROW(backward_to_image(spec, cache, {{"relu2", Tensor4({1, 6, 4, 4})}}),
                 std::invalid_argument);
    EXPECT_THROW(backward_to_image(spec, cache, {{"relu1", Tensor4({1, 4, 4, 4})}}), ShapeError);
}

TEST(Backward, SingleInjectionMatchesFiniteDifferences) {
    for (auto mode : {PoolMode::Max, PoolMode::Avg}) {
        const auto spec = toy_spec(8, mode);
        std::mt19937_64 rng(7);
        const auto img = random_tensor({1, 3, 8, 8}, rng);
        for (const char* layer : {"relu1", "pool1", "relu2"}) {
            const auto cache = forward_capture(spec, img, {layer});
            const auto v = random_tensor(cache.at(layer).shape(), rng);
            const auto analytic = backward_to_image(spec, cache, {{layer, v}});
            const auto numeric = finite_difference(
                [&](const std::vector<double>& x) {
                    return dot(forward_capture(spec, Tensor4(img.shape(), x), {layer}).at(layer), v);
                },
                {img.data().begin(), img.data().end()});
            EXPECT_LT(relative_error(analytic.data(), numeric), 1e-5) << layer;
        }
    }
}

TEST(Backward, Superposition) {
    const auto spec = toy_spec(9);
    std::mt19937_64 rng(8);
    const auto img = random_tensor({1, 3, 8, 8}, rng);
    const auto cache = forward_capture(spec, img, {"relu1", "relu2"});
    const auto g1 = random_tensor(cache.at("relu1").shape(), rng);
    const auto g2 = random_tensor(cache.at("relu2").shape(), rng);
    const auto both = backward_to_image(spec, cache, {{"relu1", g1}, {"relu2", g2}});
    auto sum = backward_to_image(spec, cache, {{"relu1", g1}});
    sum += backward_to_image(spec, cache, {{"relu2", g2}});
    EXPECT_LT(relative_error(both.data(), sum.data()), 1e-12);
}

TEST(Backward, LinearInInjectedGradient) {
    const auto spec = toy_spec(10);
    std::mt19937_64 rng(9);
    const auto cache = forward_capture(spec, random_tensor({1, 3, 8, 8}, rng), {"relu2"});
    auto g = random_tensor(cache.at("relu2").shape(), rng);
    auto once = backward_to_image(spec, cache, {{"relu2", g}});
    g *= -2.5;
    auto scaled = backward_to_image(spec, cache, {{"relu2", g}});
    once *= -2.5;
    EXPECT_LT(relative_error(scaled.data(), once.data()), 1e-12);
}

TEST(Vgg19, EndToEndGradientOnSmallImage) {
    const auto spec = build_vgg19(vgg_weights());
    std::mt19937_64 rng(10);
    const auto img = random_tensor({1, 3, 32, 32}, rng, -50, 50);
    const auto cache = forward_capture(spec, img, {"relu2_1"});
    const auto v = random_tensor(cache.at("relu2_1").shape(), rng);
    const auto analytic = backward_to_image(spec, cache, {{"relu2_1", v}});
    // spot-check a handful of pixels rather than all 3072
    const auto f = [&](const Tensor4& x) {
        return dot(forward_capture(spec, x, {"relu2_1"}).at("relu2_1"), v);
    };
    std::vector<double> a, n;
    for (std::size_t i : {0u, 17u, 500u, 1023u, 1500u, 2047u, 3000u}) {
        Tensor4 up = img, down = img;
        up[i] += 1e-4;
        down[i] -= 1e-4;
        a.push_back(analytic[i]);
        n.push_back((f(up) - f(down)) / 2e-4);
    }
    EXPECT_LT(relative_error(a, n), 1e-5);
}
