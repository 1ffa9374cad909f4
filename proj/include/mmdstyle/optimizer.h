#pragma once

#include "mmdstyle/losses.h"
#include "mmdstyle/network.h"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdstyle {

struct AdamSettings {
    double learning_rate = 10.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TransferConfig {
    double alpha = 1.0;
    double gamma = 1.0;
    std::string content_layer = "relu4_2";
    std::vector<std::string> style_layers = {"relu1_1", "relu2_1", "relu3_1", "relu4_1",
                                             "relu5_1"};
    /// One weight per style layer; empty means 1.0 everywhere.
    std::vector<double> layer_weights;
    FusionSpec method{StyleMethod{GramMethod{}}};
    std::size_t max_iters = 1000;
    double rel_tol = 0.005;
    std::uint64_t seed = 0;
    AdamSettings adam;
    /// Noise init draws uniformly from [-init_range, init_range].
    double init_range = 128.0;
    /// Starting image; seeded noise when unset.
    std::optional<Tensor4> init_image;

    void validate() const;
    double layer_weight(std::size_t style_index) const;
    std::set<std::string> capture_layers() const;
};

/// Per-layer target activations of the content and style images.
struct TransferTargets {
    ActivationCache content;
    ActivationCache style;
};

TransferTargets prepare_targets(const NetworkSpec& spec, const Tensor4& content_image,
                                const Tensor4& style_image, const TransferConfig& config);

struct LossEvaluation {
    double total = 0.0;
    double content = 0.0;  // unweighted content loss
    double style = 0.0;    // sum_l w_l L_style^l, before gamma and beta'
    Tensor4 grad;          // d total / d image
};

/// L = alpha L_content + gamma beta' sum_l w_l L_style^l, with the image
/// gradient from one backward sweep. `iteration` seeds sampled estimators.
LossEvaluation total_loss_and_image_grad(const NetworkSpec& spec, const ActivationCache& current,
                                         const TransferTargets& targets,
                                         const TransferConfig& config, double beta_prime,
                                         std::size_t iteration);

LossEvaluation total_loss_and_image_grad(const NetworkSpec& spec, const Tensor4& image,
                                         const TransferTargets& targets,
                                         const TransferConfig& config, double beta_prime,
                                         std::size_t iteration);

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CalibrationResult {
    double beta_prime = 1.0;
    double content_grad_norm = 0.0;
    double style_grad_norm = 0.0;
};

/// Picks beta' so the style gradient at the initial image has the same L2
/// norm as the (alpha-weighted) content gradient.
CalibrationResult calibrate_beta_prime(const NetworkSpec& spec, const Tensor4& init,
                                       const TransferTargets& targets,
                                       const TransferConfig& config);

CalibrationResult calibrate_beta_prime(const NetworkSpec& spec, const Tensor4& init,
                                       const Tensor4& content_image, const Tensor4& style_image,
                                       const TransferConfig& config);

class Adam {
public:
    Adam(const Shape& shape, AdamSettings settings);
    void step(Tensor4& params, const Tensor4& grad);
    std::size_t steps() const { return t_; }

private:
    AdamSettings settings_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

struct TraceRow {
    double total = 0.0;
    double content = 0.0;
    double style = 0.0;
};

struct TransferResult {
    Tensor4 image;
    std::vector<TraceRow> trace;
    CalibrationResult calibration;
};

/// Called after each evaluation with the iteration index and the iterate
/// that produced it.
using IterationCallback = std::function<void(std::size_t, const Tensor4&)>;

/// Seeded-noise init, automatic beta', Adam steps, and the relative-change
/// stopping rule on L_total (10-iteration moving average for sampled methods).
TransferResult run_transfer(const NetworkSpec& spec, const Tensor4& content_image,
                            const Tensor4& style_image, const TransferConfig& config,
                            const IterationCallback& on_iteration = {});

Tensor4 noise_image(const Shape& shape, double range, std::uint64_t seed);

/// `iter,total,content,style`, 17 significant digits.
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace mmdstyle
