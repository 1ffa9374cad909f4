#include "mmdstyle/optimizer.h"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

namespace mmdstyle {

namespace {

constexpr std::size_t kSampledStopWindow = 10;

struct Gradients {
    double content = 0.0;
    double style = 0.0;
    LayerGradients content_grads;
    LayerGradients style_grads;
};

// Per-layer losses and activation gradients, unscaled by gamma and beta'.
Gradients layer_terms(const NetworkSpec& spec, const ActivationCache& current,
                      const TransferTargets& targets, const TransferConfig& config,
                      std::size_t iteration) {
    Gradients out;
    const Tensor4& content_act = current.at(config.content_layer);
    const auto content = content_loss_and_grad(FeatureMatrix::from_tensor(content_act),
                                               FeatureMatrix::from_tensor(
                                                   targets.content.at(config.content_layer)));
    out.content = content.loss;
    out.content_grads.emplace(config.content_layer,
                              content.grad.to_tensor(content_act.shape().height,
                                                     content_act.shape().width));

    const std::uint64_t iter_seed = mix_seed(config.seed, iteration);
    for (std::size_t l = 0; l < config.style_layers.size(); ++l) {
        const std::string& name = config.style_layers[l];
        const Tensor4& act = current.at(name);
        const auto term =
            fused_style_loss_and_grad(FeatureMatrix::from_tensor(act),
                                      FeatureMatrix::from_tensor(targets.style.at(name)),
                                      config.method, mix_seed(iter_seed, spec.index_of(name)));
        const double w = config.layer_weight(l);
        out.style += w * term.loss;
        Tensor4 g = term.grad.to_tensor(act.shape().height, act.shape().width);
        g *= w;
        out.style_grads.emplace(name, std::move(g));
    }
    return out;
}

void scale_all(LayerGradients& grads, double s) {
    for (auto& [name, g] : grads) g *= s;
}

// Style and content may share a layer; merge into one injection map.
LayerGradients merge(LayerGradients a, const LayerGradients& b) {
    for (const auto& [name, g] : b) {
        if (auto it = a.find(name); it != a.end()) {
            it->second += g;
        } else {
            a.emplace(name, g);
        }
    }
    return a;
}

}  // namespace

void TransferConfig::validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("config: gamma must be > 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("config: alpha must be >= 0");
    if (style_layers.empty()) throw std::invalid_argument("config: at least one style layer");
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
        throw std::invalid_argument("config: rel_tol must lie in (0, 1)");
    }
    if (max_iters == 0) throw std::invalid_argument("config: max_iters must be >= 1");
    if (!layer_weights.empty() && layer_weights.size() != style_layers.size()) {
        throw std::invalid_argument("config: " + std::to_string(layer_weights.size()) +
                                    " layer weights for " + std::to_string(style_layers.size()) +
                                    " style layers");
    }
    for (double w : layer_weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("config: layer weights must be >= 0");
    }
}

double TransferConfig::layer_weight(std::size_t style_index) const {
    return layer_weights.empty() ? 1.0 : layer_weights.at(style_index);
}

std::set<std::string> TransferConfig::capture_layers() const {
    std::set<std::string> layers(style_layers.begin(), style_layers.end());
    layers.insert(content_layer);
    return layers;
}

TransferTargets prepare_targets(const NetworkSpec& spec, const Tensor4& content_image,
                                const Tensor4& style_image, const TransferConfig& config) {
    return {forward_capture(spec, content_image, {config.content_layer}),
            forward_capture(spec, style_image,
                            {config.style_layers.begin(), config.style_layers.end()})};
}

LossEvaluation total_loss_and_image_grad(const NetworkSpec& spec, const ActivationCache& current,
                                         const TransferTargets& targets,
                                         const TransferConfig& config, double beta_prime,
                                         std::size_t iteration) {
    auto terms = layer_terms(spec, current, targets, config, iteration);
    const double style_scale = config.gamma * beta_prime;
    scale_all(terms.content_grads, config.alpha);
    scale_all(terms.style_grads, style_scale);

    LossEvaluation eval;
    eval.content = terms.content;
    eval.style = terms.style;
    eval.total = config.alpha * terms.content + style_scale * terms.style;
    eval.grad = backward_to_image(spec, current, merge(std::move(terms.content_grads),
                                                       terms.style_grads));
    return eval;
}

LossEvaluation total_loss_and_image_grad(const NetworkSpec& spec, const Tensor4& image,
                                         const TransferTargets& targets,
                                         const TransferConfig& config, double beta_prime,
                                         std::size_t iteration) {
    const auto current = forward_capture(spec, image, config.capture_layers());
    return total_loss_and_image_grad(spec, current, targets, config, beta_prime, iteration);
}

CalibrationResult calibrate_beta_prime(const NetworkSpec& spec, const Tensor4& init,
                                       const TransferTargets& targets,
                                       const TransferConfig& config) {
    const auto current = forward_capture(spec, init, config.capture_layers());
    auto terms = layer_terms(spec, current, targets, config, 0);
    scale_all(terms.content_grads, config.alpha);

    CalibrationResult result;
    result.content_grad_norm = l2_norm(backward_to_image(spec, current, terms.content_grads));
    result.style_grad_norm = l2_norm(backward_to_image(spec, current, terms.style_grads));
    if (!(result.style_grad_norm > 0.0)) {
        throw CalibrationError("calibration degenerate: style gradient is zero at the initial image");
    }
    if (!(result.content_grad_norm > 0.0)) {
        throw CalibrationError(
            "calibration degenerate: content gradient is zero at the initial image");
    }
    result.beta_prime = result.content_grad_norm / result.style_grad_norm;
    return result;
}

CalibrationResult calibrate_beta_prime(const NetworkSpec& spec, const Tensor4& init,
                                       const Tensor4& content_image, const Tensor4& style_image,
                                       const TransferConfig& config) {
    return calibrate_beta_prime(spec, init,
                                prepare_targets(spec, content_image, style_image, config), config);
}

Adam::Adam(const Shape& shape, AdamSettings settings)
    : settings_(settings), m_(shape.size(), 0.0), v_(shape.size(), 0.0) {}

void Adam::step(Tensor4& params, const Tensor4& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw ShapeError("adam: parameter/gradient size does not match optimizer state");
    }
    ++t_;
    const double bias1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    auto x = params.data();
    const auto g = grad.data();
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = settings_.beta1 * m_[i] + (1.0 - settings_.beta1) * g[i];
        v_[i] = settings_.beta2 * v_[i] + (1.0 - settings_.beta2) * g[i] * g[i];
        const double m_hat = m_[i] / bias1;
        const double v_hat = v_[i] / bias2;
        x[i] -= settings_.learning_rate * m_hat / (std::sqrt(v_hat) + settings_.epsilon);
    }
}

Tensor4 noise_image(const Shape& shape, double range, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor4 t(shape);
    for (double& v : t.data()) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (2.0 * u - 1.0) * range;
    }
    return t;
}

TransferResult run_transfer(const NetworkSpec& spec, const Tensor4& content_image,
                            const Tensor4& style_image, const TransferConfig& config,
                            const IterationCallback& on_iteration) {
    config.validate();
    const auto targets = prepare_targets(spec, content_image, style_image, config);

    TransferResult result;
    result.image = config.init_image ? *config.init_image
                                     : noise_image(content_image.shape(), config.init_range,
                                                   mix_seed(config.seed, 0xC0FFEE));
    if (result.image.shape() != content_image.shape()) {
        throw ShapeError("transfer: init image " + result.image.shape().str() +
                         " does not match content image " + content_image.shape().str());
    }

    try {
        result.calibration = calibrate_beta_prime(spec, result.image, targets, config);
    } catch (const CalibrationError&) {
        // Both gradients vanish only when the start is already optimal; the
        // zero-loss stop below ends the run, so any positive beta' will do.
        const auto current = forward_capture(spec, result.image, config.capture_layers());
        const auto probe = total_loss_and_image_grad(spec, current, targets, config, 1.0, 0);
        if (l2_norm(probe.grad) != 0.0 || probe.total != 0.0) throw;
        result.calibration = {1.0, 0.0, 0.0};
    }

    const bool sampled = config.method.is_sampled();
    Adam adam(result.image.shape(), config.adam);
    for (std::size_t t = 0; t < config.max_iters; ++t) {
        auto eval = total_loss_and_image_grad(spec, result.image, targets, config,
                                              result.calibration.beta_prime, t);
        if (!std::isfinite(eval.total) || !eval.grad.all_finite()) {
            throw std::runtime_error("transfer: non-finite loss or gradient at iteration " +
                                     std::to_string(t) + " (total=" +
                                     std::to_string(eval.total) + ")");
        }
        result.trace.push_back({eval.total, eval.content, eval.style});
        if (on_iteration) on_iteration(t, result.image);

        const auto& trace = result.trace;
        if (eval.total == 0.0) break;
        if (sampled) {
            if (t >= kSampledStopWindow) {
                double now = 0.0, before = 0.0;
                for (std::size_t k = 0; k < kSampledStopWindow; ++k) {
                    now += trace[t - k].total;
                    before += trace[t - 1 - k].total;
                }
                if (before == 0.0 || std::abs(now - before) / std::abs(before) < config.rel_tol) {
                    break;
                }
            }
        } else if (t >= 1) {
            const double prev = trace[t - 1].total;
            if (prev == 0.0 || std::abs(eval.total - prev) / std::abs(prev) < config.rel_tol) {
                break;
            }
        }
        if (t + 1 < config.max_iters) adam.step(result.image, eval.grad);
    }
    return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "iter,total,content,style\n";
    char buf[128];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, trace[i].total,
                      trace[i].content, trace[i].style);
        out << buf;
    }
}

}  // namespace mmdstyle
