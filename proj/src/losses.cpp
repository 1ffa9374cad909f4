#include "mmdstyle/losses.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mmdstyle {

namespace {

using Matrix = FeatureMatrix::Matrix;
using ColMatrix = Eigen::MatrixXd;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void require_same_channels(const FeatureMatrix& f, const FeatureMatrix& s, const char* what) {
    if (f.channels() != s.channels()) {
        throw ShapeError(std::string(what) + ": channel mismatch " + std::to_string(f.channels()) +
                         " vs " + std::to_string(s.channels()));
    }
}

Eigen::VectorXd channel_means(const FeatureMatrix& f) {
    return f.values().rowwise().mean();
}

// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
double unit_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Shared loss for Gram and poly-MMD: ||G_f - G_s||^2 + 2c ||mu_f - mu_s||^2,
// scaled by 1/(4N^2).
LossAndGrad second_moment_loss(const FeatureMatrix& f, const FeatureMatrix& s, double c) {
    const double n = static_cast<double>(f.channels());
    const double m = static_cast<double>(f.positions());
    const GramMatrix diff = gram(f) - gram(s);
    const double scale = 1.0 / (4.0 * n * n);

    double loss = scale * diff.squaredNorm();
    Matrix grad = (diff * f.values()) / (n * n * m);
    if (c != 0.0) {
        const Eigen::VectorXd dmu = channel_means(f) - channel_means(s);
        loss += scale * 2.0 * c * dmu.squaredNorm();
        grad.colwise() += dmu * (c / (n * n * m));
    }
    return {loss, FeatureMatrix(std::move(grad))};
}

double squared_distance(const ColMatrix& a, Eigen::Index i, const ColMatrix& b, Eigen::Index j) {
    return (a.col(i) - b.col(j)).squaredNorm();
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
        throw ShapeError("FeatureMatrix: needs at least one channel and one position");
    }
}

FeatureMatrix FeatureMatrix::from_tensor(const Tensor4& t) {
    const Shape& s = t.shape();
    if (s.batch != 1) throw ShapeError("FeatureMatrix: expected batch 1, got " + s.str());
    Matrix m = Eigen::Map<const Matrix>(t.data().data(), static_cast<Eigen::Index>(s.channels),
                                        static_cast<Eigen::Index>(s.height * s.width));
    return FeatureMatrix(std::move(m));
}

Tensor4 FeatureMatrix::to_tensor(std::size_t height, std::size_t width) const {
    if (height * width != positions()) {
        throw ShapeError("FeatureMatrix: " + std::to_string(positions()) +
                         " positions cannot be laid out as " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    return Tensor4({1, channels(), height, width},
                   std::vector<double>(values_.data(), values_.data() + values_.size()));
}

GramMatrix gram(const FeatureMatrix& f) {
    GramMatrix g = f.values() * f.values().transpose();
    return g / static_cast<double>(f.positions());
}

LossAndGrad content_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& p) {
    if (f.channels() != p.channels() || f.positions() != p.positions()) {
        throw ShapeError("content loss: shape mismatch");
    }
    Matrix diff = f.values() - p.values();
    const double loss = 0.5 * diff.squaredNorm();
    return {loss, FeatureMatrix(std::move(diff))};
}

LossAndGrad gram_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s) {
    require_same_channels(f, s, "gram style loss");
    return second_moment_loss(f, s, 0.0);
}

void validate(const KernelKind& kernel) {
    std::visit(overloaded{
                   [](const LinearKernel&) {},
                   [](const PolyKernel& k) {
                       if (!(k.c >= 0.0)) throw std::invalid_argument("poly kernel: c must be >= 0");
                   },
                   [](const GaussianKernel& k) {
                       if (auto* fixed = std::get_if<FixedBandwidth>(&k.bandwidth);
                           fixed && !(fixed->sigma_squared > 0.0)) {
                           throw std::invalid_argument("gaussian kernel: bandwidth must be > 0");
                       }
                   },
               },
               kernel);
}

double mmd_biased(const FeatureMatrix& x, const FeatureMatrix& y, const KernelKind& kernel) {
    require_same_channels(x, y, "mmd");
    validate(kernel);
    const ColMatrix xs = x.values();
    const ColMatrix ys = y.values();
    const auto n = xs.cols();
    const auto m = ys.cols();

    if (const auto* gk = std::get_if<GaussianKernel>(&kernel)) {
        double sigma_sq = 0.0;
        if (const auto* fixed = std::get_if<FixedBandwidth>(&gk->bandwidth)) {
            sigma_sq = fixed->sigma_squared;
        } else {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) total += squared_distance(xs, i, xs, j);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < m; ++j) total += squared_distance(ys, i, ys, j);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < m; ++j) total += 2.0 * squared_distance(xs, i, ys, j);
            sigma_sq = total / static_cast<double>((n + m) * (n + m));
        }
        auto k = [&](const ColMatrix& a, Eigen::Index i, const ColMatrix& b, Eigen::Index j) {
            return sigma_sq > 0.0 ? std::exp(-squared_distance(a, i, b, j) / (2.0 * sigma_sq))
                                  : 1.0;
        };
        double kxx = 0.0, kyy = 0.0, kxy = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) kxx += k(xs, i, xs, j);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j) kyy += k(ys, i, ys, j);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < m; ++j) kxy += k(xs, i, ys, j);
        const double dn = static_cast<double>(n), dm = static_cast<double>(m);
        return kxx / (dn * dn) + kyy / (dm * dm) - 2.0 * kxy / (dn * dm);
    }

    // Dot-product kernels: evaluate k on every pair of sample inner products.
    auto apply = [&](double dot) {
        if (const auto* pk = std::get_if<PolyKernel>(&kernel)) {
            const double t = dot + pk->c;
            return t * t;
        }
        return dot;
    };
    const ColMatrix dxx = xs.transpose() * xs;
    const ColMatrix dyy = ys.transpose() * ys;
    const ColMatrix dxy = xs.transpose() * ys;
    const double kxx = dxx.unaryExpr(apply).sum();
    const double kyy = dyy.unaryExpr(apply).sum();
    const double kxy = dxy.unaryExpr(apply).sum();
    const double dn = static_cast<double>(n), dm = static_cast<double>(m);
    return kxx / (dn * dn) + kyy / (dm * dm) - 2.0 * kxy / (dn * dm);
}

std::string method_name(const StyleMethod& method) {
    return std::visit(overloaded{
                          [](const GramMethod&) -> std::string { return "gram"; },
                          [](const PolyMmdMethod& p) -> std::string {
                              std::ostringstream os;
                              os << "poly(c=" << p.c << ")";
                              return os.str();
                          },
                          [](const LinearMmdMethod&) -> std::string { return "linear"; },
                          [](const GaussianMmdMethod&) -> std::string { return "gaussian"; },
                          [](const BnStatsMethod&) -> std::string { return "bn"; },
                      },
                      method);
}

bool is_sampled(const StyleMethod& method) {
    return std::holds_alternative<GaussianMmdMethod>(method);
}

double normalization(const StyleMethod& method, std::size_t channels) {
    const double n = static_cast<double>(channels);
    return std::visit(overloaded{
                          [&](const GramMethod&) { return 4.0 * n * n; },
                          [&](const PolyMmdMethod&) { return 4.0 * n * n; },
                          [&](const LinearMmdMethod&) { return n; },
                          [](const GaussianMmdMethod&) { return 1.0; },
                          [](const BnStatsMethod&) { return 1.0; },
                      },
                      method);
}

LossAndGrad mmd_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                    const StyleMethod& method) {
    require_same_channels(f, s, "mmd style loss");
    if (const auto* poly = std::get_if<PolyMmdMethod>(&method)) {
        validate(PolyKernel{poly->c});
        return second_moment_loss(f, s, poly->c);
    }
    if (std::holds_alternative<LinearMmdMethod>(method)) {
        // MMD^2 = ||mu_f - mu_s||^2
        const double z = normalization(method, f.channels());
        const Eigen::VectorXd dmu = channel_means(f) - channel_means(s);
        Matrix grad(f.values().rows(), f.values().cols());
        grad.colwise() = dmu * (2.0 / (z * static_cast<double>(f.positions())));
        return {dmu.squaredNorm() / z, FeatureMatrix(std::move(grad))};
    }
    throw std::invalid_argument("mmd style loss: " + method_name(method) +
                                " is not a closed-form MMD method");
}

LossAndGrad gaussian_mmd_sampled_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                          const Bandwidth& bandwidth, std::uint64_t seed) {
    require_same_channels(f, s, "gaussian mmd");
    validate(GaussianKernel{bandwidth});
    const std::size_t n = f.positions();
    const std::size_t m = s.positions();
    if (n < 2 || m < 2) {
        throw std::invalid_argument("gaussian mmd: needs at least 2 positions per set");
    }
    const ColMatrix fs = f.values();
    const ColMatrix ss = s.values();
    const std::size_t pairs = std::min(n, m);

    struct Draw {
        Eigen::Index i, i2, j, j2;
        double d_ff, d_ss, d_fs2, d_f2s;
    };
    std::vector<Draw> draws(pairs);
    std::mt19937_64 rng(seed);
    double mean_sq = 0.0;
    for (auto& d : draws) {
        const double u = unit_draw(rng);
        const double u2 = unit_draw(rng);
        d.i = static_cast<Eigen::Index>(u * static_cast<double>(n));
        d.i2 = static_cast<Eigen::Index>(u2 * static_cast<double>(n));
        d.j = static_cast<Eigen::Index>(u * static_cast<double>(m));
        d.j2 = static_cast<Eigen::Index>(u2 * static_cast<double>(m));
        d.d_ff = squared_distance(fs, d.i, fs, d.i2);
        d.d_ss = squared_distance(ss, d.j, ss, d.j2);
        d.d_fs2 = squared_distance(fs, d.i, ss, d.j2);
        d.d_f2s = squared_distance(fs, d.i2, ss, d.j);
        mean_sq += d.d_ff + d.d_ss + d.d_fs2 + d.d_f2s;
    }
    mean_sq /= 4.0 * static_cast<double>(pairs);

    const double sigma_sq = std::holds_alternative<FixedBandwidth>(bandwidth)
                                ? std::get<FixedBandwidth>(bandwidth).sigma_squared
                                : mean_sq;
    const double z = normalization(GaussianMmdMethod{bandwidth}, f.channels());
    const double scale = 1.0 / (z * static_cast<double>(pairs));

    ColMatrix grad = ColMatrix::Zero(fs.rows(), fs.cols());
    if (!(sigma_sq > 0.0)) {
        // every sampled point coincides; all kernels are 1 and h vanishes
        return {0.0, FeatureMatrix(Matrix(grad))};
    }
    auto k = [&](double dist) { return std::exp(-dist / (2.0 * sigma_sq)); };

    double total = 0.0;
    for (const auto& d : draws) {
        const double k_ff = k(d.d_ff), k_ss = k(d.d_ss), k_fs2 = k(d.d_fs2), k_f2s = k(d.d_f2s);
        total += k_ff + k_ss - k_fs2 - k_f2s;
        // dk(x,y)/dx = -k (x - y) / sigma^2
        const double g = scale / sigma_sq;
        const Eigen::VectorXd ff = fs.col(d.i) - fs.col(d.i2);
        grad.col(d.i) -= g * k_ff * ff;
        grad.col(d.i2) += g * k_ff * ff;
        grad.col(d.i) += g * k_fs2 * (fs.col(d.i) - ss.col(d.j2));
        grad.col(d.i2) += g * k_f2s * (fs.col(d.i2) - ss.col(d.j));
    }
    return {total * scale, FeatureMatrix(Matrix(grad))};
}

BnStats bn_stats(const FeatureMatrix& f) {
    BnStats stats;
    stats.mean = channel_means(f);
    const Matrix centered = f.values().colwise() - stats.mean;
    stats.stddev = (centered.array().square().rowwise().sum() /
                    static_cast<double>(f.positions()))
                       .sqrt();
    return stats;
}

LossAndGrad bn_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s) {
    require_same_channels(f, s, "bn style loss");
    const BnStats sf = bn_stats(f);
    const BnStats ss = bn_stats(s);
    const double n = static_cast<double>(f.channels());
    const double m = static_cast<double>(f.positions());
    const Eigen::VectorXd dmu = sf.mean - ss.mean;
    const Eigen::VectorXd dsigma = sf.stddev - ss.stddev;
    const double loss = (dmu.squaredNorm() + dsigma.squaredNorm()) / n;

    // d mu / dF_ij = 1/M;  d sigma / dF_ij = (F_ij - mu) / (M sigma)
    Eigen::VectorXd sigma_coeff(f.channels());
    for (Eigen::Index i = 0; i < sigma_coeff.size(); ++i) {
        sigma_coeff(i) = sf.stddev(i) > 0.0 ? 2.0 * dsigma(i) / (n * m * sf.stddev(i)) : 0.0;
    }
    Matrix grad = (f.values().colwise() - sf.mean).array().colwise() * sigma_coeff.array();
    grad.colwise() += dmu * (2.0 / (n * m));
    return {loss, FeatureMatrix(std::move(grad))};
}

LossAndGrad style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                const StyleMethod& method, std::uint64_t seed) {
    return std::visit(overloaded{
                          [&](const GramMethod&) { return gram_style_loss_and_grad(f, s); },
                          [&](const PolyMmdMethod&) { return mmd_style_loss_and_grad(f, s, method); },
                          [&](const LinearMmdMethod&) {
                              return mmd_style_loss_and_grad(f, s, method);
                          },
                          [&](const GaussianMmdMethod& g) {
                              return gaussian_mmd_sampled_and_grad(f, s, g.bandwidth, seed);
                          },
                          [&](const BnStatsMethod&) { return bn_style_loss_and_grad(f, s); },
                      },
                      method);
}

FusionSpec::FusionSpec(StyleMethod single) : entries_{{std::move(single), 1.0}} {}

FusionSpec::FusionSpec(std::vector<FusionEntry> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw std::invalid_argument("fusion: needs at least one method");
    double total = 0.0;
    for (const auto& e : entries_) {
        if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
            throw std::invalid_argument("fusion: weights must be finite and >= 0");
        }
        total += e.weight;
    }
    if (!(total > 0.0)) throw std::invalid_argument("fusion: weights sum to zero");
    for (auto& e : entries_) e.weight /= total;
}

bool FusionSpec::is_sampled() const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [](const FusionEntry& e) { return mmdstyle::is_sampled(e.method); });
}

std::string FusionSpec::str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (i) os << "+";
        os << method_name(entries_[i].method) << ":" << entries_[i].weight;
    }
    return os.str();
}

LossAndGrad fused_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                      const FusionSpec& fusion, std::uint64_t seed) {
    require_same_channels(f, s, "fused style loss");
    LossAndGrad total{0.0, FeatureMatrix(Matrix::Zero(f.values().rows(), f.values().cols()))};
    const auto& entries = fusion.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto member = style_loss_and_grad(f, s, entries[i].method, mix_seed(seed, i));
        total.loss += entries[i].weight * member.loss;
        total.grad.values() += entries[i].weight * member.grad.values();
    }
    return total;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace mmdstyle
