#pragma once

#include "mmdstyle/tensor.h"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace mmdstyle {

/// A layer's activations as N channels x M positions. Column k is the
/// activation vector at spatial position k, i.e. one sample of the layer's
/// feature distribution.
class FeatureMatrix {
public:
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    explicit FeatureMatrix(Matrix values);

    /// (1, c, h, w) -> c x (h*w).
    static FeatureMatrix from_tensor(const Tensor4& t);
    /// Inverse of from_tensor; `height * width` must equal positions().
    Tensor4 to_tensor(std::size_t height, std::size_t width) const;

    std::size_t channels() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t positions() const { return static_cast<std::size_t>(values_.cols()); }

    const Matrix& values() const { return values_; }
    Matrix& values() { return values_; }

private:
    Matrix values_;
};

struct LossAndGrad {
    double loss = 0.0;
    FeatureMatrix grad;
};

/// N x N matrix of per-position channel inner products, (1/M) F F^T.
using GramMatrix = Eigen::MatrixXd;

GramMatrix gram(const FeatureMatrix& f);

LossAndGrad content_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& p);

/// 1/(4N^2) * ||G_f - G_s||^2 on per-position Grams. Equals the classic
/// 1/(4 N^2 M^2) sum (G - A)^2 when both images have M positions, and stays
/// defined when they do not.
LossAndGrad gram_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s);

// ---- kernels --------------------------------------------------------------

struct MeanOfPairsBandwidth {};
struct FixedBandwidth {
    double sigma_squared = 1.0;
};
using Bandwidth = std::variant<MeanOfPairsBandwidth, FixedBandwidth>;

struct LinearKernel {};
/// (x.y + c)^2; only degree 2 is supported.
struct PolyKernel {
    double c = 0.0;
};
/// exp(-||x - y||^2 / (2 sigma^2)).
struct GaussianKernel {
    Bandwidth bandwidth;
};
using KernelKind = std::variant<LinearKernel, PolyKernel, GaussianKernel>;

/// Throws std::invalid_argument for c < 0 or a non-positive fixed bandwidth.
void validate(const KernelKind& kernel);

/// Full pairwise biased estimate, columns as samples:
///   (1/n^2) sum k(x,x') + (1/m^2) sum k(y,y') - (2/nm) sum k(x,y).
/// A mean-of-pairs Gaussian bandwidth resolves to the mean squared distance
/// over every pair the statistic evaluates.
double mmd_biased(const FeatureMatrix& x, const FeatureMatrix& y, const KernelKind& kernel);

// ---- style losses ---------------------------------------------------------

struct GramMethod {};
struct PolyMmdMethod {
    double c = 0.0;
};
struct LinearMmdMethod {};
struct GaussianMmdMethod {
    Bandwidth bandwidth;
};
struct BnStatsMethod {};
using StyleMethod =
    std::variant<GramMethod, PolyMmdMethod, LinearMmdMethod, GaussianMmdMethod, BnStatsMethod>;

std::string method_name(const StyleMethod& method);
bool is_sampled(const StyleMethod& method);

/// Z in loss = MMD^2 / Z: 4N^2 for Gram/poly, N for linear, 1 for Gaussian.
/// BN statistics carry their own 1/N and report 1.
double normalization(const StyleMethod& method, std::size_t channels);

/// Closed-form route through the kernel mean embedding: linear uses channel
/// means, poly uses per-position Grams plus c times the means.
LossAndGrad mmd_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                    const StyleMethod& method);

/// Linear-time estimator over min(M_f, M_s) sampled pairs. Each draw picks two
/// uniform positions u, u' in [0,1) and maps them onto both sets, so a sample
/// set compared with itself contributes exactly zero. The bandwidth is a
/// constant in the gradient.
LossAndGrad gaussian_mmd_sampled_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                          const Bandwidth& bandwidth, std::uint64_t seed);

struct BnStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // population convention, denominator M
};

BnStats bn_stats(const FeatureMatrix& f);

/// (1/N) sum_i (mu_f - mu_s)^2 + (sigma_f - sigma_s)^2. Channels with
/// sigma_f = 0 take subgradient 0 for the sigma term.
LossAndGrad bn_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s);

/// Dispatches on the method. `seed` only matters for sampled methods.
LossAndGrad style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                const StyleMethod& method, std::uint64_t seed = 0);

struct FusionEntry {
    StyleMethod method;
    double weight = 1.0;
};

/// Weighted combination of style losses. Weights are normalized to sum to 1
/// on construction.
class FusionSpec {
public:
    FusionSpec(StyleMethod single);  // NOLINT(google-explicit-constructor)
    explicit FusionSpec(std::vector<FusionEntry> entries);

    const std::vector<FusionEntry>& entries() const { return entries_; }
    bool is_sampled() const;
    std::string str() const;

private:
    std::vector<FusionEntry> entries_;
};

LossAndGrad fused_style_loss_and_grad(const FeatureMatrix& f, const FeatureMatrix& s,
                                      const FusionSpec& fusion, std::uint64_t seed = 0);

/// splitmix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mmdstyle
