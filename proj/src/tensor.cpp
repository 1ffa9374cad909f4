#include "mmdstyle/tensor.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmdstyle {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape " + a.str() + " does not match " + b.str());
    }
}

// Unfolds one image into a (in_ch*kh*kw) x (oh*ow) matrix of receptive fields.
void im2col(std::span<const double> image, const Shape& in, const ConvParams& p,
            std::size_t oh, std::size_t ow, RowMatrix& cols) {
    const auto& k = p.kernel.shape();
    const auto pad = static_cast<std::ptrdiff_t>(p.padding);
    const auto h = static_cast<std::ptrdiff_t>(in.height);
    const auto w = static_cast<std::ptrdiff_t>(in.width);
    cols.resize(static_cast<Eigen::Index>(k.channels * k.height * k.width),
                static_cast<Eigen::Index>(oh * ow));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < k.channels; ++c) {
        const double* plane = image.data() + c * in.height * in.width;
        for (std::size_t ky = 0; ky < k.height; ++ky) {
            for (std::size_t kx = 0; kx < k.width; ++kx, ++row) {
                double* dst = cols.row(row).data();
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
                        dst[oy * ow + ox] = (y >= 0 && y < h && x >= 0 && x < w)
                                                ? plane[y * w + x]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix& cols, const Shape& in, const ConvParams& p, std::size_t oh,
            std::size_t ow, std::span<double> image) {
    const auto& k = p.kernel.shape();
    const auto pad = static_cast<std::ptrdiff_t>(p.padding);
    const auto h = static_cast<std::ptrdiff_t>(in.height);
    const auto w = static_cast<std::ptrdiff_t>(in.width);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < k.channels; ++c) {
        double* plane = image.data() + c * in.height * in.width;
        for (std::size_t ky = 0; ky < k.height; ++ky) {
            for (std::size_t kx = 0; kx < k.width; ++kx, ++row) {
                const double* src = cols.row(row).data();
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
                    if (y < 0 || y >= h) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
                        if (x < 0 || x >= w) continue;
                        plane[y * w + x] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

Eigen::Map<const RowMatrix> kernel_matrix(const ConvParams& p) {
    const auto& k = p.kernel.shape();
    return {p.kernel.data().data(), static_cast<Eigen::Index>(k.batch),
            static_cast<Eigen::Index>(k.channels * k.height * k.width)};
}

}  // namespace

std::string Shape::str() const {
    return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + ")";
}

Tensor4::Tensor4(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
    if (shape.batch == 0 || shape.channels == 0 || shape.height == 0 || shape.width == 0) {
        throw ShapeError("Tensor4: every dimension must be >= 1, got " + shape.str());
    }
}

Tensor4::Tensor4(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (shape.batch == 0 || shape.channels == 0 || shape.height == 0 || shape.width == 0) {
        throw ShapeError("Tensor4: every dimension must be >= 1, got " + shape.str());
    }
    if (data_.size() != shape.size()) {
        throw ShapeError("Tensor4: " + std::to_string(data_.size()) +
                         " values do not fill shape " + shape.str());
    }
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
    require_same_shape(shape_, other.shape_, "Tensor4::operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor4& Tensor4::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double l2_norm(const Tensor4& t) {
    double sum = 0.0;
    for (double v : t.data()) sum += v * v;
    return std::sqrt(sum);
}

void ConvParams::validate() const {
    const auto& k = kernel.shape();
    if (k.size() == 0 || k.batch == 0) throw ShapeError("conv: empty kernel");
    if (bias.size() != k.batch) {
        throw ShapeError("conv: bias length " + std::to_string(bias.size()) +
                         " does not match out_ch " + std::to_string(k.batch));
    }
    if (stride == 0) throw ShapeError("conv: stride must be >= 1");
}

Shape conv2d_output_shape(const Shape& input, const ConvParams& params) {
    params.validate();
    const auto& k = params.kernel.shape();
    if (input.channels != k.channels) {
        throw ShapeError("conv2d: input " + input.str() + " has " +
                         std::to_string(input.channels) + " channels, kernel " + k.str() +
                         " expects " + std::to_string(k.channels));
    }
    const std::size_t ph = input.height + 2 * params.padding;
    const std::size_t pw = input.width + 2 * params.padding;
    if (ph < k.height || pw < k.width) {
        throw ShapeError("conv2d: kernel " + k.str() + " larger than padded input " + input.str());
    }
    return {input.batch, k.batch, (ph - k.height) / params.stride + 1,
            (pw - k.width) / params.stride + 1};
}

Tensor4 conv2d_forward(const Tensor4& input, const ConvParams& params) {
    const Shape& in = input.shape();
    const Shape out_shape = conv2d_output_shape(in, params);
    Tensor4 out(out_shape);
    const auto weights = kernel_matrix(params);
    const Eigen::Map<const Eigen::VectorXd> bias(params.bias.data(),
                                                 static_cast<Eigen::Index>(params.bias.size()));
    const std::size_t in_stride = in.channels * in.height * in.width;
    const std::size_t out_plane = out_shape.height * out_shape.width;
    RowMatrix cols;
    for (std::size_t b = 0; b < in.batch; ++b) {
        im2col(input.data().subspan(b * in_stride, in_stride), in, params, out_shape.height,
               out_shape.width, cols);
        Eigen::Map<RowMatrix> dst(out.data().data() + b * out_shape.channels * out_plane,
                                  static_cast<Eigen::Index>(out_shape.channels),
                                  static_cast<Eigen::Index>(out_plane));
        dst.noalias() = weights * cols;
        dst.colwise() += bias;
    }
    return out;
}

Tensor4 conv2d_backward_input(const Tensor4& grad_out, const ConvParams& params,
                              const Shape& input_shape) {
    const Shape expected = conv2d_output_shape(input_shape, params);
    require_same_shape(grad_out.shape(), expected, "conv2d_backward_input");
    Tensor4 grad_in(input_shape);
    const auto weights = kernel_matrix(params);
    const std::size_t in_stride = input_shape.channels * input_shape.height * input_shape.width;
    const std::size_t out_plane = expected.height * expected.width;
    RowMatrix cols;
    for (std::size_t b = 0; b < input_shape.batch; ++b) {
        Eigen::Map<const RowMatrix> g(grad_out.data().data() + b * expected.channels * out_plane,
                                      static_cast<Eigen::Index>(expected.channels),
                                      static_cast<Eigen::Index>(out_plane));
        cols.noalias() = weights.transpose() * g;
        col2im(cols, input_shape, params, expected.height, expected.width,
               grad_in.data().subspan(b * in_stride, in_stride));
    }
    return grad_in;
}

Tensor4 conv2d_backward_input(const Tensor4& grad_out, const ConvParams& params) {
    params.validate();
    if (params.stride != 1) {
        throw ShapeError("conv2d_backward_input: input shape is ambiguous for stride " +
                         std::to_string(params.stride) + "; pass it explicitly");
    }
    const auto& g = grad_out.shape();
    const auto& k = params.kernel.shape();
    if (g.channels != k.batch) {
        throw ShapeError("conv2d_backward_input: grad " + g.str() + " vs kernel " + k.str());
    }
    const std::size_t h = g.height + k.height - 1;
    const std::size_t w = g.width + k.width - 1;
    if (h <= 2 * params.padding || w <= 2 * params.padding) {
        throw ShapeError("conv2d_backward_input: grad " + g.str() + " too small for padding");
    }
    return conv2d_backward_input(grad_out, params,
                                 {g.batch, k.channels, h - 2 * params.padding,
                                  w - 2 * params.padding});
}

Tensor4 relu_forward(const Tensor4& input) {
    Tensor4 out = input;
    for (double& v : out.data()) v = std::max(v, 0.0);
    return out;
}

Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& input) {
    require_same_shape(grad_out.shape(), input.shape(), "relu_backward");
    Tensor4 grad = grad_out;
    const auto x = input.data();
    auto g = grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(x[i] > 0.0)) g[i] = 0.0;
    }
    return grad;
}

PoolResult pool2x2_forward(const Tensor4& input, PoolMode mode) {
    const Shape& in = input.shape();
    if (in.height < 2 || in.width < 2) {
        throw ShapeError("pool2x2: input " + in.str() + " is smaller than the 2x2 window");
    }
    const Shape out_shape{in.batch, in.channels, in.height / 2, in.width / 2};
    PoolResult result{Tensor4(out_shape), std::nullopt};
    if (mode == PoolMode::Max) result.argmax.emplace().index.resize(out_shape.size());

    std::size_t o = 0;
    for (std::size_t b = 0; b < in.batch; ++b) {
        for (std::size_t c = 0; c < in.channels; ++c) {
            for (std::size_t oy = 0; oy < out_shape.height; ++oy) {
                for (std::size_t ox = 0; ox < out_shape.width; ++ox, ++o) {
                    const std::size_t window[4] = {
                        input.index(b, c, 2 * oy, 2 * ox), input.index(b, c, 2 * oy, 2 * ox + 1),
                        input.index(b, c, 2 * oy + 1, 2 * ox),
                        input.index(b, c, 2 * oy + 1, 2 * ox + 1)};
                    if (mode == PoolMode::Max) {
                        // strict > keeps the first maximum in row-major window order
                        std::size_t best = window[0];
                        for (std::size_t i = 1; i < 4; ++i) {
                            if (input[window[i]] > input[best]) best = window[i];
                        }
                        result.output[o] = input[best];
                        result.argmax->index[o] = best;
                    } else {
                        result.output[o] = 0.25 * (input[window[0]] + input[window[1]] +
                                                   input[window[2]] + input[window[3]]);
                    }
                }
            }
        }
    }
    return result;
}

Tensor4 pool2x2_backward(const Tensor4& grad_out, const std::optional<PoolArgmax>& argmax,
                         PoolMode mode, const Shape& input_shape) {
    const Shape expected{input_shape.batch, input_shape.channels, input_shape.height / 2,
                         input_shape.width / 2};
    require_same_shape(grad_out.shape(), expected, "pool2x2_backward");
    Tensor4 grad_in(input_shape);
    if (mode == PoolMode::Max) {
        if (!argmax || argmax->index.size() != grad_out.size()) {
            throw ShapeError("pool2x2_backward: max mode needs the forward argmax");
        }
        for (std::size_t o = 0; o < grad_out.size(); ++o) {
            grad_in[argmax->index[o]] += grad_out[o];
        }
        return grad_in;
    }
    std::size_t o = 0;
    for (std::size_t b = 0; b < expected.batch; ++b) {
        for (std::size_t c = 0; c < expected.channels; ++c) {
            for (std::size_t oy = 0; oy < expected.height; ++oy) {
                for (std::size_t ox = 0; ox < expected.width; ++ox, ++o) {
                    const double g = 0.25 * grad_out[o];
                    grad_in.at(b, c, 2 * oy, 2 * ox) += g;
                    grad_in.at(b, c, 2 * oy, 2 * ox + 1) += g;
                    grad_in.at(b, c, 2 * oy + 1, 2 * ox) += g;
                    grad_in.at(b, c, 2 * oy + 1, 2 * ox + 1) += g;
                }
            }
        }
    }
    return grad_in;
}

}  // namespace mmdstyle
