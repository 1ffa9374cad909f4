#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdstyle {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    std::size_t batch = 1;
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t size() const { return batch * channels * height * width; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense (batch, channel, height, width) array of doubles, row-major.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape shape, double fill = 0.0);
    Tensor4(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return ((b * shape_.channels + c) * shape_.height + y) * shape_.width + x;
    }
    double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        return data_[index(b, c, y, x)];
    }
    double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[index(b, c, y, x)];
    }

    bool all_finite() const;

    Tensor4& operator+=(const Tensor4& other);
    Tensor4& operator*=(double s);

    friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

double l2_norm(const Tensor4& t);

struct ConvParams {
    Tensor4 kernel;  // (out_ch, in_ch, kh, kw)
    std::vector<double> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_channels() const { return kernel.shape().batch; }
    std::size_t in_channels() const { return kernel.shape().channels; }

    /// Throws ShapeError if the kernel/bias/stride combination is unusable.
    void validate() const;
};

Shape conv2d_output_shape(const Shape& input, const ConvParams& params);

/// Cross-correlation with zero padding; no kernel flip.
Tensor4 conv2d_forward(const Tensor4& input, const ConvParams& params);

/// Gradient with respect to the input only. `input_shape` is the shape the
/// forward pass saw; it disambiguates the trailing rows lost to stride.
Tensor4 conv2d_backward_input(const Tensor4& grad_out, const ConvParams& params,
                              const Shape& input_shape);

/// Convenience overload for stride 1, where the input shape is recoverable.
Tensor4 conv2d_backward_input(const Tensor4& grad_out, const ConvParams& params);

Tensor4 relu_forward(const Tensor4& input);

/// Passes gradient where input > 0. The post-activation works as `input` too,
/// since relu(x) > 0 exactly when x > 0.
Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& input);

enum class PoolMode { Max, Avg };

/// Flat input index of the winning element for each output element.
struct PoolArgmax {
    std::vector<std::size_t> index;
};

struct PoolResult {
    Tensor4 output;
    std::optional<PoolArgmax> argmax;  // present for PoolMode::Max
};

/// 2x2 window, stride 2. Odd trailing rows/columns are dropped.
PoolResult pool2x2_forward(const Tensor4& input, PoolMode mode);

Tensor4 pool2x2_backward(const Tensor4& grad_out, const std::optional<PoolArgmax>& argmax,
                         PoolMode mode, const Shape& input_shape);

}  // namespace mmdstyle
