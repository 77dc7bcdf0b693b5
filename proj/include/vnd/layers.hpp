#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "vnd/rng.hpp"
#include "vnd/tensor.hpp"

namespace vnd {

enum class LayerKind { dense, conv2d, maxpool2d, transposed_conv2d, activation };
enum class Activation { relu, sigmoid, identity };

const char* layer_kind_name(LayerKind k);
const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);

/// One layer of a feed-forward network. Convolutions use zero "same" padding
/// (spatial size preserved at stride 1); max-pooling is unpadded; transposed
/// convolutions are unpadded and upsample by their stride.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t units = 0;                // dense width / conv output channels
    std::array<std::size_t, 2> filter{1, 1};
    std::array<std::size_t, 2> stride{1, 1};
    Activation act = Activation::identity;
    Shape reshape; // dense only: view the output as [c, h, w] for a following conv

    static LayerSpec dense(std::size_t units, Shape reshape = {});
    static LayerSpec conv2d(std::size_t channels, std::size_t filter, std::size_t stride = 1);
    static LayerSpec maxpool2d(std::size_t filter, std::size_t stride);
    static LayerSpec transposed_conv2d(std::size_t channels, std::size_t filter, std::size_t stride);
    static LayerSpec activation(Activation a);

    bool has_params() const {
        return kind == LayerKind::dense || kind == LayerKind::conv2d ||
               kind == LayerKind::transposed_conv2d;
    }
};

/// Weight and bias tensors per layer, with the same vector layout as the
/// LayerSpec list they were initialized from. Layers without parameters hold
/// empty tensors. Gradient accumulators reuse the same type.
struct LayerParams {
    Tensor weight;
    Tensor bias;
};

struct ParameterStore {
    std::vector<LayerParams> layers;

    std::size_t total_size() const;
    void fill(double v);
    void add_scaled(const ParameterStore& other, double factor); // this += factor * other
    bool all_finite() const;
};

/// Output shape of one layer; throws ConfigError naming the layer on any
/// shape or configuration mismatch.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in, std::size_t layer_idx);

std::vector<Shape> infer_shapes(std::span<const LayerSpec> net, const Shape& input);

/// Uniform fan-in scaled initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ParameterStore init_params(std::span<const LayerSpec> net, const Shape& input, Rng& rng);

ParameterStore zeros_like(const ParameterStore& p);

/// activations[0] is the input; activations[i + 1] the output of layer i.
struct ForwardTrace {
    std::vector<Tensor> activations;
    const Tensor& output() const { return activations.back(); }
};

Tensor forward(std::span<const LayerSpec> net, const ParameterStore& params, const Tensor& input);
ForwardTrace forward_trace(std::span<const LayerSpec> net, const ParameterStore& params,
                           const Tensor& input);

struct BackwardResult {
    ParameterStore param_grads;
    Tensor input_grad;
};

/// Reverse-mode gradients of a scalar objective with output gradient
/// `output_grad`, through the whole network.
BackwardResult backward(std::span<const LayerSpec> net, const ParameterStore& params,
                        const ForwardTrace& trace, const Tensor& output_grad);
BackwardResult backward(std::span<const LayerSpec> net, const ParameterStore& params,
                        const Tensor& input, const Tensor& output_grad);

/// Accumulating variant: adds parameter gradients into grad_acc (shaped like
/// params) and returns the input gradient. Batch loops use this to avoid one
/// store allocation per sample.
Tensor backward_accumulate(std::span<const LayerSpec> net, const ParameterStore& params,
                           const ForwardTrace& trace, const Tensor& output_grad,
                           ParameterStore& grad_acc);

/// Adds this layer stack's gradients into an accumulator (shapes must match).
void accumulate(ParameterStore& into, const ParameterStore& grads);

} // namespace vnd
