#include "vnd/layers.hpp"

#include <algorithm>
#include <cmath>

#include "vnd/errors.hpp"

namespace vnd {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::transposed_conv2d: return "transposed_conv2d";
    case LayerKind::activation: return "activation";
    }
    return "?";
}

const char* activation_name(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
    }
    return "?";
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation: " + s);
}

LayerSpec LayerSpec::dense(std::size_t units, Shape reshape) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    s.reshape = std::move(reshape);
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t channels, std::size_t filter, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.units = channels;
    s.filter = {filter, filter};
    s.stride = {stride, stride};
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t filter, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool2d;
    s.filter = {filter, filter};
    s.stride = {stride, stride};
    return s;
}

LayerSpec LayerSpec::transposed_conv2d(std::size_t channels, std::size_t filter,
                                       std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::transposed_conv2d;
    s.units = channels;
    s.filter = {filter, filter};
    s.stride = {stride, stride};
    return s;
}

LayerSpec LayerSpec::activation(Activation a) {
    LayerSpec s;
    s.kind = LayerKind::activation;
    s.act = a;
    return s;
}

std::size_t ParameterStore::total_size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
    return n;
}

void ParameterStore::fill(double v) {
    for (auto& l : layers) {
        l.weight.fill(v);
        l.bias.fill(v);
    }
}

void ParameterStore::add_scaled(const ParameterStore& other, double factor) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& dst = layers[i];
        const auto& src = other.layers[i];
        for (std::size_t j = 0; j < dst.weight.numel(); ++j) dst.weight[j] += factor * src.weight[j];
        for (std::size_t j = 0; j < dst.bias.numel(); ++j) dst.bias[j] += factor * src.bias[j];
    }
}

bool ParameterStore::all_finite() const {
    for (const auto& l : layers)
        if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
    return true;
}

namespace {

[[noreturn]] void layer_error(std::size_t idx, const LayerSpec& spec, const std::string& msg) {
    throw ConfigError("layer " + std::to_string(idx) + " (" + layer_kind_name(spec.kind) +
                      "): " + msg);
}

struct Image {
    std::size_t c, h, w;
};

Image as_image(const Shape& s, std::size_t idx, const LayerSpec& spec) {
    if (s.size() == 3) return {s[0], s[1], s[2]};
    if (s.size() == 2) return {1, s[0], s[1]};
    layer_error(idx, spec, "expects a [channels, height, width] input, got " + shape_str(s));
}

// "Same" zero padding: output spatial extent is ceil(in / stride).
std::size_t same_out(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

std::size_t same_pad_begin(std::size_t in, std::size_t filter, std::size_t stride) {
    const std::size_t out = same_out(in, stride);
    const std::size_t span = (out - 1) * stride + filter;
    return span > in ? (span - in) / 2 : 0;
}

} // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in, std::size_t idx) {
    switch (spec.kind) {
    case LayerKind::dense: {
        if (spec.units == 0) layer_error(idx, spec, "needs a positive unit count");
        if (!spec.reshape.empty()) {
            if (shape_numel(spec.reshape) != spec.units)
                layer_error(idx, spec,
                            "reshape " + shape_str(spec.reshape) + " does not hold " +
                                std::to_string(spec.units) + " units");
            return spec.reshape;
        }
        return {spec.units};
    }
    case LayerKind::conv2d: {
        const Image im = as_image(in, idx, spec);
        if (spec.units == 0) layer_error(idx, spec, "needs a positive channel count");
        return {spec.units, same_out(im.h, spec.stride[0]), same_out(im.w, spec.stride[1])};
    }
    case LayerKind::maxpool2d: {
        const Image im = as_image(in, idx, spec);
        if (im.h < spec.filter[0] || im.w < spec.filter[1])
            layer_error(idx, spec, "pool window larger than input " + shape_str(in));
        return {im.c, (im.h - spec.filter[0]) / spec.stride[0] + 1,
                (im.w - spec.filter[1]) / spec.stride[1] + 1};
    }
    case LayerKind::transposed_conv2d: {
        const Image im = as_image(in, idx, spec);
        if (spec.units == 0) layer_error(idx, spec, "needs a positive channel count");
        return {spec.units, (im.h - 1) * spec.stride[0] + spec.filter[0],
                (im.w - 1) * spec.stride[1] + spec.filter[1]};
    }
    case LayerKind::activation:
        return in;
    }
    throw ConfigError("unreachable layer kind");
}

std::vector<Shape> infer_shapes(std::span<const LayerSpec> net, const Shape& input) {
    std::vector<Shape> shapes;
    shapes.reserve(net.size() + 1);
    shapes.push_back(input);
    for (std::size_t i = 0; i < net.size(); ++i)
        shapes.push_back(layer_output_shape(net[i], shapes.back(), i));
    return shapes;
}

ParameterStore init_params(std::span<const LayerSpec> net, const Shape& input, Rng& rng) {
    ParameterStore store;
    store.layers.resize(net.size());
    Shape cur = input;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const LayerSpec& spec = net[i];
        const Shape out = layer_output_shape(spec, cur, i);
        std::size_t fan_in = 0;
        switch (spec.kind) {
        case LayerKind::dense: {
            const std::size_t in_n = shape_numel(cur);
            store.layers[i].weight = Tensor({spec.units, in_n});
            store.layers[i].bias = Tensor({spec.units});
            fan_in = in_n;
            break;
        }
        case LayerKind::conv2d: {
            const Image im = as_image(cur, i, spec);
            store.layers[i].weight = Tensor({spec.units, im.c, spec.filter[0], spec.filter[1]});
            store.layers[i].bias = Tensor({spec.units});
            fan_in = im.c * spec.filter[0] * spec.filter[1];
            break;
        }
        case LayerKind::transposed_conv2d: {
            const Image im = as_image(cur, i, spec);
            store.layers[i].weight = Tensor({im.c, spec.units, spec.filter[0], spec.filter[1]});
            store.layers[i].bias = Tensor({spec.units});
            fan_in = im.c * spec.filter[0] * spec.filter[1];
            break;
        }
        default:
            break;
        }
        if (fan_in > 0) {
            const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : store.layers[i].weight.data) v = rng.uniform(-limit, limit);
            for (auto& v : store.layers[i].bias.data) v = rng.uniform(-limit, limit);
        }
        cur = out;
    }
    return store;
}

ParameterStore zeros_like(const ParameterStore& p) {
    ParameterStore z;
    z.layers.resize(p.layers.size());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        if (!p.layers[i].weight.shape.empty())
            z.layers[i].weight = Tensor(p.layers[i].weight.shape);
        if (!p.layers[i].bias.shape.empty())
            z.layers[i].bias = Tensor(p.layers[i].bias.shape);
    }
    return z;
}

namespace {

void dense_forward(const LayerSpec& spec, const LayerParams& par, const Tensor& in, Tensor& out) {
    const std::size_t n_in = in.numel();
    const std::size_t n_out = spec.units;
    const double* w = par.weight.data.data();
    for (std::size_t o = 0; o < n_out; ++o) {
        double acc = par.bias[o];
        const double* row = w + o * n_in;
        for (std::size_t j = 0; j < n_in; ++j) acc += row[j] * in[j];
        out[o] = acc;
    }
}

// valid output range [lo, hi) for which in_pos = out_pos + k - pad stays inside
// [0, in_extent); stride-1 convolutions use it to strip bounds checks from the
// inner loops
std::pair<std::size_t, std::size_t> valid_span(std::size_t out_extent, std::size_t in_extent,
                                               std::size_t k, std::size_t pad) {
    const std::size_t lo = pad > k ? pad - k : 0;
    const std::size_t hi = std::min(out_extent, in_extent + pad - k);
    return {lo, std::max(lo, hi)};
}

void conv2d_forward(const LayerSpec& spec, const LayerParams& par, const Tensor& in,
                    const Shape& in_shape, Tensor& out, const Shape& out_shape) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oc_n = out_shape[0], oh = out_shape[1], ow = out_shape[2];
    const std::size_t fy = spec.filter[0], fx = spec.filter[1];
    const std::size_t sy = spec.stride[0], sx = spec.stride[1];
    const std::size_t pt = same_pad_begin(im.h, fy, sy), pl = same_pad_begin(im.w, fx, sx);

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        double* out_c = out.data.data() + oc * oh * ow;
        const double b = par.bias[oc];
        for (std::size_t i = 0; i < oh * ow; ++i) out_c[i] = b;
        for (std::size_t ic = 0; ic < im.c; ++ic) {
            const double* in_c = in.data.data() + ic * im.h * im.w;
            const double* w = par.weight.data.data() + ((oc * im.c + ic) * fy) * fx;
            for (std::size_t ky = 0; ky < fy; ++ky) {
                for (std::size_t kx = 0; kx < fx; ++kx) {
                    const double wv = w[ky * fx + kx];
                    if (sy == 1 && sx == 1) {
                        const auto [ylo, yhi] = valid_span(oh, im.h, ky, pt);
                        const auto [xlo, xhi] = valid_span(ow, im.w, kx, pl);
                        const std::ptrdiff_t xoff =
                            static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pl);
                        for (std::size_t oy = ylo; oy < yhi; ++oy) {
                            const double* in_row = in_c + (oy + ky - pt) * im.w;
                            double* out_row = out_c + oy * ow;
                            for (std::size_t ox = xlo; ox < xhi; ++ox)
                                out_row[ox] += wv * in_row[static_cast<std::ptrdiff_t>(ox) + xoff];
                        }
                        continue;
                    }
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * sy + ky) - static_cast<std::ptrdiff_t>(pt);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(im.h)) continue;
                        const double* in_row = in_c + iy * im.w;
                        double* out_row = out_c + oy * ow;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * sx + kx) - static_cast<std::ptrdiff_t>(pl);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(im.w)) continue;
                            out_row[ox] += wv * in_row[ix];
                        }
                    }
                }
            }
        }
    }
}

void maxpool_forward(const LayerSpec& spec, const Tensor& in, const Shape& in_shape, Tensor& out,
                     const Shape& out_shape) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oh = out_shape[1], ow = out_shape[2];
    for (std::size_t c = 0; c < im.c; ++c) {
        const double* in_c = in.data.data() + c * im.h * im.w;
        double* out_c = out.data.data() + c * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t y0 = oy * spec.stride[0], x0 = ox * spec.stride[1];
                double best = in_c[y0 * im.w + x0];
                for (std::size_t ky = 0; ky < spec.filter[0]; ++ky)
                    for (std::size_t kx = 0; kx < spec.filter[1]; ++kx)
                        best = std::max(best, in_c[(y0 + ky) * im.w + (x0 + kx)]);
                out_c[oy * ow + ox] = best;
            }
        }
    }
}

void tconv_forward(const LayerSpec& spec, const LayerParams& par, const Tensor& in,
                   const Shape& in_shape, Tensor& out, const Shape& out_shape) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oc_n = out_shape[0], oh = out_shape[1], ow = out_shape[2];
    const std::size_t fy = spec.filter[0], fx = spec.filter[1];
    const std::size_t sy = spec.stride[0], sx = spec.stride[1];

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        double* out_c = out.data.data() + oc * oh * ow;
        const double b = par.bias[oc];
        for (std::size_t i = 0; i < oh * ow; ++i) out_c[i] = b;
    }
    for (std::size_t ic = 0; ic < im.c; ++ic) {
        const double* in_c = in.data.data() + ic * im.h * im.w;
        for (std::size_t oc = 0; oc < oc_n; ++oc) {
            const double* w = par.weight.data.data() + ((ic * oc_n + oc) * fy) * fx;
            double* out_c = out.data.data() + oc * oh * ow;
            for (std::size_t iy = 0; iy < im.h; ++iy) {
                for (std::size_t ix = 0; ix < im.w; ++ix) {
                    const double v = in_c[iy * im.w + ix];
                    if (v == 0.0) continue;
                    double* base = out_c + (iy * sy) * ow + ix * sx;
                    for (std::size_t ky = 0; ky < fy; ++ky)
                        for (std::size_t kx = 0; kx < fx; ++kx)
                            base[ky * ow + kx] += w[ky * fx + kx] * v;
                }
            }
        }
    }
}

void activation_forward(const LayerSpec& spec, const Tensor& in, Tensor& out) {
    switch (spec.act) {
    case Activation::relu:
        for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
    case Activation::sigmoid:
        for (std::size_t i = 0; i < in.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
        break;
    case Activation::identity:
        out.data = in.data;
        break;
    }
}

} // namespace

ForwardTrace forward_trace(std::span<const LayerSpec> net, const ParameterStore& params,
                           const Tensor& input) {
    if (params.layers.size() != net.size())
        throw ConfigError("parameter store has " + std::to_string(params.layers.size()) +
                          " layers, network has " + std::to_string(net.size()));
    const std::vector<Shape> shapes = infer_shapes(net, input.shape);
    ForwardTrace trace;
    trace.activations.reserve(net.size() + 1);
    trace.activations.push_back(input);
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Tensor& in = trace.activations.back();
        Tensor out(shapes[i + 1]);
        switch (net[i].kind) {
        case LayerKind::dense:
            dense_forward(net[i], params.layers[i], in, out);
            break;
        case LayerKind::conv2d:
            conv2d_forward(net[i], params.layers[i], in, shapes[i], out, shapes[i + 1]);
            break;
        case LayerKind::maxpool2d:
            maxpool_forward(net[i], in, shapes[i], out, shapes[i + 1]);
            break;
        case LayerKind::transposed_conv2d:
            tconv_forward(net[i], params.layers[i], in, shapes[i], out, shapes[i + 1]);
            break;
        case LayerKind::activation:
            activation_forward(net[i], in, out);
            break;
        }
        trace.activations.push_back(std::move(out));
    }
    return trace;
}

Tensor forward(std::span<const LayerSpec> net, const ParameterStore& params, const Tensor& input) {
    return forward_trace(net, params, input).activations.back();
}

namespace {

void dense_backward(const LayerSpec& spec, const LayerParams& par, const Tensor& in,
                    const Tensor& gout, LayerParams& gpar, Tensor& gin) {
    const std::size_t n_in = in.numel(), n_out = spec.units;
    const double* w = par.weight.data.data();
    double* gw = gpar.weight.data.data();
    for (std::size_t o = 0; o < n_out; ++o) {
        const double g = gout[o];
        gpar.bias[o] += g;
        double* gw_row = gw + o * n_in;
        const double* w_row = w + o * n_in;
        for (std::size_t j = 0; j < n_in; ++j) {
            gw_row[j] += g * in[j];
            gin[j] += g * w_row[j];
        }
    }
}

void conv2d_backward(const LayerSpec& spec, const LayerParams& par, const Tensor& in,
                     const Shape& in_shape, const Tensor& gout, const Shape& out_shape,
                     LayerParams& gpar, Tensor& gin) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oc_n = out_shape[0], oh = out_shape[1], ow = out_shape[2];
    const std::size_t fy = spec.filter[0], fx = spec.filter[1];
    const std::size_t sy = spec.stride[0], sx = spec.stride[1];
    const std::size_t pt = same_pad_begin(im.h, fy, sy), pl = same_pad_begin(im.w, fx, sx);

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        const double* g_c = gout.data.data() + oc * oh * ow;
        double bacc = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) bacc += g_c[i];
        gpar.bias[oc] += bacc;
        for (std::size_t ic = 0; ic < im.c; ++ic) {
            const double* in_c = in.data.data() + ic * im.h * im.w;
            double* gin_c = gin.data.data() + ic * im.h * im.w;
            const double* w = par.weight.data.data() + ((oc * im.c + ic) * fy) * fx;
            double* gw = gpar.weight.data.data() + ((oc * im.c + ic) * fy) * fx;
            for (std::size_t ky = 0; ky < fy; ++ky) {
                for (std::size_t kx = 0; kx < fx; ++kx) {
                    const double wv = w[ky * fx + kx];
                    double wacc = 0.0;
                    if (sy == 1 && sx == 1) {
                        const auto [ylo, yhi] = valid_span(oh, im.h, ky, pt);
                        const auto [xlo, xhi] = valid_span(ow, im.w, kx, pl);
                        const std::ptrdiff_t xoff =
                            static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pl);
                        for (std::size_t oy = ylo; oy < yhi; ++oy) {
                            const std::size_t row = (oy + ky - pt) * im.w;
                            const double* in_row = in_c + row;
                            double* gin_row = gin_c + row;
                            const double* g_row = g_c + oy * ow;
                            for (std::size_t ox = xlo; ox < xhi; ++ox) {
                                const double g = g_row[ox];
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) + xoff;
                                wacc += g * in_row[ix];
                                gin_row[ix] += g * wv;
                            }
                        }
                        gw[ky * fx + kx] += wacc;
                        continue;
                    }
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * sy + ky) - static_cast<std::ptrdiff_t>(pt);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(im.h)) continue;
                        const double* in_row = in_c + iy * im.w;
                        double* gin_row = gin_c + iy * im.w;
                        const double* g_row = g_c + oy * ow;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * sx + kx) - static_cast<std::ptrdiff_t>(pl);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(im.w)) continue;
                            const double g = g_row[ox];
                            wacc += g * in_row[ix];
                            gin_row[ix] += g * wv;
                        }
                    }
                    gw[ky * fx + kx] += wacc;
                }
            }
        }
    }
}

void maxpool_backward(const LayerSpec& spec, const Tensor& in, const Shape& in_shape,
                      const Tensor& gout, const Shape& out_shape, Tensor& gin) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oh = out_shape[1], ow = out_shape[2];
    for (std::size_t c = 0; c < im.c; ++c) {
        const double* in_c = in.data.data() + c * im.h * im.w;
        double* gin_c = gin.data.data() + c * im.h * im.w;
        const double* g_c = gout.data.data() + c * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t y0 = oy * spec.stride[0], x0 = ox * spec.stride[1];
                // first maximum wins on ties
                std::size_t best = y0 * im.w + x0;
                for (std::size_t ky = 0; ky < spec.filter[0]; ++ky)
                    for (std::size_t kx = 0; kx < spec.filter[1]; ++kx) {
                        const std::size_t at = (y0 + ky) * im.w + (x0 + kx);
                        if (in_c[at] > in_c[best]) best = at;
                    }
                gin_c[best] += g_c[oy * ow + ox];
            }
        }
    }
}

void tconv_backward(const LayerSpec& spec, const LayerParams& par, const Tensor& in,
                    const Shape& in_shape, const Tensor& gout, const Shape& out_shape,
                    LayerParams& gpar, Tensor& gin) {
    const Image im{in_shape.size() == 3 ? in_shape[0] : 1, in_shape[in_shape.size() - 2],
                   in_shape.back()};
    const std::size_t oc_n = out_shape[0], oh = out_shape[1], ow = out_shape[2];
    const std::size_t fy = spec.filter[0], fx = spec.filter[1];
    const std::size_t sy = spec.stride[0], sx = spec.stride[1];

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        const double* g_c = gout.data.data() + oc * oh * ow;
        double bacc = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) bacc += g_c[i];
        gpar.bias[oc] += bacc;
    }
    for (std::size_t ic = 0; ic < im.c; ++ic) {
        const double* in_c = in.data.data() + ic * im.h * im.w;
        double* gin_c = gin.data.data() + ic * im.h * im.w;
        for (std::size_t oc = 0; oc < oc_n; ++oc) {
            const double* w = par.weight.data.data() + ((ic * oc_n + oc) * fy) * fx;
            double* gw = gpar.weight.data.data() + ((ic * oc_n + oc) * fy) * fx;
            const double* g_c = gout.data.data() + oc * oh * ow;
            for (std::size_t iy = 0; iy < im.h; ++iy) {
                for (std::size_t ix = 0; ix < im.w; ++ix) {
                    const double v = in_c[iy * im.w + ix];
                    const double* base = g_c + (iy * sy) * ow + ix * sx;
                    double iacc = 0.0;
                    for (std::size_t ky = 0; ky < fy; ++ky)
                        for (std::size_t kx = 0; kx < fx; ++kx) {
                            const double g = base[ky * ow + kx];
                            gw[ky * fx + kx] += g * v;
                            iacc += g * w[ky * fx + kx];
                        }
                    gin_c[iy * im.w + ix] += iacc;
                }
            }
        }
    }
}

void activation_backward(const LayerSpec& spec, const Tensor& in, const Tensor& out,
                         const Tensor& gout, Tensor& gin) {
    switch (spec.act) {
    case Activation::relu:
        for (std::size_t i = 0; i < in.numel(); ++i) gin[i] = in[i] > 0.0 ? gout[i] : 0.0;
        break;
    case Activation::sigmoid:
        for (std::size_t i = 0; i < in.numel(); ++i) gin[i] = gout[i] * out[i] * (1.0 - out[i]);
        break;
    case Activation::identity:
        gin.data = gout.data;
        break;
    }
}

} // namespace

Tensor backward_accumulate(std::span<const LayerSpec> net, const ParameterStore& params,
                           const ForwardTrace& trace, const Tensor& output_grad,
                           ParameterStore& grad_acc) {
    if (trace.activations.size() != net.size() + 1)
        throw ConfigError("forward trace does not match network depth");
    if (!same_shape(output_grad.shape, trace.activations.back().shape))
        throw ConfigError("output gradient shape " + shape_str(output_grad.shape) +
                          " does not match network output " +
                          shape_str(trace.activations.back().shape));

    Tensor grad = output_grad;
    for (std::size_t ri = net.size(); ri-- > 0;) {
        const Tensor& in = trace.activations[ri];
        const Tensor& out = trace.activations[ri + 1];
        Tensor gin(in.shape);
        switch (net[ri].kind) {
        case LayerKind::dense:
            dense_backward(net[ri], params.layers[ri], in, grad, grad_acc.layers[ri], gin);
            break;
        case LayerKind::conv2d:
            conv2d_backward(net[ri], params.layers[ri], in, in.shape, grad, out.shape,
                            grad_acc.layers[ri], gin);
            break;
        case LayerKind::maxpool2d:
            maxpool_backward(net[ri], in, in.shape, grad, out.shape, gin);
            break;
        case LayerKind::transposed_conv2d:
            tconv_backward(net[ri], params.layers[ri], in, in.shape, grad, out.shape,
                           grad_acc.layers[ri], gin);
            break;
        case LayerKind::activation:
            activation_backward(net[ri], in, out, grad, gin);
            break;
        }
        grad = std::move(gin);
    }
    return grad;
}

BackwardResult backward(std::span<const LayerSpec> net, const ParameterStore& params,
                        const ForwardTrace& trace, const Tensor& output_grad) {
    BackwardResult res;
    res.param_grads = zeros_like(params);
    res.input_grad = backward_accumulate(net, params, trace, output_grad, res.param_grads);
    return res;
}

BackwardResult backward(std::span<const LayerSpec> net, const ParameterStore& params,
                        const Tensor& input, const Tensor& output_grad) {
    return backward(net, params, forward_trace(net, params, input), output_grad);
}

void accumulate(ParameterStore& into, const ParameterStore& grads) {
    into.add_scaled(grads, 1.0);
}

} // namespace vnd
