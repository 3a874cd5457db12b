#include "mfv/nn.hpp"

#include <cmath>

namespace mfv::nn {

namespace {

Tensor kernel_init(Shape shape, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return random_uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace

ConvLayer conv2d_layer(int in_ch, int out_ch, int ksize, int stride, int pad,
                       bool norm, bool act, Rng& rng) {
    ConvLayer l;
    l.kernel = kernel_init({out_ch, in_ch, ksize, ksize}, rng);
    l.bias = Tensor::zeros({out_ch});
    l.stride = {1, stride, stride};
    l.pad = {0, pad, pad};
    l.instance_norm = norm;
    l.prelu_act = act;
    if (act) l.prelu_slope = Tensor::full({out_ch}, 0.25);
    return l;
}

ConvLayer conv3d_layer(int in_ch, int out_ch, int kt, int ksize, int spatial_stride, int pad_t,
                       int pad_s, bool norm, bool act, Rng& rng) {
    ConvLayer l;
    l.kernel = kernel_init({out_ch, in_ch, kt, ksize, ksize}, rng);
    l.bias = Tensor::zeros({out_ch});
    l.stride = {1, spatial_stride, spatial_stride};
    l.pad = {pad_t, pad_s, pad_s};
    l.instance_norm = norm;
    l.prelu_act = act;
    if (act) l.prelu_slope = Tensor::full({out_ch}, 0.25);
    return l;
}

ad::Var conv_layer_forward(const ConvLayer& layer, ad::Var x, ParamLookup& params) {
    ad::Var k = params.var(layer.kernel);
    ad::Var b = params.var(layer.bias);
    ad::Var y;
    if (layer.is3d()) {
        y = ad::conv3d(x, k, b, layer.stride, layer.pad);
    } else {
        y = ad::conv2d(x, k, b, ops::Stride2{layer.stride.h, layer.stride.w},
                       ops::Pad2{layer.pad.h, layer.pad.w});
    }
    if (layer.instance_norm) y = ad::instance_norm(y, kInstanceNormEps);
    if (layer.prelu_act) y = ad::prelu(y, params.var(layer.prelu_slope));
    return y;
}

ad::Var conv_stack_forward(std::span<const ConvLayer> layers, ad::Var x, ParamLookup& params) {
    for (const ConvLayer& l : layers) x = conv_layer_forward(l, x, params);
    return x;
}

ResBlock3d resblock3d(int in_ch, int out_ch, Rng& rng) {
    ResBlock3d b;
    b.conv_a = conv3d_layer(in_ch, out_ch, 3, 3, 2, 1, 1, true, true, rng);
    b.conv_b = conv3d_layer(out_ch, out_ch, 3, 3, 1, 1, 1, true, false, rng);
    b.skip = conv3d_layer(in_ch, out_ch, 1, 1, 2, 0, 0, true, false, rng);
    b.post_slope = Tensor::full({out_ch}, 0.25);
    return b;
}

ad::Var resblock3d_forward(const ResBlock3d& block, ad::Var x, ParamLookup& params) {
    const Tensor& v = params.tape().value(x);
    check(v.rank() == 5, "shape", "resblock3d expects [B,C,T,H,W], got " + shape_str(v.shape()));
    check(v.dim(3) % 2 == 0 && v.dim(4) % 2 == 0, "shape",
          "resblock3d requires even H and W, got " + shape_str(v.shape()));
    ad::Var main = conv_layer_forward(block.conv_b, conv_layer_forward(block.conv_a, x, params), params);
    ad::Var res = conv_layer_forward(block.skip, x, params);
    return ad::prelu(ad::add(main, res), params.var(block.post_slope));
}

ResBlock2d resblock2d(int in_ch, int out_ch, Rng& rng) {
    ResBlock2d b;
    b.conv_a = conv2d_layer(in_ch, out_ch, 3, 2, 1, true, true, rng);
    b.conv_b = conv2d_layer(out_ch, out_ch, 3, 1, 1, true, false, rng);
    b.skip = conv2d_layer(in_ch, out_ch, 1, 2, 0, true, false, rng);
    b.post_slope = Tensor::full({out_ch}, 0.25);
    return b;
}

ad::Var resblock2d_forward(const ResBlock2d& block, ad::Var x, ParamLookup& params) {
    ad::Var main = conv_layer_forward(block.conv_b, conv_layer_forward(block.conv_a, x, params), params);
    ad::Var res = conv_layer_forward(block.skip, x, params);
    return ad::prelu(ad::add(main, res), params.var(block.post_slope));
}

void visit(ConvLayer& l, const std::string& prefix, const ParamFn& fn) {
    fn(prefix + ".kernel", l.kernel);
    fn(prefix + ".bias", l.bias);
    if (l.prelu_act) fn(prefix + ".slope", l.prelu_slope);
}

void visit(ResBlock3d& b, const std::string& prefix, const ParamFn& fn) {
    visit(b.conv_a, prefix + ".conv_a", fn);
    visit(b.conv_b, prefix + ".conv_b", fn);
    visit(b.skip, prefix + ".skip", fn);
    fn(prefix + ".post_slope", b.post_slope);
}

void visit(ResBlock2d& b, const std::string& prefix, const ParamFn& fn) {
    visit(b.conv_a, prefix + ".conv_a", fn);
    visit(b.conv_b, prefix + ".conv_b", fn);
    visit(b.skip, prefix + ".skip", fn);
    fn(prefix + ".post_slope", b.post_slope);
}

}  // namespace mfv::nn
