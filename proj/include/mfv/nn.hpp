#pragma once

#include <span>
#include <unordered_map>

#include "mfv/autograd.hpp"
#include "mfv/tensor.hpp"

namespace mfv::nn {

inline constexpr double kInstanceNormEps = 1e-5;

// Hands out tape leaves for parameter tensors, one leaf per tensor per pass.
// Keyed by tensor object address; the owning module must stay put while the
// tape is alive.
class ParamLookup {
public:
    ParamLookup(ad::Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

    ad::Var var(const Tensor& t) {
        auto it = cache_.find(&t);
        if (it != cache_.end()) return it->second;
        ad::Var v = tape_->leaf(t, trainable_);
        cache_.emplace(&t, v);
        return v;
    }

    ad::Tape& tape() { return *tape_; }

private:
    ad::Tape* tape_;
    bool trainable_;
    std::unordered_map<const Tensor*, ad::Var> cache_;
};

// Convolution layer with optional instance norm and PReLU, 2D or 3D depending
// on kernel rank. PReLU slope is one scalar per output channel.
struct ConvLayer {
    Tensor kernel;       // [O,C,kH,kW] or [O,C,kT,kH,kW]
    Tensor bias;         // [O]
    Tensor prelu_slope;  // [O], present iff activation enabled
    ops::Stride3 stride{1, 1, 1};  // .t ignored for 2D
    ops::Pad3 pad{0, 0, 0};

    bool instance_norm = false;
    bool prelu_act = false;

    bool is3d() const { return kernel.rank() == 5; }
    int64_t in_channels() const { return kernel.dim(1); }
    int64_t out_channels() const { return kernel.dim(0); }
};

// uniform +-sqrt(6 / fan_in) kernel init, zero bias, 0.25 PReLU slope
ConvLayer conv2d_layer(int in_ch, int out_ch, int ksize, int stride, int pad,
                       bool norm, bool act, Rng& rng);
ConvLayer conv3d_layer(int in_ch, int out_ch, int kt, int ksize, int spatial_stride, int pad_t,
                       int pad_s, bool norm, bool act, Rng& rng);

ad::Var conv_layer_forward(const ConvLayer& layer, ad::Var x, ParamLookup& params);

// conv -> instance norm -> activation per layer, applied in order; the empty
// stack is the identity.
ad::Var conv_stack_forward(std::span<const ConvLayer> layers, ad::Var x, ParamLookup& params);

// Two 3D convolutions with a residual connection; conv_a uses spatial stride 2
// so the block halves H and W and preserves T.
struct ResBlock3d {
    ConvLayer conv_a;    // 3x3x3, spatial stride 2, norm + act
    ConvLayer conv_b;    // 3x3x3, stride 1, norm
    ConvLayer skip;      // 1x1x1, spatial stride 2, norm
    Tensor post_slope;   // PReLU after the residual add
};

ResBlock3d resblock3d(int in_ch, int out_ch, Rng& rng);
ad::Var resblock3d_forward(const ResBlock3d& block, ad::Var x, ParamLookup& params);

// 2D counterpart used by the 2D ablation; shared across the four frames.
struct ResBlock2d {
    ConvLayer conv_a;
    ConvLayer conv_b;
    ConvLayer skip;
    Tensor post_slope;
};

ResBlock2d resblock2d(int in_ch, int out_ch, Rng& rng);
ad::Var resblock2d_forward(const ResBlock2d& block, ad::Var x, ParamLookup& params);

// parameter traversal (stable order, used for init/io/optimizer)
using ParamFn = std::function<void(const std::string&, Tensor&)>;
void visit(ConvLayer& l, const std::string& prefix, const ParamFn& fn);
void visit(ResBlock3d& b, const std::string& prefix, const ParamFn& fn);
void visit(ResBlock2d& b, const std::string& prefix, const ParamFn& fn);

}  // namespace mfv::nn
