#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mfv/multiflow.hpp"
#include "mfv/nn.hpp"

namespace mfv {

struct ModelConfig {
    int levels = 6;               // pyramid depth L; extents must divide 2^levels
    int coarsest_flow_level = 3;  // L0, first level that predicts flows
    int flows = 25;               // M offsets per frame per pixel
    bool use_3d = true;           // false: per-frame 2D residual blocks instead
    std::vector<int> feature_channels = {32, 48, 64, 96, 128, 160};
    int mfb_width = 96;
    int mfb_depth = 4;
    int context_channels = 64;
    std::vector<int> synth_channels = {32, 64, 96};
    int synth_columns = 6;
    double midpoint = 1.5;  // the model is trained only for this instant

    static ModelConfig defaults() { return ModelConfig{}; }
    static ModelConfig toy();  // desk-scale preset for the synthetic trainer

    void validate() const;
    int synth_rows() const;           // min(3, L0+1): one row per available fused scale
    int64_t divisibility() const { return int64_t(1) << levels; }
};

// Ordered name -> tensor snapshot of every parameter.
struct ModelWeights {
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
};

struct MultiFlowBlock {
    std::vector<nn::ConvLayer> stack;
    nn::ConvLayer head_alpha;  // -> [B,4M,h,w]
    nn::ConvLayer head_beta;
    nn::ConvLayer head_omega;
    nn::ConvLayer head_vis;  // -> [B,4,h,w]
};

struct SynthesisNet {
    std::vector<nn::ConvLayer> entry;                  // per row
    std::vector<std::vector<nn::ConvLayer>> lateral;   // [row][column]
    std::vector<std::vector<nn::ConvLayer>> down;      // [row-1][first-half column]
    std::vector<std::vector<nn::ConvLayer>> up;        // [row][second-half column]
    nn::ConvLayer head;                                // -> 3 channels, no norm/act
};

class Model {
public:
    Model(ModelConfig cfg, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }

    void visit_params(const nn::ParamFn& fn);
    void visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    int64_t param_count() const;

    ModelWeights snapshot() const;
    void load(const ModelWeights& weights);  // shape conflicts name the parameter

    // submodules (read by the forward pass)
    std::vector<nn::ResBlock3d> extractor3d;
    std::vector<nn::ResBlock2d> extractor2d;
    nn::ConvLayer context;
    std::vector<MultiFlowBlock> mfbs;  // index 0 = level L0, last = level 0
    SynthesisNet synth;

    const MultiFlowBlock& mfb_at_level(int level) const;

private:
    ModelConfig cfg_;
};

// Everything one forward pass produces. Tape handles (raw output, per-level
// fused candidates) stay valid while the tape lives and feed the losses.
struct ForwardArtifacts {
    std::vector<Tensor> pyramid;              // phi^1..phi^L
    std::vector<mf::LevelFlows> level_flows;  // levels L0..0, coarse first
    std::vector<Tensor> fused;                // same order as level_flows
    std::vector<int> fused_levels;
    Tensor warped_context;
    Tensor output;  // clamped to [0,1]

    ad::Var output_raw;                // unclamped, for the training loss
    std::vector<ad::Var> fused_vars;   // same order as fused
    std::vector<std::array<ad::Var, 4>> frames_at_level;  // downsampled inputs, levels 0..L0
};

// frames: four [B,3,H,W] tensors ordered in time; H, W divisible by 2^L.
ForwardArtifacts model_forward(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                               const std::array<ad::Var, 4>& frames);

// convenience: leaf the frames on a fresh internal tape, no gradients
ForwardArtifacts model_infer(const Model& model, const std::array<Tensor, 4>& frames,
                             ad::Tape& tape);

// spec'd sub-operations, exposed for tests and composition
std::vector<ad::Var> build_feature_pyramid(ad::Tape& tape, const Model& model,
                                           nn::ParamLookup& params,
                                           const std::array<ad::Var, 4>& frames);

struct MfbResult {
    ad::Var psi;
    mf::LevelFlowsVar flows;
    mf::LevelFlowsVar flows_upsampled;  // seed/upsampled flows the block refined
};

MfbResult run_mfb(ad::Tape& tape, const Model& model, nn::ParamLookup& params, int level,
                  std::optional<ad::Var> psi_prev, std::optional<mf::LevelFlowsVar> flows_prev,
                  ad::Var phi_l, const std::array<ad::Var, 4>& frames_l);

std::array<ad::Var, 4> extract_context(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                                       const std::array<ad::Var, 4>& frames);

ad::Var synthesize(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                   const std::vector<ad::Var>& fused_fine_first, ad::Var warped_context);

}  // namespace mfv
