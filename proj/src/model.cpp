#include "mfv/model.hpp"

#include <algorithm>

namespace mfv {

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.levels = 5;
    c.coarsest_flow_level = 2;
    c.flows = 9;
    c.feature_channels = {16, 24, 32, 48, 64};
    c.mfb_width = 32;
    c.mfb_depth = 3;
    c.context_channels = 12;
    c.synth_channels = {16, 24, 32};
    return c;
}

void ModelConfig::validate() const {
    check(levels >= 1, "config", "levels must be >= 1");
    check(coarsest_flow_level >= 0 && coarsest_flow_level < levels, "config",
          "coarsest_flow_level must satisfy 0 <= L0 < L");
    check(flows >= 1, "config", "flows must be >= 1");
    check(static_cast<int>(feature_channels.size()) == levels, "config",
          "feature_channels must list one width per level (" + std::to_string(levels) + ")");
    for (int c : feature_channels) check(c >= 1, "config", "feature channel widths must be >= 1");
    check(mfb_width >= 1 && mfb_depth >= 1, "config", "mfb_width and mfb_depth must be >= 1");
    check(context_channels >= 1, "config", "context_channels must be >= 1");
    check(static_cast<int>(synth_channels.size()) >= synth_rows(), "config",
          "synth_channels must cover " + std::to_string(synth_rows()) + " rows");
    check(synth_columns >= 2 && synth_columns % 2 == 0, "config",
          "synth_columns must be even and >= 2");
    check(midpoint == 1.5, "config", "the model interpolates only the fixed midpoint t=1.5");
}

int ModelConfig::synth_rows() const { return std::min(3, coarsest_flow_level + 1); }

const Tensor* ModelWeights::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

namespace {

int flow_feature_channels(int m) { return 4 * (3 * m) + 4; }

int mfb_input_channels(const ModelConfig& cfg, int level) {
    int phi_ch = level == 0 ? 3 : cfg.feature_channels[static_cast<size_t>(level - 1)];
    return 12 + 4 * phi_ch + cfg.mfb_width + flow_feature_channels(cfg.flows);
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);

    int in_ch = 3;
    for (int l = 1; l <= cfg_.levels; ++l) {
        int out_ch = cfg_.feature_channels[static_cast<size_t>(l - 1)];
        if (cfg_.use_3d)
            extractor3d.push_back(nn::resblock3d(in_ch, out_ch, rng));
        else
            extractor2d.push_back(nn::resblock2d(in_ch, out_ch, rng));
        in_ch = out_ch;
    }

    context = nn::conv2d_layer(3, cfg_.context_channels, 7, 1, 3, false, true, rng);

    for (int level = cfg_.coarsest_flow_level; level >= 0; --level) {
        MultiFlowBlock mfb;
        int ch = mfb_input_channels(cfg_, level);
        for (int i = 0; i < cfg_.mfb_depth; ++i) {
            mfb.stack.push_back(nn::conv2d_layer(i == 0 ? ch : cfg_.mfb_width, cfg_.mfb_width, 3, 1,
                                                 1, true, true, rng));
        }
        int m4 = 4 * cfg_.flows;
        mfb.head_alpha = nn::conv2d_layer(cfg_.mfb_width, m4, 3, 1, 1, false, false, rng);
        mfb.head_beta = nn::conv2d_layer(cfg_.mfb_width, m4, 3, 1, 1, false, false, rng);
        mfb.head_omega = nn::conv2d_layer(cfg_.mfb_width, m4, 3, 1, 1, false, false, rng);
        mfb.head_vis = nn::conv2d_layer(cfg_.mfb_width, 4, 3, 1, 1, false, false, rng);
        // Near-zero heads: the cascade begins from ~zero offsets and ~uniform
        // omega instead of random warps. The +-1e-3 jitter keeps the M taps
        // and their gradients from staying identical (exact zeros lock them).
        for (nn::ConvLayer* head : {&mfb.head_alpha, &mfb.head_beta, &mfb.head_omega})
            head->kernel = random_uniform(head->kernel.shape(), -1e-3, 1e-3, rng);
        mfb.head_vis.kernel = random_uniform(mfb.head_vis.kernel.shape(), -1e-3, 1e-3, rng);
        // start the blend on the two frames adjacent to the midpoint
        float* vb = mfb.head_vis.bias.mut_f32();
        vb[0] = -1.0f;
        vb[1] = 1.0f;
        vb[2] = 1.0f;
        vb[3] = -1.0f;
        mfbs.push_back(std::move(mfb));
    }

    // No instance norm anywhere in the synthesis grid: normalization strips
    // the scale of the correction signal, so a motionless scene (whose
    // features carry almost no information) would still be renormalized into
    // unit-variance activations and emit spurious corrections.
    int rows = cfg_.synth_rows();
    int cols = cfg_.synth_columns;
    for (int r = 0; r < rows; ++r) {
        int wr = cfg_.synth_channels[static_cast<size_t>(r)];
        int in = 3 + (r == 0 ? cfg_.context_channels : 0);
        synth.entry.push_back(nn::conv2d_layer(in, wr, 3, 1, 1, false, true, rng));
    }
    synth.lateral.resize(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        int wr = cfg_.synth_channels[static_cast<size_t>(r)];
        for (int c = 0; c < cols; ++c)
            synth.lateral[static_cast<size_t>(r)].push_back(
                nn::conv2d_layer(wr, wr, 3, 1, 1, false, true, rng));
    }
    synth.down.resize(static_cast<size_t>(std::max(0, rows - 1)));
    for (int r = 1; r < rows; ++r) {
        int win = cfg_.synth_channels[static_cast<size_t>(r - 1)];
        int wout = cfg_.synth_channels[static_cast<size_t>(r)];
        for (int c = 0; c < cols / 2; ++c)
            synth.down[static_cast<size_t>(r - 1)].push_back(
                nn::conv2d_layer(win, wout, 3, 2, 1, false, true, rng));
    }
    synth.up.resize(static_cast<size_t>(std::max(0, rows - 1)));
    for (int r = 0; r < rows - 1; ++r) {
        int win = cfg_.synth_channels[static_cast<size_t>(r + 1)];
        int wout = cfg_.synth_channels[static_cast<size_t>(r)];
        for (int c = 0; c < cols / 2; ++c)
            synth.up[static_cast<size_t>(r)].push_back(
                nn::conv2d_layer(win, wout, 3, 1, 1, false, true, rng));
    }
    synth.head = nn::conv2d_layer(cfg_.synth_channels[0], 3, 3, 1, 1, false, false, rng);
    // zero-started head: the first forward emits the fused candidate unchanged
    synth.head.kernel = Tensor::zeros(synth.head.kernel.shape());
}

void Model::visit_params(const nn::ParamFn& fn) {
    for (size_t i = 0; i < extractor3d.size(); ++i)
        nn::visit(extractor3d[i], "extractor." + std::to_string(i + 1), fn);
    for (size_t i = 0; i < extractor2d.size(); ++i)
        nn::visit(extractor2d[i], "extractor." + std::to_string(i + 1), fn);
    nn::visit(context, "context", fn);
    for (size_t i = 0; i < mfbs.size(); ++i) {
        int level = cfg_.coarsest_flow_level - static_cast<int>(i);
        std::string p = "mfb." + std::to_string(level);
        MultiFlowBlock& b = mfbs[i];
        for (size_t j = 0; j < b.stack.size(); ++j)
            nn::visit(b.stack[j], p + ".stack." + std::to_string(j), fn);
        nn::visit(b.head_alpha, p + ".head_alpha", fn);
        nn::visit(b.head_beta, p + ".head_beta", fn);
        nn::visit(b.head_omega, p + ".head_omega", fn);
        nn::visit(b.head_vis, p + ".head_vis", fn);
    }
    for (size_t r = 0; r < synth.entry.size(); ++r)
        nn::visit(synth.entry[r], "synth.entry." + std::to_string(r), fn);
    for (size_t r = 0; r < synth.lateral.size(); ++r)
        for (size_t c = 0; c < synth.lateral[r].size(); ++c)
            nn::visit(synth.lateral[r][c],
                      "synth.lateral." + std::to_string(r) + "." + std::to_string(c), fn);
    for (size_t r = 0; r < synth.down.size(); ++r)
        for (size_t c = 0; c < synth.down[r].size(); ++c)
            nn::visit(synth.down[r][c], "synth.down." + std::to_string(r + 1) + "." + std::to_string(c),
                      fn);
    for (size_t r = 0; r < synth.up.size(); ++r)
        for (size_t c = 0; c < synth.up[r].size(); ++c)
            nn::visit(synth.up[r][c], "synth.up." + std::to_string(r) + "." + std::to_string(c), fn);
    nn::visit(synth.head, "synth.head", fn);
}

void Model::visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<Model*>(this)->visit_params(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

int64_t Model::param_count() const {
    int64_t n = 0;
    visit_params([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

ModelWeights Model::snapshot() const {
    ModelWeights w;
    visit_params([&](const std::string& name, const Tensor& t) {
        w.entries.emplace_back(name, t.clone());
    });
    return w;
}

void Model::load(const ModelWeights& weights) {
    size_t used = 0;
    visit_params([&](const std::string& name, Tensor& t) {
        const Tensor* src = weights.find(name);
        check(src != nullptr, "shape-conflict", "parameter '" + name + "' missing from weights");
        check(src->shape() == t.shape(), "shape-conflict",
              "parameter '" + name + "' has shape " + shape_str(src->shape()) +
                  " but the configuration expects " + shape_str(t.shape()));
        check(src->dtype() == DType::f32, "shape-conflict",
              "parameter '" + name + "' must be float32");
        t = src->clone();
        ++used;
    });
    check(used == weights.entries.size(), "shape-conflict",
          "weights contain " + std::to_string(weights.entries.size()) + " parameters but the model has " +
              std::to_string(used));
}

const MultiFlowBlock& Model::mfb_at_level(int level) const {
    int idx = cfg_.coarsest_flow_level - level;
    check(idx >= 0 && idx < static_cast<int>(mfbs.size()), "config",
          "no multi-flow block at level " + std::to_string(level));
    return mfbs[static_cast<size_t>(idx)];
}

// ---------------------------------------------------------------------------

namespace {

void check_frames(ad::Tape& tape, const ModelConfig& cfg, const std::array<ad::Var, 4>& frames) {
    const Tensor& f0 = tape.value(frames[0]);
    check(f0.rank() == 4 && f0.dim(1) == 3, "shape",
          "input frames must be [B,3,H,W], got " + shape_str(f0.shape()));
    for (const ad::Var& f : frames)
        check(tape.value(f).same_shape(f0), "size-mismatch", "input frames must share one size");
    int64_t div = cfg.divisibility();
    check(f0.dim(2) % div == 0 && f0.dim(3) % div == 0, "shape",
          "frame extents must be divisible by 2^L = " + std::to_string(div) + ", got " +
              shape_str(f0.shape()));
}

ad::Var fold_time(ad::Var phi, ad::Tape& tape) {
    const Tensor& v = tape.value(phi);
    return ad::reshape(phi, {v.dim(0), v.dim(1) * v.dim(2), v.dim(3), v.dim(4)});
}

}  // namespace

std::vector<ad::Var> build_feature_pyramid(ad::Tape& tape, const Model& model,
                                           nn::ParamLookup& params,
                                           const std::array<ad::Var, 4>& frames) {
    const ModelConfig& cfg = model.config();
    check_frames(tape, cfg, frames);
    std::vector<ad::Var> pyramid;
    if (cfg.use_3d) {
        ad::Var x = ad::stack_time(frames);
        for (const nn::ResBlock3d& block : model.extractor3d) {
            x = nn::resblock3d_forward(block, x, params);
            pyramid.push_back(x);
        }
    } else {
        std::array<ad::Var, 4> feats = frames;
        for (const nn::ResBlock2d& block : model.extractor2d) {
            for (size_t n = 0; n < 4; ++n)
                feats[n] = nn::resblock2d_forward(block, feats[n], params);
            pyramid.push_back(ad::stack_time(feats));
        }
    }
    return pyramid;
}

MfbResult run_mfb(ad::Tape& tape, const Model& model, nn::ParamLookup& params, int level,
                  std::optional<ad::Var> psi_prev, std::optional<mf::LevelFlowsVar> flows_prev,
                  ad::Var phi_l, const std::array<ad::Var, 4>& frames_l) {
    const ModelConfig& cfg = model.config();
    const MultiFlowBlock& mfb = model.mfb_at_level(level);
    int64_t B = tape.value(frames_l[0]).dim(0);
    int64_t h = tape.value(frames_l[0]).dim(2);
    int64_t w = tape.value(frames_l[0]).dim(3);
    DType dt = tape.value(frames_l[0]).dtype();

    mf::LevelFlowsVar flows_up;
    ad::Var psi_up;
    if (level == cfg.coarsest_flow_level) {
        check(!psi_prev && !flows_prev, "shape",
              "the coarsest multi-flow block takes no previous level state");
        flows_up = mf::zero_level_flows(tape, B, cfg.flows, h, w, level, dt);
        psi_up = tape.leaf(Tensor::zeros({B, cfg.mfb_width, h, w}, dt), false);
    } else {
        check(psi_prev.has_value() && flows_prev.has_value(), "shape",
              "multi-flow block below the coarsest level needs previous state");
        check(flows_prev->level == level + 1, "shape", "previous flows are not one level coarser");
        const Tensor& pa = tape.value(flows_prev->flows[0].alpha);
        check(pa.dim(2) * 2 == h && pa.dim(3) * 2 == w, "shape",
              "previous-level flow resolution does not match this level");
        flows_up = mf::upsample_level_flows(*flows_prev, tape);
        psi_up = ad::bilinear_resize(*psi_prev, h, w);
    }

    // warp the downsampled frames with the carried-over flows
    std::vector<ad::Var> parts;
    for (size_t n = 0; n < 4; ++n)
        parts.push_back(ad::warp(frames_l[n], flows_up.flows[n].alpha, flows_up.flows[n].beta,
                                 flows_up.flows[n].omega));
    parts.push_back(fold_time(phi_l, tape));
    parts.push_back(psi_up);
    for (size_t n = 0; n < 4; ++n) {
        parts.push_back(flows_up.flows[n].alpha);
        parts.push_back(flows_up.flows[n].beta);
        parts.push_back(flows_up.flows[n].omega);
    }
    parts.push_back(flows_up.visibility);

    ad::Var psi = nn::conv_stack_forward(mfb.stack, ad::concat_axis1(parts), params);

    ad::Var d_alpha = nn::conv_layer_forward(mfb.head_alpha, psi, params);
    ad::Var d_beta = nn::conv_layer_forward(mfb.head_beta, psi, params);
    ad::Var omega_logits = nn::conv_layer_forward(mfb.head_omega, psi, params);
    ad::Var vis_logits = nn::conv_layer_forward(mfb.head_vis, psi, params);

    // residual refinement on top of the carried-over offsets
    std::vector<ad::Var> alpha_up, beta_up;
    for (size_t n = 0; n < 4; ++n) {
        alpha_up.push_back(flows_up.flows[n].alpha);
        beta_up.push_back(flows_up.flows[n].beta);
    }
    ad::Var raw_alpha = ad::add(ad::concat_axis1(alpha_up), d_alpha);
    ad::Var raw_beta = ad::add(ad::concat_axis1(beta_up), d_beta);

    MfbResult out;
    out.psi = psi;
    out.flows = mf::normalize_heads(raw_alpha, raw_beta, omega_logits, vis_logits, level);
    out.flows_upsampled = flows_up;
    return out;
}

std::array<ad::Var, 4> extract_context(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                                       const std::array<ad::Var, 4>& frames) {
    (void)tape;
    std::array<ad::Var, 4> ctx;
    for (size_t n = 0; n < 4; ++n) ctx[n] = nn::conv_layer_forward(model.context, frames[n], params);
    return ctx;
}

ad::Var synthesize(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                   const std::vector<ad::Var>& fused_fine_first, ad::Var warped_context) {
    const ModelConfig& cfg = model.config();
    int rows = cfg.synth_rows();
    int cols = cfg.synth_columns;
    check(static_cast<int>(fused_fine_first.size()) == rows, "shape",
          "synthesis expects " + std::to_string(rows) + " fused scales");
    const Tensor& top = tape.value(fused_fine_first[0]);
    for (int r = 0; r < rows; ++r) {
        const Tensor& fr = tape.value(fused_fine_first[static_cast<size_t>(r)]);
        check(fr.dim(2) == top.dim(2) >> r && fr.dim(3) == top.dim(3) >> r, "shape",
              "fused candidate at row " + std::to_string(r) + " has mismatched scale " +
                  shape_str(fr.shape()));
    }
    check(tape.value(warped_context).dim(2) == top.dim(2) &&
              tape.value(warped_context).dim(3) == top.dim(3),
          "shape", "warped context scale does not match the finest fused candidate");

    std::vector<ad::Var> state(static_cast<size_t>(rows));
    state[0] = nn::conv_layer_forward(model.synth.entry[0],
                                      ad::concat_axis1({fused_fine_first[0], warped_context}), params);
    for (int r = 1; r < rows; ++r)
        state[static_cast<size_t>(r)] = nn::conv_layer_forward(
            model.synth.entry[static_cast<size_t>(r)], fused_fine_first[static_cast<size_t>(r)], params);

    for (int c = 0; c < cols; ++c) {
        if (c < cols / 2) {
            for (int r = 0; r < rows; ++r) {
                ad::Var& s = state[static_cast<size_t>(r)];
                s = ad::add(s, nn::conv_layer_forward(model.synth.lateral[static_cast<size_t>(r)]
                                                                         [static_cast<size_t>(c)],
                                                      s, params));
                if (r > 0)
                    s = ad::add(s, nn::conv_layer_forward(
                                       model.synth.down[static_cast<size_t>(r - 1)][static_cast<size_t>(c)],
                                       state[static_cast<size_t>(r - 1)], params));
            }
        } else {
            for (int r = rows - 1; r >= 0; --r) {
                ad::Var& s = state[static_cast<size_t>(r)];
                s = ad::add(s, nn::conv_layer_forward(model.synth.lateral[static_cast<size_t>(r)]
                                                                         [static_cast<size_t>(c)],
                                                      s, params));
                if (r < rows - 1) {
                    const Tensor& sv = tape.value(s);
                    ad::Var up = ad::bilinear_resize(state[static_cast<size_t>(r + 1)], sv.dim(2),
                                                     sv.dim(3));
                    s = ad::add(s, nn::conv_layer_forward(
                                       model.synth.up[static_cast<size_t>(r)]
                                                     [static_cast<size_t>(c - cols / 2)],
                                       up, params));
                }
            }
        }
    }
    return nn::conv_layer_forward(model.synth.head, state[0], params);
}

ForwardArtifacts model_forward(ad::Tape& tape, const Model& model, nn::ParamLookup& params,
                               const std::array<ad::Var, 4>& frames) {
    const ModelConfig& cfg = model.config();
    check_frames(tape, cfg, frames);
    ForwardArtifacts art;

    art.frames_at_level.push_back(frames);
    for (int l = 1; l <= cfg.coarsest_flow_level; ++l) {
        std::array<ad::Var, 4> down;
        for (size_t n = 0; n < 4; ++n) down[n] = ad::avg_pool2(art.frames_at_level.back()[n]);
        art.frames_at_level.push_back(down);
    }

    std::vector<ad::Var> pyramid = build_feature_pyramid(tape, model, params, frames);
    for (ad::Var phi : pyramid) art.pyramid.push_back(tape.value(phi));

    ad::Var phi0 = ad::stack_time(frames);

    std::optional<ad::Var> psi;
    std::optional<mf::LevelFlowsVar> flows;
    std::vector<mf::LevelFlowsVar> flows_per_level;  // coarse first
    for (int level = cfg.coarsest_flow_level; level >= 0; --level) {
        ad::Var phi_l = level == 0 ? phi0 : pyramid[static_cast<size_t>(level - 1)];
        MfbResult r = run_mfb(tape, model, params, level, psi, flows,
                              phi_l, art.frames_at_level[static_cast<size_t>(level)]);
        psi = r.psi;
        flows = r.flows;
        flows_per_level.push_back(r.flows);

        std::array<ad::Var, 4> warped;
        for (size_t n = 0; n < 4; ++n) {
            const mf::MultiFlowVar& f = r.flows.flows[n];
            warped[n] = ad::warp(art.frames_at_level[static_cast<size_t>(level)][n], f.alpha, f.beta,
                                 f.omega);
        }
        ad::Var fused = ad::fuse(warped, r.flows.visibility);
        art.fused_vars.push_back(fused);
        art.fused_levels.push_back(level);
        art.fused.push_back(tape.value(fused));
        art.level_flows.push_back(mf::materialize(r.flows, tape));
    }

    const mf::LevelFlowsVar level0 = flows_per_level.back();
    std::array<ad::Var, 4> ctx = extract_context(tape, model, params, frames);
    std::array<ad::Var, 4> warped_ctx;
    for (size_t n = 0; n < 4; ++n) {
        const mf::MultiFlowVar& f = level0.flows[n];
        warped_ctx[n] = ad::warp(ctx[n], f.alpha, f.beta, f.omega);
    }
    ad::Var ctx_fused = ad::fuse(warped_ctx, level0.visibility);
    art.warped_context = tape.value(ctx_fused);

    int rows = cfg.synth_rows();
    std::vector<ad::Var> fused_fine_first;
    for (int r = 0; r < rows; ++r) {
        // fused_vars is coarse-first; element for level r sits at index L0-r
        fused_fine_first.push_back(art.fused_vars[static_cast<size_t>(cfg.coarsest_flow_level - r)]);
    }
    // the grid emits a correction on top of the finest warped-and-fused
    // candidate, so the reconstruction loss reaches the flows directly
    ad::Var residual = synthesize(tape, model, params, fused_fine_first, ctx_fused);
    art.output_raw = ad::add(fused_fine_first[0], residual);
    art.output = ops::clamp01(tape.value(art.output_raw));
    return art;
}

ForwardArtifacts model_infer(const Model& model, const std::array<Tensor, 4>& frames,
                             ad::Tape& tape) {
    nn::ParamLookup params(tape, false);
    std::array<ad::Var, 4> fv;
    for (size_t n = 0; n < 4; ++n) fv[n] = tape.leaf(frames[n], false);
    return model_forward(tape, model, params, fv);
}

}  // namespace mfv
