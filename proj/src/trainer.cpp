#include "mfv/trainer.hpp"

#include <cmath>
#include <sstream>

#include "mfv/metrics.hpp"

namespace mfv {

void AdaMaxState::init(const std::vector<Tensor*>& params) {
    m.clear();
    u.clear();
    step_count = 0;
    for (const Tensor* p : params) {
        m.push_back(Tensor::zeros(p->shape(), p->dtype()));
        u.push_back(Tensor::zeros(p->shape(), p->dtype()));
    }
}

void adamax_step(AdaMaxState& state, const std::vector<Tensor*>& params,
                 const std::vector<Tensor>& grads) {
    check(params.size() == grads.size(), "shape", "adamax_step: parameter/gradient count mismatch");
    check(state.m.size() == params.size(), "shape", "adamax_step: state not initialized");
    state.step_count += 1;
    double bias = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double scale = state.lr / bias;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        check(g.same_shape(p), "shape",
              "adamax_step: gradient shape " + shape_str(g.shape()) + " does not match parameter " +
                  shape_str(p.shape()));
        Tensor next = p.clone();
        float* pp = next.mut_f32();
        float* pm = state.m[i].mut_f32();
        float* pu = state.u[i].mut_f32();
        const float* pg = g.f32();
        for (int64_t j = 0; j < p.numel(); ++j) {
            double gj = pg[j];
            double mj = state.beta1 * pm[j] + (1.0 - state.beta1) * gj;
            double uj = std::max(state.beta2 * pu[j], std::abs(gj));
            pm[j] = static_cast<float>(mj);
            pu[j] = static_cast<float>(uj);
            if (uj != 0.0) pp[j] = static_cast<float>(pp[j] - scale * mj / uj);
        }
        p = next;
    }
}

PlateauScheduler scheduler_step(PlateauScheduler sched, double validation_metric) {
    check(std::isfinite(validation_metric), "value", "scheduler metric must be finite");
    if (validation_metric - sched.best_metric >= sched.min_delta) {
        sched.best_metric = validation_metric;
        sched.epochs_since_improvement = 0;
    } else {
        sched.epochs_since_improvement += 1;
        if (sched.epochs_since_improvement >= sched.patience) {
            sched.current_lr *= sched.factor;
            sched.epochs_since_improvement = 0;
        }
    }
    return sched;
}

// ---------------------------------------------------------------------------
// synthetic scenes

namespace {

struct MovingRect {
    double cx, cy;      // center at t=0
    double hw, hh;      // half extents
    double vx, vy;      // px per frame
    double color0[3];   // gradient endpoints (equal for flat color)
    double color1[3];
    bool horizontal_gradient;
};

struct Scene {
    int h, w;
    int grid_h, grid_w;
    std::vector<float> noise;  // [3][grid_h][grid_w] background texture
    double bg_vx, bg_vy;
    std::vector<MovingRect> rects;
};

Scene make_scene(uint64_t seed, int h, int w, double max_speed) {
    Rng rng(seed);
    Scene s;
    s.h = h;
    s.w = w;
    // value-noise grid at ~4 px spacing, padded so any shift stays in range
    s.grid_h = h / 4 + 8;
    s.grid_w = w / 4 + 8;
    s.noise.resize(static_cast<size_t>(3 * s.grid_h * s.grid_w));
    for (float& v : s.noise) v = static_cast<float>(rng.uniform());
    s.bg_vx = rng.uniform(-max_speed, max_speed);
    s.bg_vy = rng.uniform(-max_speed, max_speed);

    int count = static_cast<int>(rng.uniform_int(2, 4));
    for (int i = 0; i < count; ++i) {
        MovingRect r;
        r.cx = rng.uniform(0.2, 0.8) * w;
        r.cy = rng.uniform(0.2, 0.8) * h;
        r.hw = rng.uniform(0.08, 0.22) * std::min(h, w);
        r.hh = rng.uniform(0.08, 0.22) * std::min(h, w);
        r.vx = rng.uniform(-max_speed, max_speed);
        r.vy = rng.uniform(-max_speed, max_speed);
        for (int c = 0; c < 3; ++c) {
            r.color0[c] = rng.uniform();
            r.color1[c] = rng.uniform();
        }
        r.horizontal_gradient = rng.uniform() < 0.5;
        s.rects.push_back(r);
    }
    return s;
}

// bilinear sample of the wrapped noise grid
double sample_noise(const Scene& s, int c, double gy, double gx) {
    int gh = s.grid_h, gw = s.grid_w;
    double fy = gy - std::floor(gy), fx = gx - std::floor(gx);
    int64_t y0 = static_cast<int64_t>(std::floor(gy)) % gh;
    int64_t x0 = static_cast<int64_t>(std::floor(gx)) % gw;
    if (y0 < 0) y0 += gh;
    if (x0 < 0) x0 += gw;
    int64_t y1 = (y0 + 1) % gh, x1 = (x0 + 1) % gw;
    const float* n = s.noise.data() + static_cast<size_t>(c) * gh * gw;
    double v00 = n[y0 * gw + x0], v01 = n[y0 * gw + x1];
    double v10 = n[y1 * gw + x0], v11 = n[y1 * gw + x1];
    double top = v00 + fx * (v01 - v00);
    double bot = v10 + fx * (v11 - v10);
    return top + fy * (bot - top);
}

// coverage of the unit pixel centered at p by the interval [lo, hi]
double interval_coverage(double p, double lo, double hi) {
    double overlap = std::min(p + 0.5, hi) - std::max(p - 0.5, lo);
    return std::min(1.0, std::max(0.0, overlap));
}

Tensor render(const Scene& s, double t) {
    Tensor img = Tensor::zeros({3, s.h, s.w});
    float* p = img.mut_f32();
    const double inv_spacing = 1.0 / 4.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double gy = (y - s.bg_vy * t) * inv_spacing;
                double gx = (x - s.bg_vx * t) * inv_spacing;
                double v = sample_noise(s, c, gy, gx);
                for (const MovingRect& r : s.rects) {
                    double cx = r.cx + r.vx * t, cy = r.cy + r.vy * t;
                    double cov = interval_coverage(x, cx - r.hw, cx + r.hw) *
                                 interval_coverage(y, cy - r.hh, cy + r.hh);
                    if (cov <= 0) continue;
                    double u = r.horizontal_gradient ? (x - (cx - r.hw)) / (2 * r.hw)
                                                     : (y - (cy - r.hh)) / (2 * r.hh);
                    u = std::min(1.0, std::max(0.0, u));
                    double col = r.color0[c] + u * (r.color1[c] - r.color0[c]);
                    v = (1 - cov) * v + cov * col;
                }
                p[(static_cast<int64_t>(c) * s.h + y) * s.w + x] = static_cast<float>(v);
            }
    return img;
}

}  // namespace

Quintuplet gen_synthetic_quintuplet(uint64_t seed, int h, int w, double max_speed) {
    check(max_speed <= std::min(h, w) / 8.0, "config",
          "max_speed must stay below min(h,w)/8 so scenes remain trackable");
    Scene s = make_scene(seed, h, w, max_speed);
    Quintuplet q;
    for (int n = 0; n < 4; ++n) q.frames[static_cast<size_t>(n)] = render(s, static_cast<double>(n));
    q.target = render(s, 1.5);
    return q;
}

Tensor overlay_baseline(const Quintuplet& q) {
    return ops::mul_scalar(ops::add(q.frames[1], q.frames[2]), 0.5);
}

double overlay_baseline_psnr(int seeds, int h, int w, double max_speed) {
    double total = 0;
    for (int i = 0; i < seeds; ++i) {
        Quintuplet q = gen_synthetic_quintuplet(derive_seed(0xba5e, 3, static_cast<uint64_t>(i)), h,
                                                w, max_speed);
        total += psnr(overlay_baseline(q), q.target);
    }
    return total / seeds;
}

// ---------------------------------------------------------------------------

namespace {

// batched [B,3,h,w] views of a set of quintuplets
std::array<Tensor, 4> batch_frames(const std::vector<Quintuplet>& qs) {
    int64_t B = static_cast<int64_t>(qs.size());
    const Tensor& f0 = qs[0].frames[0];
    int64_t C = f0.dim(0), H = f0.dim(1), W = f0.dim(2);
    std::array<Tensor, 4> out;
    for (size_t n = 0; n < 4; ++n) {
        out[n] = Tensor::zeros({B, C, H, W});
        float* p = out[n].mut_f32();
        for (int64_t b = 0; b < B; ++b) {
            const float* src = qs[static_cast<size_t>(b)].frames[n].f32();
            std::copy(src, src + C * H * W, p + b * C * H * W);
        }
    }
    return out;
}

Tensor batch_targets(const std::vector<Quintuplet>& qs) {
    int64_t B = static_cast<int64_t>(qs.size());
    const Tensor& t0 = qs[0].target;
    int64_t C = t0.dim(0), H = t0.dim(1), W = t0.dim(2);
    Tensor out = Tensor::zeros({B, C, H, W});
    float* p = out.mut_f32();
    for (int64_t b = 0; b < B; ++b) {
        const float* src = qs[static_cast<size_t>(b)].target.f32();
        std::copy(src, src + C * H * W, p + b * C * H * W);
    }
    return out;
}

}  // namespace

Quintuplet training_sample(const TrainOptions& opt, uint64_t idx) {
    uint64_t total = static_cast<uint64_t>(opt.epochs) * static_cast<uint64_t>(opt.batches_per_epoch) *
                     static_cast<uint64_t>(opt.batch_size);
    uint64_t phase2 = total * 11 / 20;
    double speed = opt.max_speed;
    if (idx >= phase2) {
        Rng tempo_rng(derive_seed(opt.seed, 4, idx));
        speed = tempo_rng.uniform() < 0.15 ? 0.0
                                           : tempo_rng.uniform(0.3, 1.0) * opt.max_speed;
    }
    return gen_synthetic_quintuplet(derive_seed(opt.seed, 1, idx), opt.height, opt.width, speed);
}

double validation_psnr(const Model& model, const std::vector<Quintuplet>& samples) {
    double total = 0;
    for (const Quintuplet& q : samples) {
        ad::Tape tape;
        std::array<Tensor, 4> frames;
        for (size_t n = 0; n < 4; ++n)
            frames[n] = q.frames[n].reshape({1, q.frames[n].dim(0), q.frames[n].dim(1),
                                             q.frames[n].dim(2)});
        ForwardArtifacts art = model_infer(model, frames, tape);
        // finest fused candidate, the metric the flows are judged by
        const Tensor& fused0 = art.fused.back();
        total += psnr(fused0, q.target.reshape(fused0.shape()));
    }
    return total / static_cast<double>(samples.size());
}

TrainLog train_toy(Model& model, const TrainOptions& opt) {
    const ModelConfig& cfg = model.config();
    check(opt.height % cfg.divisibility() == 0 && opt.width % cfg.divisibility() == 0, "config",
          "training patch extents must be divisible by 2^L = " + std::to_string(cfg.divisibility()));
    check(opt.batch_size >= 1 && opt.batches_per_epoch >= 1, "config",
          "batch size and batches per epoch must be >= 1");

    std::vector<Tensor*> params;
    model.visit_params([&](const std::string&, Tensor& t) { params.push_back(&t); });

    AdaMaxState adamax;
    adamax.lr = opt.lr;
    adamax.init(params);

    PlateauScheduler sched;
    sched.current_lr = opt.lr;

    std::vector<Quintuplet> val_set;
    for (int i = 0; i < opt.val_size; ++i)
        val_set.push_back(gen_synthetic_quintuplet(derive_seed(opt.seed, 2, static_cast<uint64_t>(i)),
                                                   opt.height, opt.width, opt.max_speed));

    TrainLog log;
    int step = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        double lap_sum = 0, charb_sum = 0, total_sum = 0;
        for (int batch = 0; batch < opt.batches_per_epoch; ++batch) {
            std::vector<Quintuplet> qs;
            for (int j = 0; j < opt.batch_size; ++j) {
                uint64_t idx = static_cast<uint64_t>(step) * static_cast<uint64_t>(opt.batch_size) +
                               static_cast<uint64_t>(j);
                qs.push_back(training_sample(opt, idx));
            }
            std::array<Tensor, 4> frames = batch_frames(qs);
            Tensor target = batch_targets(qs);

            ad::Tape tape;
            nn::ParamLookup lookup(tape, true);
            std::array<ad::Var, 4> frame_vars;
            for (size_t n = 0; n < 4; ++n) frame_vars[n] = tape.leaf(frames[n], false);
            ForwardArtifacts art = model_forward(tape, model, lookup, frame_vars);

            // charb compares fused candidates at levels 1..L0 against pooled targets
            std::vector<ad::Var> fused_vars, target_vars;
            Tensor pooled = target;
            for (int level = 1; level <= cfg.coarsest_flow_level; ++level) {
                pooled = ops::avg_pool2(pooled);
                // fused_vars run coarse-first: level l sits at index L0-l
                fused_vars.push_back(art.fused_vars[static_cast<size_t>(cfg.coarsest_flow_level - level)]);
                target_vars.push_back(tape.leaf(pooled, false));
            }

            LossReport report;
            ad::Var loss = loss_total(art.output_raw, tape.leaf(target, false), fused_vars,
                                      target_vars, opt.lambda, &report);
            if (!std::isfinite(report.total))
                fail("diverged", "training loss became non-finite at step " + std::to_string(step));
            if (step == 0) log.first_step_loss = report.total;
            if (opt.on_step) opt.on_step(step, report);

            ad::Gradients grads = tape.backward(loss);
            std::vector<Tensor> grad_list;
            for (Tensor* p : params) grad_list.push_back(grads.at(lookup.var(*p)));

            adamax.lr = sched.current_lr;
            adamax_step(adamax, params, grad_list);

            lap_sum += report.lap;
            charb_sum += report.charb;
            total_sum += report.total;
            ++step;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lap = lap_sum / opt.batches_per_epoch;
        em.charb = charb_sum / opt.batches_per_epoch;
        em.total = total_sum / opt.batches_per_epoch;
        em.lr = sched.current_lr;
        em.val_psnr = validation_psnr(model, val_set);
        sched = scheduler_step(sched, em.val_psnr);
        log.epochs.push_back(em);
        if (opt.verbose) {
            std::fprintf(stderr, "epoch %d  lap %.5f  charb %.5f  total %.5f  lr %.6g  val_psnr %.3f\n",
                         em.epoch, em.lap, em.charb, em.total, em.lr, em.val_psnr);
        }
    }
    log.steps = step;
    log.final_val_psnr = log.epochs.empty() ? validation_psnr(model, val_set)
                                            : log.epochs.back().val_psnr;
    return log;
}

std::string metrics_csv(const TrainLog& log) {
    std::ostringstream os;
    os << "epoch,lap,charb,total,lr,val_psnr\n";
    char line[256];
    for (const EpochMetrics& e : log.epochs) {
        std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.lap, e.charb,
                      e.total, e.lr, e.val_psnr);
        os << line;
    }
    return os.str();
}

}  // namespace mfv
