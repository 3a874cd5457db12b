#pragma once

#include <array>
#include <functional>
#include <limits>
#include <vector>

#include "mfv/losses.hpp"
#include "mfv/model.hpp"

namespace mfv {

// AdaMax (infinity-norm Adam variant):
//   m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
//   theta <- theta - lr/(1 - b1^t) * m/u, elements with u == 0 left untouched.
struct AdaMaxState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t step_count = 0;         // t, incremented once per step
    std::vector<Tensor> m, u;       // shaped like the parameters

    void init(const std::vector<Tensor*>& params);
};

void adamax_step(AdaMaxState& state, const std::vector<Tensor*>& params,
                 const std::vector<Tensor>& grads);

// Halves the lr after `patience` consecutive epochs without the metric
// (higher-better) improving by at least min_delta.
struct PlateauScheduler {
    double best_metric = -std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 5;
    double factor = 0.5;
    double current_lr = 1e-3;
    double min_delta = 1e-4;
};

PlateauScheduler scheduler_step(PlateauScheduler sched, double validation_metric);

// (I0, I1, target, I2, I3): frames at times 0,1,2,3 and the midpoint t=1.5.
struct Quintuplet {
    std::array<Tensor, 4> frames;  // each [3,h,w], values in [0,1]
    Tensor target;                 // [3,h,w]
};

// Moving textured background plus 2-4 anti-aliased rectangles, every element
// translating at its own constant velocity drawn in +-max_speed px/frame; the
// target is the exact scene state at t=1.5.
Quintuplet gen_synthetic_quintuplet(uint64_t seed, int h, int w, double max_speed);

// (I1+I2)/2, the motionless predictor used as the training acceptance floor
Tensor overlay_baseline(const Quintuplet& q);
double overlay_baseline_psnr(int seeds, int h, int w, double max_speed);

struct TrainOptions {
    int epochs = 30;
    int batches_per_epoch = 24;
    int batch_size = 2;
    int height = 64;
    int width = 64;
    double max_speed = 4.0;
    int val_size = 8;
    double lr = 1e-3;
    double lambda = 0.01;
    uint64_t seed = 1;
    bool verbose = false;
    std::function<void(int step, const LossReport&)> on_step;  // optional test hook
};

struct EpochMetrics {
    int epoch = 0;
    double lap = 0, charb = 0, total = 0;
    double lr = 0;
    double val_psnr = 0;
};

struct TrainLog {
    std::vector<EpochMetrics> epochs;
    double first_step_loss = 0;
    int steps = 0;
    double final_val_psnr = 0;
};

// The exact quintuplet fed as global sample `idx` of a run. The first 55% of
// samples run at full max_speed (the motion estimator trains first); after
// that 15% are fully static (the identity mapping must be learned too) and
// the rest scale max_speed by a tempo in [0.3, 1]. Validation samples always
// run at full max_speed.
Quintuplet training_sample(const TrainOptions& opt, uint64_t idx);

// Trains in place on synthetic quintuplets; deterministic for a given seed.
// Non-finite loss aborts with the offending step index.
TrainLog train_toy(Model& model, const TrainOptions& opt);

std::string metrics_csv(const TrainLog& log);

// validation metric: PSNR of the finest fused candidate against the target
double validation_psnr(const Model& model, const std::vector<Quintuplet>& samples);

}  // namespace mfv
