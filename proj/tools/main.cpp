#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "mfv/config_io.hpp"
#include "mfv/gradcheck.hpp"
#include "mfv/metrics.hpp"
#include "mfv/model.hpp"
#include "mfv/png_io.hpp"
#include "mfv/trainer.hpp"
#include "mfv/weights_io.hpp"

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// config precedence: explicit --config, then a sibling <weights>.json, then defaults
mfv::ModelConfig resolve_config(const std::string& config_path, const std::string& weights_path) {
    if (!config_path.empty()) return mfv::load_config_file(config_path, mfv::ModelConfig::defaults());
    std::string sibling = weights_path + ".json";
    if (std::filesystem::exists(sibling))
        return mfv::load_config_file(sibling, mfv::ModelConfig::defaults());
    return mfv::ModelConfig::defaults();
}

int cmd_interpolate(const std::vector<std::string>& frame_paths, const std::string& weights_path,
                    const std::string& out_path, const std::string& config_path) {
    auto t0 = std::chrono::steady_clock::now();
    std::array<mfv::Tensor, 4> frames;
    int64_t H = 0, W = 0;
    for (size_t n = 0; n < 4; ++n) {
        mfv::Image8 img = mfv::read_png(frame_paths[n]);
        if (n == 0) {
            H = img.height;
            W = img.width;
        } else {
            mfv::check(img.height == H && img.width == W, "size-mismatch",
                       "input frames differ in size: '" + frame_paths[n] + "' is " +
                           std::to_string(img.width) + "x" + std::to_string(img.height) +
                           " but the first frame is " + std::to_string(W) + "x" + std::to_string(H));
        }
        frames[n] = mfv::image_to_tensor(img);
    }

    mfv::ModelConfig cfg = resolve_config(config_path, weights_path);
    mfv::Model model(cfg, 0);
    model.load(mfv::load_weights(weights_path));
    double load_ms = ms_since(t0);

    // reflect-pad up to the next multiple of 2^L, crop the output back
    auto t1 = std::chrono::steady_clock::now();
    int64_t div = cfg.divisibility();
    int64_t ph = (div - H % div) % div, pw = (div - W % div) % div;
    if (ph || pw)
        for (auto& f : frames) f = mfv::ops::reflect_pad_hw(f, ph, pw);

    mfv::ad::Tape tape;
    mfv::ForwardArtifacts art = mfv::model_infer(model, frames, tape);
    mfv::Tensor out = art.output;
    if (ph || pw) out = mfv::ops::crop_hw(out, H, W);
    double forward_ms = ms_since(t1);

    auto t2 = std::chrono::steady_clock::now();
    mfv::write_png(out_path, mfv::tensor_to_image(out));
    double save_ms = ms_since(t2);

    std::printf("wrote %s (%lldx%lld)\n", out_path.c_str(), static_cast<long long>(W),
                static_cast<long long>(H));
    std::printf("timing: load %.1f ms, forward %.1f ms, save %.1f ms\n", load_ms, forward_ms, save_ms);
    return 0;
}

int cmd_train_toy(const std::string& out_path, const std::string& config_path, int epochs,
                  uint64_t seed, int batches, int batch_size, int size, double max_speed,
                  int val_size, bool quiet) {
    mfv::ModelConfig cfg = config_path.empty()
                               ? mfv::ModelConfig::toy()
                               : mfv::load_config_file(config_path, mfv::ModelConfig::toy());
    mfv::Model model(cfg, seed);

    mfv::TrainOptions opt;
    opt.epochs = epochs;
    opt.seed = seed;
    opt.batches_per_epoch = batches;
    opt.batch_size = batch_size;
    opt.height = size;
    opt.width = size;
    opt.max_speed = max_speed;
    opt.val_size = val_size;
    opt.verbose = !quiet;

    mfv::TrainLog log = mfv::train_toy(model, opt);

    mfv::save_weights(out_path, model.snapshot());
    std::string csv = mfv::metrics_csv(log);
    mfv::write_file_atomic(out_path + ".metrics.csv", csv.data(), csv.size());
    mfv::save_config_file(out_path + ".json", cfg);

    std::printf("wrote %s (%lld parameters)\n", out_path.c_str(),
                static_cast<long long>(model.param_count()));
    if (!log.epochs.empty())
        std::printf("final validation PSNR: %.3f dB over %d epochs\n", log.final_val_psnr, epochs);
    return 0;
}

int cmd_gradcheck(const std::string& op, bool all, int trials, uint64_t seed) {
    const auto& suite = mfv::gradcheck_suite();
    std::vector<const mfv::GradCheckCase*> selected;
    if (all) {
        for (const auto& c : suite) selected.push_back(&c);
    } else {
        for (const auto& c : suite)
            if (c.name == op) selected.push_back(&c);
        if (selected.empty()) {
            std::string names;
            for (const auto& c : suite) names += (names.empty() ? "" : ", ") + c.name;
            mfv::fail("unknown-op", "unknown operator '" + op + "'; available: " + names);
        }
    }
    bool ok = true;
    for (const auto* c : selected) {
        mfv::GradCheckReport r = mfv::run_gradcheck(*c, trials, seed);
        std::printf("%-16s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_error,
                    r.tolerance, r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
    }
    if (!ok) mfv::fail("tolerance", "one or more gradient checks exceeded tolerance");
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& ref_path) {
    mfv::Image8 pred = mfv::read_png(pred_path);
    mfv::Image8 ref = mfv::read_png(ref_path);
    mfv::check(pred.width == ref.width && pred.height == ref.height, "size-mismatch",
               "images differ in size: " + std::to_string(pred.width) + "x" +
                   std::to_string(pred.height) + " vs " + std::to_string(ref.width) + "x" +
                   std::to_string(ref.height));
    mfv::Tensor a = mfv::image_to_tensor(pred);
    mfv::Tensor b = mfv::image_to_tensor(ref);
    std::printf("PSNR: %.4f dB\n", mfv::psnr(a, b));
    std::printf("SSIM: %.6f\n", mfv::ssim(a, b));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-flow video frame interpolation engine"};
    app.require_subcommand(1);

    auto* interp = app.add_subcommand("interpolate", "interpolate the midpoint of four frames");
    std::vector<std::string> frame_paths;
    std::string weights_path, out_path, config_path;
    interp->add_option("--frames", frame_paths, "four input frames, in time order")
        ->expected(4)
        ->required();
    interp->add_option("--weights", weights_path, "model weight file")->required();
    interp->add_option("--out", out_path, "output PNG path")->required();
    interp->add_option("--config", config_path, "model configuration JSON");

    auto* train = app.add_subcommand("train-toy", "train on synthetic motion at desk scale");
    std::string train_out, train_config;
    int epochs = 30, batches = 24, batch_size = 2, size = 64, val_size = 8;
    double max_speed = 4.0;
    uint64_t seed = 1;
    bool quiet = false;
    train->add_option("--out", train_out, "output weight file")->required();
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--seed", seed, "rng seed");
    train->add_option("--config", train_config, "model configuration JSON");
    train->add_option("--batches", batches, "batches per epoch");
    train->add_option("--batch-size", batch_size, "samples per batch");
    train->add_option("--size", size, "square patch size");
    train->add_option("--max-speed", max_speed, "max scene velocity, px/frame");
    train->add_option("--val-size", val_size, "held-out validation samples");
    train->add_flag("--quiet", quiet, "suppress per-epoch progress");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every operator");
    std::string gc_op;
    bool gc_all = false;
    int gc_trials = 20;
    uint64_t gc_seed = 99;
    gc->add_option("--op", gc_op, "operator to check");
    gc->add_flag("--all", gc_all, "check every operator");
    gc->add_option("--trials", gc_trials, "randomized trials per operator");
    gc->add_option("--seed", gc_seed, "rng seed");

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM between two images");
    std::string pred_path, ref_path;
    ev->add_option("--pred", pred_path, "image under test")->required();
    ev->add_option("--ref", ref_path, "reference image")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (interp->parsed()) return cmd_interpolate(frame_paths, weights_path, out_path, config_path);
        if (train->parsed())
            return cmd_train_toy(train_out, train_config, epochs, seed, batches, batch_size, size,
                                 max_speed, val_size, quiet);
        if (gc->parsed()) {
            if (gc_all != gc_op.empty())  // exactly one of --op / --all
                mfv::fail("usage", "gradcheck needs exactly one of --op <name> or --all");
            return cmd_gradcheck(gc_op, gc_all, gc_trials, gc_seed);
        }
        if (ev->parsed()) return cmd_eval(pred_path, ref_path);
    } catch (const mfv::Error& e) {
        std::fprintf(stderr, "error[%s]: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error[internal]: %s\n", e.what());
        return 1;
    }
    return 0;
}
