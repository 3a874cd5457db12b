#include "mfv/tensor.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace mfv {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

static void validate_shape(const Shape& s) {
    check(!s.empty(), "shape", "tensor rank must be >= 1");
    for (int64_t d : s)
        check(d >= 1, "shape", "tensor extents must be >= 1, got " + shape_str(s));
}

Tensor Tensor::zeros(Shape shape, DType dt) {
    validate_shape(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = shape_numel(t.shape_);
    t.dtype_ = dt;
    if (dt == DType::f32)
        t.f32_ = std::make_shared<std::vector<float>>(static_cast<size_t>(t.numel_), 0.0f);
    else
        t.f64_ = std::make_shared<std::vector<double>>(static_cast<size_t>(t.numel_), 0.0);
    return t;
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (dt == DType::f32) {
        float v = static_cast<float>(value);
        for (auto& x : *t.f32_) x = v;
    } else {
        for (auto& x : *t.f64_) x = value;
    }
    return t;
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
    validate_shape(shape);
    check(shape_numel(shape) == static_cast<int64_t>(data.size()), "shape",
          "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = static_cast<int64_t>(data.size());
    t.dtype_ = DType::f32;
    t.f32_ = std::make_shared<std::vector<float>>(std::move(data));
    return t;
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> data) {
    validate_shape(shape);
    check(shape_numel(shape) == static_cast<int64_t>(data.size()), "shape",
          "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = static_cast<int64_t>(data.size());
    t.dtype_ = DType::f64;
    t.f64_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
}

const float* Tensor::f32() const {
    check(dtype_ == DType::f32 && f32_, "dtype", "tensor is not float32");
    return f32_->data();
}

const double* Tensor::f64() const {
    check(dtype_ == DType::f64 && f64_, "dtype", "tensor is not float64");
    return f64_->data();
}

float* Tensor::mut_f32() {
    check(dtype_ == DType::f32 && f32_, "dtype", "tensor is not float32");
    return f32_->data();
}

double* Tensor::mut_f64() {
    check(dtype_ == DType::f64 && f64_, "dtype", "tensor is not float64");
    return f64_->data();
}

double Tensor::at(int64_t i) const {
    return dtype_ == DType::f32 ? static_cast<double>((*f32_)[static_cast<size_t>(i)])
                                : (*f64_)[static_cast<size_t>(i)];
}

double Tensor::scalar() const {
    check(numel_ == 1, "shape", "scalar() on tensor of shape " + shape_str(shape_));
    return at(0);
}

Tensor Tensor::reshape(Shape new_shape) const {
    validate_shape(new_shape);
    check(shape_numel(new_shape) == numel_, "shape",
          "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

Tensor Tensor::astype(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor t = zeros(shape_, dt);
    if (dt == DType::f64) {
        const float* src = f32();
        double* dst = t.mut_f64();
        for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<double>(src[i]);
    } else {
        const double* src = f64();
        float* dst = t.mut_f32();
        for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<float>(src[i]);
    }
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = zeros(shape_, dtype_);
    if (dtype_ == DType::f32)
        *t.f32_ = *f32_;
    else
        *t.f64_ = *f64_;
    return t;
}

bool Tensor::all_finite() const {
    if (dtype_ == DType::f32) {
        for (float v : *f32_)
            if (!std::isfinite(v)) return false;
    } else {
        for (double v : *f64_)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char* what) const {
    check(all_finite(), "non-finite", std::string(what) + " contains NaN or Inf");
}

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng, DType dt) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    if (dt == DType::f32) {
        float* p = t.mut_f32();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(rng.uniform(lo, hi));
    } else {
        double* p = t.mut_f64();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(lo, hi);
    }
    return t;
}

// ---------------------------------------------------------------------------
// parallel_for: a tiny persistent pool. Tasks are contiguous chunks of the
// index range; the caller runs one chunk itself. Nested calls run serially.

namespace {

struct Pool {
    struct Task {
        const std::function<void(int64_t, int64_t)>* fn = nullptr;
        int64_t begin = 0, end = 0;
    };

    std::vector<std::thread> workers;
    std::mutex mu;
    std::condition_variable cv_work, cv_done;
    std::vector<Task> tasks;
    size_t next_task = 0;
    size_t pending = 0;
    bool stop = false;

    explicit Pool(unsigned n) {
        for (unsigned i = 0; i < n; ++i)
            workers.emplace_back([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu);
            stop = true;
        }
        cv_work.notify_all();
        for (auto& w : workers) w.join();
    }

    void worker_loop() {
        for (;;) {
            Task t;
            {
                std::unique_lock<std::mutex> lk(mu);
                cv_work.wait(lk, [this] { return stop || next_task < tasks.size(); });
                if (stop) return;
                t = tasks[next_task++];
            }
            (*t.fn)(t.begin, t.end);
            {
                std::lock_guard<std::mutex> lk(mu);
                if (--pending == 0) cv_done.notify_all();
            }
        }
    }

};

unsigned thread_count() {
    static unsigned n = [] {
        if (const char* env = std::getenv("MFV_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return static_cast<unsigned>(v);
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1u : hc;
    }();
    return n;
}

Pool& pool() {
    static Pool p(thread_count());
    return p;
}

thread_local bool inside_parallel = false;

}  // namespace

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    unsigned nt = thread_count();
    if (inside_parallel || nt <= 1 || n < 2 * grain) {
        fn(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(nt, (n + grain - 1) / grain);
    int64_t per = (n + chunks - 1) / chunks;
    std::vector<Pool::Task> tasks;
    for (int64_t c = 1; c < chunks; ++c) {
        int64_t b = c * per, e = std::min(n, (c + 1) * per);
        if (b >= e) break;
        tasks.push_back({&fn, b, e});
    }
    inside_parallel = true;
    if (tasks.empty()) {
        fn(0, n);
        inside_parallel = false;
        return;
    }
    // Hand tail chunks to the pool, run chunk 0 here, then wait for the rest.
    Pool& p = pool();
    {
        std::lock_guard<std::mutex> lk(p.mu);
        p.tasks = tasks;
        p.next_task = 0;
        p.pending = tasks.size();
    }
    p.cv_work.notify_all();
    fn(0, std::min(n, per));
    {
        std::unique_lock<std::mutex> lk(p.mu);
        p.cv_done.wait(lk, [&] { return p.pending == 0; });
    }
    inside_parallel = false;
}

}  // namespace mfv
