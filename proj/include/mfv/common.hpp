#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace mfv {

// Error with a stable machine-greppable code; the CLI prints `error[<code>]: msg`.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
    throw Error(code, msg);
}

inline void check(bool cond, const std::string& code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// splitmix64; used everywhere randomness must be bitwise reproducible across
// platforms (std:: distributions are not).
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }
};

// Derives an independent stream from a seed and a label, so that e.g. the
// validation set never collides with training batches.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
    Rng r(seed ^ (0x517cc1b727220a95ULL * (stream + 1)));
    r.next_u64();
    return r.next_u64() ^ (index * 0x2545f4914f6cdd1dULL);
}

// Runs fn(begin, end) over [0, n) on up to hardware_concurrency threads with a
// fixed static partition. Chunks write disjoint outputs, so results do not
// depend on the thread count. Serial when n < 2 * grain or when nested.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace mfv
