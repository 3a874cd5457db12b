#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mfv/common.hpp"

namespace mfv {

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "float32" : "float64"; }

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense N-d array, channel-first row-major. Immutable once handed out: ops
// build a tensor, then share the buffer freely (reshape is a view).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dt = DType::f32);
    static Tensor full(Shape shape, double value, DType dt = DType::f32);
    static Tensor from_f32(Shape shape, std::vector<float> data);
    static Tensor from_f64(Shape shape, std::vector<double> data);

    bool defined() const { return !shape_.empty(); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return numel_; }
    DType dtype() const { return dtype_; }

    const float* f32() const;
    const double* f64() const;
    float* mut_f32();
    double* mut_f64();

    template <typename T>
    const T* data() const;
    template <typename T>
    T* mut_data();

    // dtype-generic scalar access (slow; tests and glue code only)
    double at(int64_t i) const;
    double scalar() const;  // numel()==1

    Tensor reshape(Shape new_shape) const;  // shares the buffer
    Tensor astype(DType dt) const;
    Tensor clone() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void check_finite(const char* what) const;

private:
    Shape shape_;
    int64_t numel_ = 0;
    DType dtype_ = DType::f32;
    std::shared_ptr<std::vector<float>> f32_;
    std::shared_ptr<std::vector<double>> f64_;
};

template <>
inline const float* Tensor::data<float>() const { return f32(); }
template <>
inline const double* Tensor::data<double>() const { return f64(); }
template <>
inline float* Tensor::mut_data<float>() { return mut_f32(); }
template <>
inline double* Tensor::mut_data<double>() { return mut_f64(); }

// Fills with uniform values in [lo, hi) from the given stream.
Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng, DType dt = DType::f32);

}  // namespace mfv
