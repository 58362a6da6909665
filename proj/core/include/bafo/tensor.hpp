#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bafo/errors.hpp"

namespace bafo {

// Numeric precision of tensor storage and arithmetic. f32 is the training
// mode; f64 exists because finite-difference gradient checks are unreliable
// in single precision. The mode is a process-global engine setting read at
// tensor creation time; tensors remember the mode they were created in and
// operations refuse to mix modes.
enum class NumericMode : std::uint8_t { f32 = 0, f64 = 1 };

NumericMode engine_mode();
void set_engine_mode(NumericMode mode);

const char* to_string(NumericMode mode);

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major n-dimensional array. Immutable after construction: copies
// share storage, so keeping tensors alive on the autodiff tape is cheap and
// cross-thread reads are safe.
class Tensor {
public:
    Tensor() = default;

    // Takes ownership of a prepared buffer. Throws DimensionError if the
    // buffer length does not match the shape.
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, NumericMode mode = engine_mode());
    static Tensor full(const Shape& shape, double value,
                       NumericMode mode = engine_mode());
    static Tensor ones(const Shape& shape, NumericMode mode = engine_mode());
    static Tensor from_values(const Shape& shape, std::span<const double> values,
                              NumericMode mode = engine_mode());

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return size_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    NumericMode mode() const { return mode_; }
    bool defined() const { return size_ > 0 || !shape_.empty(); }

    bool requires_grad() const { return requires_grad_; }
    Tensor with_requires_grad(bool on) const;

    // Flat element access, widened to double regardless of mode.
    double at(std::int64_t i) const;

    std::span<const float> f32() const;
    std::span<const double> f64() const;

    std::vector<double> to_vector() const;
    Tensor to(NumericMode mode) const;

    bool all_finite() const;
    bool same_values(const Tensor& other) const;  // bit-identical contents

private:
    Shape shape_;
    std::int64_t size_ = 0;
    NumericMode mode_ = NumericMode::f32;
    bool requires_grad_ = false;
    std::shared_ptr<const std::vector<float>> f32_;
    std::shared_ptr<const std::vector<double>> f64_;
};

// Checks two operands were created under the same numeric mode.
void check_same_mode(const Tensor& a, const Tensor& b, const char* op);

}  // namespace bafo
