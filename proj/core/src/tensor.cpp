#include "bafo/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace bafo {

namespace {
NumericMode g_engine_mode = NumericMode::f32;
}  // namespace

NumericMode engine_mode() { return g_engine_mode; }

void set_engine_mode(NumericMode mode) { g_engine_mode = mode; }

const char* to_string(NumericMode mode) {
    return mode == NumericMode::f32 ? "f32" : "f64";
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void check_shape(const Shape& shape, std::size_t data_len) {
    for (std::int64_t d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor shape " + shape_to_string(shape) +
                                 " has a non-positive dimension");
        }
    }
    if (numel(shape) != static_cast<std::int64_t>(data_len)) {
        throw DimensionError("tensor data length " + std::to_string(data_len) +
                             " does not match shape " + shape_to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : shape_(std::move(shape)),
      size_(static_cast<std::int64_t>(data.size())),
      mode_(NumericMode::f32),
      requires_grad_(requires_grad),
      f32_(std::make_shared<const std::vector<float>>(std::move(data))) {
    check_shape(shape_, f32_->size());
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)),
      size_(static_cast<std::int64_t>(data.size())),
      mode_(NumericMode::f64),
      requires_grad_(requires_grad),
      f64_(std::make_shared<const std::vector<double>>(std::move(data))) {
    check_shape(shape_, f64_->size());
}

Tensor Tensor::zeros(const Shape& shape, NumericMode mode) {
    return full(shape, 0.0, mode);
}

Tensor Tensor::ones(const Shape& shape, NumericMode mode) {
    return full(shape, 1.0, mode);
}

Tensor Tensor::full(const Shape& shape, double value, NumericMode mode) {
    std::size_t n = static_cast<std::size_t>(numel(shape));
    if (mode == NumericMode::f32) {
        return Tensor(shape, std::vector<float>(n, static_cast<float>(value)));
    }
    return Tensor(shape, std::vector<double>(n, value));
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values,
                           NumericMode mode) {
    if (mode == NumericMode::f32) {
        std::vector<float> d(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            d[i] = static_cast<float>(values[i]);
        }
        return Tensor(shape, std::move(d));
    }
    return Tensor(shape, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::with_requires_grad(bool on) const {
    Tensor t = *this;
    t.requires_grad_ = on;
    return t;
}

double Tensor::at(std::int64_t i) const {
    return mode_ == NumericMode::f32 ? static_cast<double>((*f32_)[i])
                                     : (*f64_)[i];
}

std::span<const float> Tensor::f32() const {
    if (mode_ != NumericMode::f32) {
        throw ContractError("tensor is not in f32 mode");
    }
    return {f32_->data(), f32_->size()};
}

std::span<const double> Tensor::f64() const {
    if (mode_ != NumericMode::f64) {
        throw ContractError("tensor is not in f64 mode");
    }
    return {f64_->data(), f64_->size()};
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<std::size_t>(size_));
    for (std::int64_t i = 0; i < size_; ++i) out[i] = at(i);
    return out;
}

Tensor Tensor::to(NumericMode mode) const {
    if (mode == mode_) return *this;
    if (mode == NumericMode::f32) {
        std::vector<float> d(f64_->size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = static_cast<float>((*f64_)[i]);
        }
        return Tensor(shape_, std::move(d), requires_grad_);
    }
    std::vector<double> d(f32_->size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*f32_)[i];
    return Tensor(shape_, std::move(d), requires_grad_);
}

bool Tensor::all_finite() const {
    if (mode_ == NumericMode::f32) {
        for (float v : *f32_) {
            if (!std::isfinite(v)) return false;
        }
    } else {
        for (double v : *f64_) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

bool Tensor::same_values(const Tensor& other) const {
    if (mode_ != other.mode_ || shape_ != other.shape_) return false;
    if (mode_ == NumericMode::f32) {
        return std::memcmp(f32_->data(), other.f32_->data(),
                           f32_->size() * sizeof(float)) == 0;
    }
    return std::memcmp(f64_->data(), other.f64_->data(),
                       f64_->size() * sizeof(double)) == 0;
}

void check_same_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.mode() != b.mode()) {
        throw ContractError(std::string(op) + ": operands mix numeric modes " +
                            to_string(a.mode()) + " and " + to_string(b.mode()));
    }
}

}  // namespace bafo
