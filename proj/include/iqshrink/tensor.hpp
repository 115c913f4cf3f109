#ifndef IQSHRINK_TENSOR_HPP
#define IQSHRINK_TENSOR_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "iqshrink/common.hpp"

namespace iqshrink {

// Dense row-major shape, rank 1..4.
struct Shape {
    std::array<std::int64_t, 4> dim{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims) {
        if (dims.size() < 1 || dims.size() > 4) {
            throw contract_error("shape rank must be 1..4");
        }
        rank = static_cast<int>(dims.size());
        int i = 0;
        for (auto d : dims) {
            if (d < 0) throw contract_error("negative shape extent");
            dim[static_cast<std::size_t>(i++)] = d;
        }
    }

    std::int64_t operator[](int i) const { return dim[static_cast<std::size_t>(i)]; }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= dim[static_cast<std::size_t>(i)];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i) {
            if (dim[static_cast<std::size_t>(i)] != o.dim[static_cast<std::size_t>(i)]) return false;
        }
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '[';
        for (int i = 0; i < rank; ++i) {
            if (i) os << 'x';
            os << dim[static_cast<std::size_t>(i)];
        }
        os << ']';
        return os.str();
    }
};

template <typename Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s, Real fill = Real(0))
        : shape_(s), data_(static_cast<std::size_t>(s.numel()), fill) {}
    Tensor(Shape s, std::vector<Real> values) : shape_(s), data_(std::move(values)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
            throw contract_error("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_.str());
        }
    }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    int rank() const { return shape_.rank; }
    std::int64_t dim(int i) const { return shape_[i]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Row-major indexing; rank-checked only by shape arithmetic.
    Real& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    Real at2(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    Real& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    Real at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    Real& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    Real at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    void fill(Real v) {
        for (auto& x : data_) x = v;
    }

    void check_finite(const char* where) const {
        // multiplying by zero maps finite values to +-0 and NaN/Inf to NaN,
        // so one vectorizable accumulation pass detects poisoning
        Real acc = Real(0);
        for (const Real v : data_) acc += v * Real(0);
        if (!(acc == Real(0))) {
            throw numeric_error(std::string("non-finite value produced by ") + where);
        }
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<Other>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    Shape shape_;
    std::vector<Real> data_;
};

// A learnable tensor paired with its gradient buffer and a unique name.
template <typename Real>
struct Parameter {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::string name;
    bool regularizable = false;  // participates in the L2 penalty

    Parameter() = default;
    Parameter(Shape s, std::string n, bool reg = false)
        : value(s), grad(s), name(std::move(n)), regularizable(reg) {}

    void zero_grad() { grad.fill(Real(0)); }
    std::int64_t numel() const { return value.numel(); }
};

}  // namespace iqshrink

#endif
