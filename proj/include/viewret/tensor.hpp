#pragma once

#include "viewret/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace viewret {

/// 64-byte aligned allocator so vectorized kernels see the same alignment on
/// every allocation (and therefore take the same code paths).
template <class T, std::size_t Alignment = 64>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Alignment>;
    };

    T* allocate(std::size_t n)
    {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Alignment}));
    }

    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Alignment}); }

    template <class U>
    bool operator==(const AlignedAllocator<U, Alignment>&) const noexcept
    {
        return true;
    }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

enum class Mode { train, eval };

inline std::string shape_string(std::span<const std::size_t> dims)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out << (i ? "," : "") << dims[i];
    }
    out << ']';
    return out.str();
}

/// Dense row-major float32 array with a same-shape gradient buffer.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f) : dims_(std::move(dims))
    {
        for (std::size_t d : dims_) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be positive, got " + shape_string(dims_));
            }
        }
        const std::size_t n = count(dims_);
        data_.assign(n, fill);
        grad_.assign(n, 0.0f);
    }

    static Tensor from(std::vector<std::size_t> dims, std::span<const float> values)
    {
        Tensor t(std::move(dims));
        if (values.size() != t.size()) {
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_string(t.dims_));
        }
        std::copy(values.begin(), values.end(), t.data_.begin());
        return t;
    }

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::span<float> grad() noexcept { return grad_; }
    std::span<const float> grad() const noexcept { return grad_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0f); }

    void fill(float value) { std::fill(data_.begin(), data_.end(), value); }

    /// Changes the view of the data; element count must be preserved.
    void reshape(std::vector<std::size_t> dims)
    {
        if (count(dims) != size()) {
            throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
        }
        dims_ = std::move(dims);
    }

    /// Releases storage (used to drop large activations early).
    void release()
    {
        dims_.clear();
        FloatBuffer().swap(data_);
        FloatBuffer().swap(grad_);
    }

    void check_finite(std::string_view op) const
    {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw NumericError(std::string(op) + ": non-finite value at element " + std::to_string(i));
            }
        }
    }

    static std::size_t count(std::span<const std::size_t> dims)
    {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::size_t> dims_;
    FloatBuffer data_;
    FloatBuffer grad_;
};

inline void require_shape(const Tensor& t, std::span<const std::size_t> expected, std::string_view what)
{
    if (!std::equal(t.dims().begin(), t.dims().end(), expected.begin(), expected.end())) {
        throw ShapeError(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                         shape_string(t.dims()));
    }
}

inline void require_shape(const Tensor& t, std::initializer_list<std::size_t> expected, std::string_view what)
{
    require_shape(t, std::span<const std::size_t>(expected.begin(), expected.size()), what);
}

} // namespace viewret
