#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dspnet/errors.hpp"

namespace dspnet {

using Shape = std::vector<std::size_t>;

enum class DType : unsigned { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. Value semantics: copies are deep.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::initializer_list<std::size_t> idx);
    const T& at(std::initializer_list<std::size_t> idx) const;

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(T v);
    bool all_finite() const;

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    std::vector<T> data_;
};

/// Read-only 2-D window over row-major storage. `ld` is the distance between
/// consecutive rows, which exceeds `cols` for prefix slices of wider tensors.
template <class T>
struct MatRef {
    const T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t ld = 0;

    bool contiguous() const { return ld == cols; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * ld + c]; }
};

template <class T>
MatRef<T> as_matrix(const Tensor<T>& t);

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Keeps freed activation buffers in the process heap so later steps reuse
/// already-mapped pages. glibc only; a no-op elsewhere. Call once from main.
void tune_allocator();

}  // namespace dspnet
