#include "dspnet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dspnet {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    for (auto e : shape_)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    data_.assign(shape_size(shape_), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto e : shape_)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    if (shape_size(shape_) != data_.size())
        throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                             " values");
}

template <class T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (auto i : idx) {
        if (i >= shape_[d]) throw DimensionError("index out of range");
        flat = flat * shape_[d] + i;
        ++d;
    }
    return flat;
}

template <class T>
T& Tensor<T>::at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
}

template <class T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

template <class T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool Tensor<T>::all_finite() const {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits exponent = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
    Bits bad = 0;
    for (T v : data_) bad |= Bits((std::bit_cast<Bits>(v) & exponent) == exponent);
    return bad == 0;
}

template <class T>
MatRef<T> as_matrix(const Tensor<T>& t) {
    if (t.empty()) return {};
    const std::size_t rows = t.rank() >= 2 ? t.dim(0) : 1;
    const std::size_t cols = t.size() / rows;
    return {t.data(), rows, cols, cols};
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max<T>(m, std::abs(a[i] - b[i]));
    return m;
}

void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

template class Tensor<float>;
template class Tensor<double>;
template MatRef<float> as_matrix(const Tensor<float>&);
template MatRef<double> as_matrix(const Tensor<double>&);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace dspnet
