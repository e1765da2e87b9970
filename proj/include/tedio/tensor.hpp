#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "tedio/errors.hpp"

namespace tedio {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
// skips value-initialization so large op outputs avoid a zero-fill pass
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    template <class U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};
}  // namespace detail

template <class T>
using Buffer = std::vector<T, detail::DefaultInitAllocator<T>>;

// Runtime toggle for post-op finiteness checks. Defaults to on in debug
// builds, off in release; tests switch it on explicitly.
void set_finite_checks(bool on);
bool finite_checks_enabled();

/// Dense row-major n-d array. `data` is shared between tensors that are
/// pure reshapes of each other; ops never mutate an existing buffer.
/// `tape_id`/`tape_epoch` tie the tensor to the thread's active gradient
/// tape; a tensor whose epoch does not match the active tape is a constant.
template <class T>
struct TensorT {
    Shape shape;
    std::shared_ptr<Buffer<T>> data;
    bool requires_grad = false;
    uint64_t tape_epoch = 0;
    int64_t tape_id = -1;

    TensorT() : data(std::make_shared<Buffer<T>>()) {}
    explicit TensorT(Shape s) : shape(std::move(s)) {
        const auto n = static_cast<size_t>(numel_of(shape));
        data = std::make_shared<Buffer<T>>(n);
        std::fill(data->begin(), data->end(), T(0));
    }

    /// Allocated but not zeroed; every element must be written before use.
    static TensorT uninit(Shape s) {
        TensorT t;
        t.shape = std::move(s);
        t.data = std::make_shared<Buffer<T>>(static_cast<size_t>(numel_of(t.shape)));
        return t;
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T v) {
        TensorT t = uninit(std::move(s));
        for (auto& x : *t.data) x = v;
        return t;
    }
    static TensorT from(Shape s, std::vector<T> values) {
        if (numel_of(s) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor: " + shape_str(s) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        TensorT t;
        t.shape = std::move(s);
        t.data = std::make_shared<Buffer<T>>(values.begin(), values.end());
        return t;
    }
    static TensorT scalar(T v) { return from({}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data->size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const { return shape[i < 0 ? shape.size() + i : i]; }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    std::span<T> values() { return {data->data(), data->size()}; }
    std::span<const T> values() const { return {data->data(), data->size()}; }

    T item() const {
        if (numel() != 1) throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
        return (*data)[0];
    }

    /// Same values, no tape linkage. Shares the buffer.
    TensorT detached() const {
        TensorT t;
        t.shape = shape;
        t.data = data;
        return t;
    }
    /// Deep copy, no tape linkage.
    TensorT clone() const {
        TensorT t;
        t.shape = shape;
        t.data = std::make_shared<Buffer<T>>(*data);
        return t;
    }

    bool all_finite() const;
};

using Tensor = TensorT<float>;

/// Deterministic random source. Draws are fully specified here (no
/// std::*_distribution) so streams are stable across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds, rejection-free modulo is fine at our ranges
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; caches the second deviate.
    double normal();

    template <class It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(0, i)]);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <class T>
TensorT<T> randn(Shape s, Rng& rng) {
    TensorT<T> t(std::move(s));
    for (auto& v : *t.data) v = static_cast<T>(rng.normal());
    return t;
}

template <class T>
void check_finite(const TensorT<T>& t, const char* where) {
    if (!finite_checks_enabled()) return;
    if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite values in output");
}

extern template struct TensorT<float>;
extern template struct TensorT<double>;

}  // namespace tedio
