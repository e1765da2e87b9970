#pragma once

#include <bit>
#include <cmath>
#include <span>

#include "tedio/autograd.hpp"
#include "tedio/tensor.hpp"

namespace tedio {

namespace detail {

// Branch-free exp for the f32 forward path (~1e-7 rel err, vectorizes).
// The f64 path keeps libm accuracy for the gradient oracle.
inline float fast_expf(float x) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    const float t = x * 1.442695041f;
    const float fi = std::floor(t);
    const float f = t - fi;
    const float p =
        1.000000019e+00f +
        f * (6.931469822e-01f +
             f * (2.401536316e-01f +
                  f * (5.582631183e-02f + f * (8.989340594e-03f + f * 1.877576135e-03f))));
    const int32_t e = static_cast<int32_t>(fi);
    return p * std::bit_cast<float>((e + 127) << 23);
}

template <class T>
inline T softmax_exp(T x) {
    if constexpr (std::is_same_v<T, float>)
        return fast_expf(x);
    else
        return std::exp(x);
}

}  // namespace detail

// All ops allocate fresh outputs, never mutate inputs, and record a
// backward closure on the thread's active tape when any input is tracked.
// Reductions run in sequential index-ascending order.

/// Batched matrix product. a is [..., M, K]; b is [K, N] (broadcast over
/// the batch) or [..., K, N] with identical leading extents.
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

/// Swap the last two axes (materializing copy).
template <class T>
TensorT<T> transpose_last2(const TensorT<T>& x);

/// Axis permutation followed by a row-major relabeling to new_shape.
template <class T>
TensorT<T> permute(const TensorT<T>& x, std::span<const int64_t> order);
template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape);
template <class T>
TensorT<T> permute_reshape(const TensorT<T>& x, std::span<const int64_t> order, Shape new_shape);

/// Numerically stable softmax along `axis` (negative axes allowed).
template <class T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis);

// Elementwise suite. Binary ops accept equal shapes, a scalar right-hand
// side (numel 1), or a right-hand side matching the trailing extents of the
// left (broadcast over leading axes).
template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c);
template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c);
template <class T>
TensorT<T> square(const TensorT<T>& a);
template <class T>
TensorT<T> gelu(const TensorT<T>& a);
template <class T>
TensorT<T> mean(const TensorT<T>& a);
template <class T>
TensorT<T> sum(const TensorT<T>& a);

/// Per-token normalization over the last axis (eps 1e-5) with affine.
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias);

/// Columns [start, start+len) of the last axis.
template <class T>
TensorT<T> slice_last(const TensorT<T>& x, int64_t start, int64_t len);

/// Rows of x (first axis) at the given indices; repeats allowed.
template <class T>
TensorT<T> gather_rows(const TensorT<T>& x, std::span<const int64_t> indices);

/// Diagonal band at offset b of each F-by-F map: out[p, i] = x[p, i, i+b]
/// for the valid i range; length F-|b|. Accepts [F,F] or [P,F,F].
template <class T>
TensorT<T> diag_band(const TensorT<T>& x, int64_t offset);

/// Sum over bands of squared successive differences along each band,
/// per map: [P,F,F] -> [P]. Bands of length < 2 contribute zero.
template <class T>
TensorT<T> diag_variability(const TensorT<T>& x, std::span<const int64_t> bands);

// test/metrics conveniences (not taped)
template <class T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b);
template <class T>
T max_rel_err(const TensorT<T>& got, const TensorT<T>& want, T floor);

#define TEDIO_EXTERN_OPS(T)                                                                     \
    extern template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                \
    extern template TensorT<T> transpose_last2<T>(const TensorT<T>&);                          \
    extern template TensorT<T> permute<T>(const TensorT<T>&, std::span<const int64_t>);        \
    extern template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                           \
    extern template TensorT<T> permute_reshape<T>(const TensorT<T>&, std::span<const int64_t>, \
                                                  Shape);                                      \
    extern template TensorT<T> softmax<T>(const TensorT<T>&, int64_t);                         \
    extern template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                   \
    extern template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                   \
    extern template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                   \
    extern template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                            \
    extern template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                            \
    extern template TensorT<T> square<T>(const TensorT<T>&);                                   \
    extern template TensorT<T> gelu<T>(const TensorT<T>&);                                     \
    extern template TensorT<T> mean<T>(const TensorT<T>&);                                     \
    extern template TensorT<T> sum<T>(const TensorT<T>&);                                      \
    extern template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&,             \
                                             const TensorT<T>&);                               \
    extern template TensorT<T> slice_last<T>(const TensorT<T>&, int64_t, int64_t);             \
    extern template TensorT<T> gather_rows<T>(const TensorT<T>&, std::span<const int64_t>);    \
    extern template TensorT<T> diag_band<T>(const TensorT<T>&, int64_t);                       \
    extern template TensorT<T> diag_variability<T>(const TensorT<T>&,                          \
                                                   std::span<const int64_t>);                  \
    extern template T max_abs_diff<T>(const TensorT<T>&, const TensorT<T>&);                   \
    extern template T max_rel_err<T>(const TensorT<T>&, const TensorT<T>&, T);

TEDIO_EXTERN_OPS(float)
TEDIO_EXTERN_OPS(double)
#undef TEDIO_EXTERN_OPS

}  // namespace tedio
