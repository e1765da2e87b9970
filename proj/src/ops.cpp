#include "tedio/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace tedio {
namespace {

// ---------------------------------------------------------------- kernels

// C += A * B with A [M,K], B [K,N], all row-major contiguous. The k loop is
// unrolled by 4 as one fixed expression tree per output element, so the
// reduction order depends only on the shapes and the j loop vectorizes.
template <class T>
void gemm_acc(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b, int64_t M,
              int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* __restrict__ crow = c + i * N;
        int64_t k = 0;
        for (; k + 4 <= K; k += 4) {
            const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
            const T* b0 = b + k * N;
            const T* b1 = b0 + N;
            const T* b2 = b1 + N;
            const T* b3 = b2 + N;
            for (int64_t j = 0; j < N; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A * B into an uninitialized C: each output row is zeroed right before
// its k loop, while it is hot in cache.
template <class T>
void gemm(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b, int64_t M,
          int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* __restrict__ crow = c + i * N;
        std::fill(crow, crow + N, T(0));
        int64_t k = 0;
        for (; k + 4 <= K; k += 4) {
            const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
            const T* b0 = b + k * N;
            const T* b1 = b0 + N;
            const T* b2 = b1 + N;
            const T* b3 = b2 + N;
            for (int64_t j = 0; j < N; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A^T * B with A [M,K], B [M,N], C [K,N]; m-ascending accumulation.
// Avoids materializing the transpose of a large A in backward passes.
template <class T>
void gemm_tn_acc(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b, int64_t M,
                 int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const T* arow = a + m * K;
        const T* brow = b + m * N;
        for (int64_t k = 0; k < K; ++k) {
            const T av = arow[k];
            T* __restrict__ crow = c + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void transpose2d(T* __restrict__ dst, const T* __restrict__ src, int64_t R, int64_t C) {
    constexpr int64_t B = 32;  // cache blocking
    for (int64_t r0 = 0; r0 < R; r0 += B)
        for (int64_t c0 = 0; c0 < C; c0 += B) {
            const int64_t r1 = std::min(r0 + B, R), c1 = std::min(c0 + B, C);
            for (int64_t r = r0; r < r1; ++r)
                for (int64_t c = c0; c < c1; ++c) dst[c * R + r] = src[r * C + c];
        }
}

using detail::softmax_exp;

// ------------------------------------------------------------- shape utils

int64_t prod(std::span<const int64_t> s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

int64_t normalize_axis(int64_t axis, int64_t rank) {
    const int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    return a;
}

// broadcast classification for binary elementwise ops
enum class Bcast { same, scalar, trailing };

Bcast classify(const Shape& a, const Shape& b) {
    if (a == b) return Bcast::same;
    if (numel_of(b) == 1) return Bcast::scalar;
    if (b.size() < a.size() &&
        std::equal(b.begin(), b.end(), a.end() - static_cast<int64_t>(b.size())))
        return Bcast::trailing;
    throw DimensionError("elementwise: shapes " + shape_str(a) + " and " + shape_str(b) +
                         " do not broadcast");
}

template <class T>
TapeT<T>* tape_if_tracked(std::initializer_list<const TensorT<T>*> ins) {
    auto* tp = TapeT<T>::active();
    if (!tp) return nullptr;
    for (auto* t : ins)
        if (tp->id_of(*t) >= 0) return tp;
    return nullptr;
}

}  // namespace

// ----------------------------------------------------------------- matmul

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul: need rank >= 2, got " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    const int64_t M = a.dim(-2), K = a.dim(-1);
    const int64_t Kb = b.dim(-2), N = b.dim(-1);
    const bool b_shared = b.rank() == 2 && a.rank() > 2;
    if (K != Kb || (!b_shared && b.rank() != a.rank()) ||
        (!b_shared && !std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin())))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));

    Shape out_shape(a.shape.begin(), a.shape.end() - 1);
    out_shape.push_back(N);
    TensorT<T> out = TensorT<T>::uninit(out_shape);
    const int64_t batches = prod({a.shape.data(), a.shape.size() - 2});
    for (int64_t bi = 0; bi < batches; ++bi)
        gemm(out.ptr() + bi * M * N, a.ptr() + bi * M * K,
             b_shared ? b.ptr() : b.ptr() + bi * K * N, M, K, N);
    check_finite(out, "matmul");

    if (auto* tp = tape_if_tracked<T>({&a, &b})) {
        const int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        auto ad = a.data;
        auto bd = b.data;
        tp->bind(out, tp->record("matmul", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     if (ia >= 0) {
                                         // dA = g . B^T per batch; B is small in
                                         // every use here, so transposing it is cheap
                                         T* da = gr.get(ia, batches * M * K);
                                         std::vector<T> bt(static_cast<size_t>(K) * N);
                                         if (b_shared) transpose2d(bt.data(), bd->data(), K, N);
                                         for (int64_t bi2 = 0; bi2 < batches; ++bi2) {
                                             if (!b_shared)
                                                 transpose2d(bt.data(), bd->data() + bi2 * K * N, K, N);
                                             gemm_acc(da + bi2 * M * K, g.data() + bi2 * M * N,
                                                      bt.data(), M, N, K);
                                         }
                                     }
                                     if (ib >= 0) {
                                         // dB (+)= A^T . g per batch, transpose-free
                                         T* db = gr.get(ib, b_shared ? K * N : batches * K * N);
                                         for (int64_t bi2 = 0; bi2 < batches; ++bi2)
                                             gemm_tn_acc(b_shared ? db : db + bi2 * K * N,
                                                         ad->data() + bi2 * M * K,
                                                         g.data() + bi2 * M * N, M, K, N);
                                     }
                                 }));
    }
    return out;
}

// -------------------------------------------------------------- transpose

template <class T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: need rank >= 2");
    const int64_t R = x.dim(-2), C = x.dim(-1);
    Shape out_shape = x.shape;
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    TensorT<T> out = TensorT<T>::uninit(out_shape);
    const int64_t batches = x.numel() / (R * C);
    for (int64_t bi = 0; bi < batches; ++bi)
        transpose2d(out.ptr() + bi * R * C, x.ptr() + bi * R * C, R, C);

    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        const int64_t n = x.numel();
        tp->bind(out, tp->record("transpose_last2", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     std::vector<T> tmp(static_cast<size_t>(R) * C);
                                     for (int64_t bi2 = 0; bi2 < batches; ++bi2) {
                                         transpose2d(tmp.data(), g.data() + bi2 * R * C, C, R);
                                         T* d = dx + bi2 * R * C;
                                         for (int64_t i = 0; i < R * C; ++i) d[i] += tmp[i];
                                     }
                                 }));
    }
    return out;
}

// --------------------------------------------------------- permute/reshape

template <class T>
TensorT<T> permute(const TensorT<T>& x, std::span<const int64_t> order) {
    const int64_t r = x.rank();
    if (static_cast<int64_t>(order.size()) != r)
        throw DimensionError("permute: order size " + std::to_string(order.size()) +
                             " vs rank " + std::to_string(r));
    std::vector<bool> seen(r, false);
    for (int64_t d : order) {
        if (d < 0 || d >= r || seen[d]) throw DimensionError("permute: invalid axis order");
        seen[d] = true;
    }
    Shape out_shape(r);
    for (int64_t d = 0; d < r; ++d) out_shape[d] = x.shape[order[d]];

    // source strides rearranged to the output axis order
    std::vector<int64_t> in_strides(r, 1);
    for (int64_t d = r - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * x.shape[d + 1];
    std::vector<int64_t> src_stride(r);
    for (int64_t d = 0; d < r; ++d) src_stride[d] = in_strides[order[d]];

    TensorT<T> out = TensorT<T>::uninit(out_shape);
    const int64_t n = x.numel();
    std::vector<int64_t> counter(r, 0);
    const T* src = x.ptr();
    T* dst = out.ptr();
    int64_t src_off = 0;
    for (int64_t i = 0; i < n; ++i) {
        dst[i] = src[src_off];
        for (int64_t d = r - 1; d >= 0; --d) {
            src_off += src_stride[d];
            if (++counter[d] < out_shape[d]) break;
            src_off -= src_stride[d] * out_shape[d];
            counter[d] = 0;
        }
    }

    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        tp->bind(out, tp->record("permute", out.shape,
                                 [=, shp = out_shape](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     std::vector<int64_t> ctr(r, 0);
                                     int64_t off = 0;
                                     for (int64_t i = 0; i < n; ++i) {
                                         dx[off] += g[i];
                                         for (int64_t d = r - 1; d >= 0; --d) {
                                             off += src_stride[d];
                                             if (++ctr[d] < shp[d]) break;
                                             off -= src_stride[d] * shp[d];
                                             ctr[d] = 0;
                                         }
                                     }
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape) + " to " + shape_str(new_shape) +
                             " changes element count");
    TensorT<T> out;
    out.shape = std::move(new_shape);
    out.data = x.data;  // same element order
    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        const int64_t n = x.numel();
        tp->bind(out, tp->record("reshape", out.shape, [=](const std::vector<T>& g, Grads<T>& gr) {
                     T* dx = gr.get(ix, n);
                     for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
                 }));
    }
    return out;
}

template <class T>
TensorT<T> permute_reshape(const TensorT<T>& x, std::span<const int64_t> order, Shape new_shape) {
    return reshape(permute(x, order), std::move(new_shape));
}

// ---------------------------------------------------------------- softmax

template <class T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis) {
    const int64_t ax = normalize_axis(axis, x.rank());
    const int64_t L = x.shape[ax];
    const int64_t outer = prod({x.shape.data(), static_cast<size_t>(ax)});
    const int64_t inner = x.numel() / (outer * L);

    TensorT<T> out = TensorT<T>::uninit(x.shape);
    const T* src = x.ptr();
    T* dst = out.ptr();
    if (inner == 1) {
        for (int64_t o = 0; o < outer; ++o) {
            const T* r = src + o * L;
            T* w = dst + o * L;
            T m = r[0];
            for (int64_t j = 1; j < L; ++j) m = r[j] > m ? r[j] : m;
            for (int64_t j = 0; j < L; ++j) w[j] = softmax_exp(r[j] - m);
            T s = 0;
            for (int64_t j = 0; j < L; ++j) s += w[j];
            if (!std::isfinite(s)) throw NumericError("softmax: non-finite input row");
            const T inv = T(1) / s;
            for (int64_t j = 0; j < L; ++j) w[j] *= inv;
        }
    } else {
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                const T* r = src + o * L * inner + i;
                T* w = dst + o * L * inner + i;
                T m = r[0];
                for (int64_t j = 1; j < L; ++j) m = std::max(m, r[j * inner]);
                T s = 0;
                for (int64_t j = 0; j < L; ++j) {
                    const T e = softmax_exp(r[j * inner] - m);
                    w[j * inner] = e;
                    s += e;
                }
                if (!std::isfinite(s)) throw NumericError("softmax: non-finite input row");
                const T inv = T(1) / s;
                for (int64_t j = 0; j < L; ++j) w[j * inner] *= inv;
            }
    }

    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        auto yd = out.data;
        const int64_t n = x.numel();
        tp->bind(out, tp->record("softmax", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     // dx = y * (g - sum_axis(g * y))
                                     T* dx = gr.get(ix, n);
                                     const T* y = yd->data();
                                     for (int64_t o = 0; o < outer; ++o)
                                         for (int64_t i = 0; i < inner; ++i) {
                                             const int64_t base = o * L * inner + i;
                                             T dot = 0;
                                             for (int64_t j = 0; j < L; ++j)
                                                 dot += g[base + j * inner] * y[base + j * inner];
                                             for (int64_t j = 0; j < L; ++j) {
                                                 const int64_t idx = base + j * inner;
                                                 dx[idx] += y[idx] * (g[idx] - dot);
                                             }
                                         }
                                 }));
    }
    return out;
}

// ------------------------------------------------------- elementwise suite

namespace {

template <class T, class FwdF, class DaF, class DbF>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, FwdF fop, DaF da,
                     DbF db) {
    const Bcast mode = classify(a.shape, b.shape);
    const int64_t n = a.numel();
    const int64_t bn = b.numel();
    TensorT<T> out = TensorT<T>::uninit(a.shape);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    if (mode == Bcast::scalar) {
        const T s = pb[0];
        for (int64_t i = 0; i < n; ++i) po[i] = fop(pa[i], s);
    } else if (mode == Bcast::same) {
        for (int64_t i = 0; i < n; ++i) po[i] = fop(pa[i], pb[i]);
    } else {
        for (int64_t i = 0; i < n; ++i) po[i] = fop(pa[i], pb[i % bn]);
    }
    check_finite(out, name);

    if (auto* tp = tape_if_tracked<T>({&a, &b})) {
        const int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        auto ad = a.data;
        auto bd = b.data;
        tp->bind(out, tp->record(name, out.shape, [=](const std::vector<T>& g, Grads<T>& gr) {
                     const T* xa = ad->data();
                     const T* xb = bd->data();
                     if (ia >= 0) {
                         T* d = gr.get(ia, n);
                         for (int64_t i = 0; i < n; ++i)
                             d[i] += da(g[i], xa[i], xb[mode == Bcast::same ? i : i % bn]);
                     }
                     if (ib >= 0) {
                         T* d = gr.get(ib, bn);
                         for (int64_t i = 0; i < n; ++i)
                             d[mode == Bcast::same ? i : i % bn] +=
                                 db(g[i], xa[i], xb[mode == Bcast::same ? i : i % bn]);
                     }
                 }));
    }
    return out;
}

}  // namespace

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::uninit(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + c;
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        tp->bind(out, tp->record("add_scalar", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* d = gr.get(ia, n);
                                     for (int64_t i = 0; i < n; ++i) d[i] += g[i];
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::uninit(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * c;
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        tp->bind(out, tp->record("mul_scalar", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* d = gr.get(ia, n);
                                     for (int64_t i = 0; i < n; ++i) d[i] += c * g[i];
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> square(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::uninit(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * a.ptr()[i];
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        auto ad = a.data;
        tp->bind(out, tp->record("square", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* d = gr.get(ia, n);
                                     const T* x = ad->data();
                                     for (int64_t i = 0; i < n; ++i) d[i] += T(2) * x[i] * g[i];
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& a) {
    // tanh approximation
    constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kA = T(0.044715);
    TensorT<T> out = TensorT<T>::uninit(a.shape);
    const int64_t n = a.numel();
    const T* x = a.ptr();
    T* y = out.ptr();
    for (int64_t i = 0; i < n; ++i) {
        const T u = kC * (x[i] + kA * x[i] * x[i] * x[i]);
        y[i] = T(0.5) * x[i] * (T(1) + std::tanh(u));
    }
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        auto ad = a.data;
        tp->bind(out, tp->record("gelu", out.shape, [=](const std::vector<T>& g, Grads<T>& gr) {
                     T* d = gr.get(ia, n);
                     const T* xv = ad->data();
                     for (int64_t i = 0; i < n; ++i) {
                         const T xi = xv[i];
                         const T u = kC * (xi + kA * xi * xi * xi);
                         const T th = std::tanh(u);
                         const T du = kC * (T(1) + T(3) * kA * xi * xi);
                         d[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * xi * (T(1) - th * th) * du);
                     }
                 }));
    }
    return out;
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    const int64_t n = a.numel();
    T s = 0;
    for (int64_t i = 0; i < n; ++i) s += a.ptr()[i];
    TensorT<T> out = TensorT<T>::scalar(s);
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        tp->bind(out, tp->record("sum", out.shape, [=](const std::vector<T>& g, Grads<T>& gr) {
                     T* d = gr.get(ia, n);
                     for (int64_t i = 0; i < n; ++i) d[i] += g[0];
                 }));
    }
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    const int64_t n = a.numel();
    T s = 0;
    for (int64_t i = 0; i < n; ++i) s += a.ptr()[i];
    TensorT<T> out = TensorT<T>::scalar(s / static_cast<T>(n));
    if (auto* tp = tape_if_tracked<T>({&a})) {
        const int64_t ia = tp->id_of(a);
        tp->bind(out, tp->record("mean", out.shape, [=](const std::vector<T>& g, Grads<T>& gr) {
                     T* d = gr.get(ia, n);
                     const T w = g[0] / static_cast<T>(n);
                     for (int64_t i = 0; i < n; ++i) d[i] += w;
                 }));
    }
    return out;
}

// -------------------------------------------------------------- layer norm

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias) {
    if (x.rank() < 1) throw DimensionError("layer_norm: rank 0 input");
    const int64_t D = x.dim(-1);
    if (gain.shape != Shape{D} || bias.shape != Shape{D})
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(D) + "], got " +
                             shape_str(gain.shape) + " / " + shape_str(bias.shape));
    constexpr T kEps = T(1e-5);
    const int64_t rows = x.numel() / D;
    TensorT<T> out = TensorT<T>::uninit(x.shape);
    auto mu = std::make_shared<std::vector<T>>(rows);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    const T* px = x.ptr();
    const T* pg = gain.ptr();
    const T* pb = bias.ptr();
    T* py = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * D;
        T* yr = py + r * D;
        T m = 0;
        for (int64_t j = 0; j < D; ++j) m += xr[j];
        m /= static_cast<T>(D);
        T v = 0;
        for (int64_t j = 0; j < D; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= static_cast<T>(D);
        const T rs = T(1) / std::sqrt(v + kEps);
        (*mu)[r] = m;
        (*rstd)[r] = rs;
        for (int64_t j = 0; j < D; ++j) yr[j] = (xr[j] - m) * rs * pg[j] + pb[j];
    }
    check_finite(out, "layer_norm");

    if (auto* tp = tape_if_tracked<T>({&x, &gain, &bias})) {
        const int64_t ix = tp->id_of(x), ig = tp->id_of(gain), ib = tp->id_of(bias);
        auto xd = x.data;
        auto gd = gain.data;
        tp->bind(out, tp->record("layer_norm", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     const T* xv = xd->data();
                                     const T* gv = gd->data();
                                     T* dx = ix >= 0 ? gr.get(ix, rows * D) : nullptr;
                                     T* dg = ig >= 0 ? gr.get(ig, D) : nullptr;
                                     T* db = ib >= 0 ? gr.get(ib, D) : nullptr;
                                     for (int64_t r = 0; r < rows; ++r) {
                                         const T* xr = xv + r * D;
                                         const T* gout = g.data() + r * D;
                                         const T m = (*mu)[r], rs = (*rstd)[r];
                                         if (dx) {
                                             T m1 = 0, m2 = 0;
                                             for (int64_t j = 0; j < D; ++j) {
                                                 const T xh = (xr[j] - m) * rs;
                                                 const T dxh = gout[j] * gv[j];
                                                 m1 += dxh;
                                                 m2 += dxh * xh;
                                             }
                                             m1 /= static_cast<T>(D);
                                             m2 /= static_cast<T>(D);
                                             for (int64_t j = 0; j < D; ++j) {
                                                 const T xh = (xr[j] - m) * rs;
                                                 dx[r * D + j] +=
                                                     rs * (gout[j] * gv[j] - m1 - xh * m2);
                                             }
                                         }
                                         if (dg)
                                             for (int64_t j = 0; j < D; ++j)
                                                 dg[j] += gout[j] * (xr[j] - m) * rs;
                                         if (db)
                                             for (int64_t j = 0; j < D; ++j) db[j] += gout[j];
                                     }
                                 }));
    }
    return out;
}

// ------------------------------------------------------------ slice/gather

template <class T>
TensorT<T> slice_last(const TensorT<T>& x, int64_t start, int64_t len) {
    const int64_t D = x.dim(-1);
    if (start < 0 || len <= 0 || start + len > D)
        throw DimensionError("slice_last: [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of last extent " +
                             std::to_string(D));
    Shape out_shape = x.shape;
    out_shape.back() = len;
    TensorT<T> out = TensorT<T>::uninit(out_shape);
    const int64_t rows = x.numel() / D;
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.ptr() + r * len, x.ptr() + r * D + start, sizeof(T) * len);

    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        const int64_t n = x.numel();
        tp->bind(out, tp->record("slice_last", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     for (int64_t r = 0; r < rows; ++r)
                                         for (int64_t j = 0; j < len; ++j)
                                             dx[r * D + start + j] += g[r * len + j];
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& x, std::span<const int64_t> indices) {
    if (x.rank() < 1) throw DimensionError("gather_rows: rank 0 input");
    const int64_t R = x.shape[0];
    const int64_t rowsz = x.numel() / R;
    for (int64_t i : indices)
        if (i < 0 || i >= R)
            throw UsageError("gather_rows: index " + std::to_string(i) + " out of " +
                             std::to_string(R));
    Shape out_shape = x.shape;
    out_shape[0] = static_cast<int64_t>(indices.size());
    TensorT<T> out = TensorT<T>::uninit(out_shape);
    for (size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.ptr() + static_cast<int64_t>(i) * rowsz, x.ptr() + indices[i] * rowsz,
                    sizeof(T) * rowsz);

    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        std::vector<int64_t> idx(indices.begin(), indices.end());
        const int64_t n = x.numel();
        tp->bind(out, tp->record("gather_rows", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     for (size_t i = 0; i < idx.size(); ++i)
                                         for (int64_t j = 0; j < rowsz; ++j)
                                             dx[idx[i] * rowsz + j] +=
                                                 g[static_cast<int64_t>(i) * rowsz + j];
                                 }));
    }
    return out;
}

// ---------------------------------------------------------- diagonal bands

namespace {

// start offsets of the band with the given offset inside an F x F map
inline void band_start(int64_t offset, int64_t F, int64_t& r0, int64_t& c0, int64_t& len) {
    r0 = offset >= 0 ? 0 : -offset;
    c0 = offset >= 0 ? offset : 0;
    len = F - (offset >= 0 ? offset : -offset);
}

template <class T>
std::pair<int64_t, int64_t> map_dims(const TensorT<T>& x, const char* who) {
    if (x.rank() == 2) {
        if (x.dim(0) != x.dim(1)) throw DimensionError(std::string(who) + ": map must be square");
        return {1, x.dim(0)};
    }
    if (x.rank() == 3) {
        if (x.dim(1) != x.dim(2)) throw DimensionError(std::string(who) + ": maps must be square");
        return {x.dim(0), x.dim(1)};
    }
    throw DimensionError(std::string(who) + ": expected [F,F] or [P,F,F], got " +
                         shape_str(x.shape));
}

}  // namespace

template <class T>
TensorT<T> diag_band(const TensorT<T>& x, int64_t offset) {
    auto [P, F] = map_dims(x, "diag_band");
    if (offset <= -F || offset >= F)
        throw UsageError("diag_band: offset " + std::to_string(offset) + " outside F=" +
                         std::to_string(F));
    int64_t r0, c0, len;
    band_start(offset, F, r0, c0, len);
    Shape out_shape = x.rank() == 2 ? Shape{len} : Shape{P, len};
    TensorT<T> out = TensorT<T>::uninit(out_shape);
    for (int64_t p = 0; p < P; ++p) {
        const T* m = x.ptr() + p * F * F;
        T* o = out.ptr() + p * len;
        for (int64_t i = 0; i < len; ++i) o[i] = m[(r0 + i) * F + (c0 + i)];
    }
    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        const int64_t n = x.numel();
        tp->bind(out, tp->record("diag_band", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     for (int64_t p = 0; p < P; ++p)
                                         for (int64_t i = 0; i < len; ++i)
                                             dx[p * F * F + (r0 + i) * F + (c0 + i)] +=
                                                 g[p * len + i];
                                 }));
    }
    return out;
}

template <class T>
TensorT<T> diag_variability(const TensorT<T>& x, std::span<const int64_t> bands) {
    auto [P, F] = map_dims(x, "diag_variability");
    for (int64_t b : bands)
        if (b <= -F || b >= F)
            throw UsageError("diag_variability: band " + std::to_string(b) + " outside F=" +
                             std::to_string(F));
    TensorT<T> out = TensorT<T>::uninit(Shape{P});
    for (int64_t p = 0; p < P; ++p) {
        const T* m = x.ptr() + p * F * F;
        T s = 0;
        for (int64_t b : bands) {
            int64_t r0, c0, len;
            band_start(b, F, r0, c0, len);
            for (int64_t i = 0; i + 1 < len; ++i) {
                const T d = m[(r0 + i + 1) * F + (c0 + i + 1)] - m[(r0 + i) * F + (c0 + i)];
                s += d * d;
            }
        }
        out.ptr()[p] = s;
    }
    if (auto* tp = tape_if_tracked<T>({&x})) {
        const int64_t ix = tp->id_of(x);
        auto xd = x.data;
        std::vector<int64_t> bs(bands.begin(), bands.end());
        const int64_t n = x.numel();
        tp->bind(out, tp->record("diag_variability", out.shape,
                                 [=](const std::vector<T>& g, Grads<T>& gr) {
                                     T* dx = gr.get(ix, n);
                                     const T* xv = xd->data();
                                     for (int64_t p = 0; p < P; ++p) {
                                         const T* m = xv + p * F * F;
                                         T* dm = dx + p * F * F;
                                         const T gp = g[p];
                                         for (int64_t b : bs) {
                                             int64_t r0, c0, len;
                                             band_start(b, F, r0, c0, len);
                                             for (int64_t i = 0; i + 1 < len; ++i) {
                                                 const int64_t hi = (r0 + i + 1) * F + (c0 + i + 1);
                                                 const int64_t lo = (r0 + i) * F + (c0 + i);
                                                 const T d = m[hi] - m[lo];
                                                 dm[hi] += T(2) * d * gp;
                                                 dm[lo] -= T(2) * d * gp;
                                             }
                                         }
                                     }
                                 }));
    }
    return out;
}

// ------------------------------------------------------------------- misc

template <class T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape != b.shape)
        throw DimensionError("max_abs_diff: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    T m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.ptr()[i] - b.ptr()[i]));
    return m;
}

template <class T>
T max_rel_err(const TensorT<T>& got, const TensorT<T>& want, T floor) {
    if (got.shape != want.shape)
        throw DimensionError("max_rel_err: " + shape_str(got.shape) + " vs " +
                             shape_str(want.shape));
    T m = 0;
    for (int64_t i = 0; i < got.numel(); ++i) {
        const T denom = std::max(std::abs(want.ptr()[i]), floor);
        m = std::max(m, std::abs(got.ptr()[i] - want.ptr()[i]) / denom);
    }
    return m;
}

#define TEDIO_INST_OPS(T)                                                                  \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                  \
    template TensorT<T> transpose_last2<T>(const TensorT<T>&);                            \
    template TensorT<T> permute<T>(const TensorT<T>&, std::span<const int64_t>);          \
    template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                             \
    template TensorT<T> permute_reshape<T>(const TensorT<T>&, std::span<const int64_t>,   \
                                           Shape);                                        \
    template TensorT<T> softmax<T>(const TensorT<T>&, int64_t);                           \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                     \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                     \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                     \
    template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                              \
    template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                              \
    template TensorT<T> square<T>(const TensorT<T>&);                                     \
    template TensorT<T> gelu<T>(const TensorT<T>&);                                       \
    template TensorT<T> mean<T>(const TensorT<T>&);                                       \
    template TensorT<T> sum<T>(const TensorT<T>&);                                        \
    template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&,               \
                                      const TensorT<T>&);                                 \
    template TensorT<T> slice_last<T>(const TensorT<T>&, int64_t, int64_t);               \
    template TensorT<T> gather_rows<T>(const TensorT<T>&, std::span<const int64_t>);      \
    template TensorT<T> diag_band<T>(const TensorT<T>&, int64_t);                         \
    template TensorT<T> diag_variability<T>(const TensorT<T>&, std::span<const int64_t>); \
    template T max_abs_diff<T>(const TensorT<T>&, const TensorT<T>&);                     \
    template T max_rel_err<T>(const TensorT<T>&, const TensorT<T>&, T);

TEDIO_INST_OPS(float)
TEDIO_INST_OPS(double)
#undef TEDIO_INST_OPS

}  // namespace tedio
