#include "tedio/tensor.hpp"

#include <malloc.h>

#include <atomic>
#include <cmath>

namespace tedio {

namespace {
// Large activation buffers are allocated and freed every forward pass; keep
// them on the heap instead of round-tripping pages through mmap/munmap.
struct AllocTuning {
    AllocTuning() {
        mallopt(M_MMAP_THRESHOLD, 512 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
    }
};
const AllocTuning g_alloc_tuning;
}  // namespace

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw DimensionError("shape " + shape_str(s) + " has non-positive extent");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

template <class T>
bool TensorT<T>::all_finite() const {
    for (T v : *data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // draw u1 in (0,1] to keep log() finite
    double u1 = 0.0, u2 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

template struct TensorT<float>;
template struct TensorT<double>;

}  // namespace tedio
