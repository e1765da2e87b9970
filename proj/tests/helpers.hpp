#pragma once

#include <doctest.h>

#include <functional>

#include "tedio/autograd.hpp"
#include "tedio/ops.hpp"
#include "tedio/tensor.hpp"

namespace tedio::testutil {

template <class T>
TensorT<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    TensorT<T> t(std::move(shape));
    for (auto& v : *t.data) v = static_cast<T>(scale * rng.normal());
    return t;
}

// Compare reverse-mode gradient of a scalar-valued composition against
// central finite differences. `fwd` must be deterministic and use only taped
// ops. Returns the max rel err (with a small floor on the denominator).
template <class T>
T grad_vs_fd(const std::function<TensorT<T>(const TensorT<T>&)>& fwd, const TensorT<T>& x, T step,
             T floor = T(1e-6)) {
    TensorT<T> fd = finite_diff_gradient<T>(
        [&](const TensorT<T>& probe) { return fwd(probe).item(); }, x, step);
    TensorT<T> xv = x.clone();
    GradScopeT<T> scope;
    scope.watch(xv);
    TensorT<T> loss = fwd(xv);
    auto grads = scope.backward(loss);
    return max_rel_err(grads.at(xv), fd, floor);
}

}  // namespace tedio::testutil
