#pragma once

#include <cmath>
#include <functional>

#include "tensor.hpp"

namespace sacreg {

// Central-difference verification of reverse-mode gradients. `f` rebuilds the
// scalar graph from the current values of `leaves` on every call; returns the
// max over all leaf coordinates of |analytic - numeric| / max(1, |numeric|).
// Use TensorD leaves: finite differences are unreliable in 32-bit.
template <typename T>
double grad_check(const std::function<TensorT<T>()>& f,
                  std::vector<TensorT<T>> leaves, double eps = 1e-5) {
    TensorT<T> root = f();
    check(root.numel() == 1, "grad_check: f must be scalar-valued");
    for (auto& l : leaves) l.zero_grad();
    backward(root);

    double worst = 0.0;
    for (auto& l : leaves) {
        std::vector<T> analytic(l.numel(), T(0));
        if (l.has_grad()) analytic = l.grad();
        for (std::size_t i = 0; i < l.numel(); ++i) {
            const T saved = l.data()[i];
            l.data()[i] = saved + static_cast<T>(eps);
            const double fp = static_cast<double>(f().item());
            l.data()[i] = saved - static_cast<T>(eps);
            const double fm = static_cast<double>(f().item());
            l.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                               std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace sacreg
