#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sacreg/common.hpp"
#include "sacreg/tensor.hpp"

namespace testutil {

inline int clampi(int v, int lo, int hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

template <typename T>
sacreg::TensorT<T> rand_tensor(sacreg::Rng& rng, std::vector<int> shape,
                               double lo, double hi, bool requires_grad = false) {
    std::vector<T> data(sacreg::shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return sacreg::TensorT<T>::leaf(std::move(shape), std::move(data),
                                    requires_grad);
}

template <typename T, typename U>
double max_abs_diff(const sacreg::TensorT<T>& a, const std::vector<U>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                         static_cast<double>(b[i])));
    }
    return worst;
}

template <typename T>
double max_abs_diff(const sacreg::TensorT<T>& a, const sacreg::TensorT<T>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                         static_cast<double>(b.data()[i])));
    }
    return worst;
}

}  // namespace testutil
