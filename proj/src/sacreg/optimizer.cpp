#include "optimizer.hpp"

#include <cmath>

namespace sacreg {

Adam::Adam(const std::vector<std::pair<std::string, Tensor>>& params, double lr,
           double beta1, double beta2, double eps, double clip_norm)
    : params_(params),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      clip_norm_(clip_norm) {
    check(lr > 0.0, "adam: lr must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
        check(p.requires_grad(), "adam: parameter '" + name +
                                     "' does not require gradients");
        m_.push_back(std::vector<float>(p.numel(), 0.0f));
        v_.push_back(std::vector<float>(p.numel(), 0.0f));
    }
}

void Adam::step() {
    // global-norm clipping across every parameter gradient
    double norm2 = 0.0;
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        for (float g : p.grad()) norm2 += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm2);
    const double clip = norm > clip_norm_ ? clip_norm_ / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        std::vector<float>& m = m_[i];
        std::vector<float>& v = v_[i];
        const bool has = p.has_grad();
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = has ? static_cast<double>(p.grad()[j]) * clip : 0.0;
            const double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
            const double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p.data()[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
        if (has) p.zero_grad();
    }
}

}  // namespace sacreg
