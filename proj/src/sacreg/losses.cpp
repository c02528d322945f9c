#include "losses.hpp"

#include <cmath>

#include "matching.hpp"
#include "tensor_detail.hpp"

namespace sacreg {

using detail::alloc_buffer;
using detail::grad_of;
using detail::make_node;

namespace {

constexpr double kNccEps = 1e-5;

// Windowed sums over full windows: out[p] = sum of in over the r-window at p
// for centers with the window entirely inside, 0 elsewhere. Three separable
// prefix-sum passes.
void box_sum_full(std::vector<double>& f, int d, int h, int w, int r) {
    std::vector<double> tmp(f.size());
    const int ext[3] = {d, h, w};
    const std::size_t stride[3] = {static_cast<std::size_t>(h) * w,
                                   static_cast<std::size_t>(w), 1};
    std::vector<double> prefix;
    for (int axis = 2; axis >= 0; --axis) {
        const int n = ext[axis];
        const std::size_t st = stride[axis];
        prefix.assign(static_cast<std::size_t>(n) + 1, 0.0);
        // iterate over all lines along `axis`
        const int oa = axis == 0 ? 1 : 0;         // first other axis
        const int ob = axis == 2 ? 1 : 2;         // second other axis
        for (int i = 0; i < ext[oa]; ++i) {
            for (int j = 0; j < ext[ob]; ++j) {
                const std::size_t base = static_cast<std::size_t>(i) * stride[oa] +
                                         static_cast<std::size_t>(j) * stride[ob];
                for (int q = 0; q < n; ++q)
                    prefix[static_cast<std::size_t>(q) + 1] =
                        prefix[static_cast<std::size_t>(q)] + f[base + q * st];
                for (int q = 0; q < n; ++q) {
                    tmp[base + q * st] =
                        (q >= r && q < n - r)
                            ? prefix[static_cast<std::size_t>(q + r) + 1] -
                                  prefix[static_cast<std::size_t>(q - r)]
                            : 0.0;
                }
            }
        }
        f.swap(tmp);
    }
}

// Adjoint: out[v] = sum of in over the r-window at v with zero padding at the
// borders (in holds zeros outside valid centers, so this sums over the valid
// centers covering v).
void box_sum_all(std::vector<double>& f, int d, int h, int w, int r) {
    std::vector<double> tmp(f.size());
    const int ext[3] = {d, h, w};
    const std::size_t stride[3] = {static_cast<std::size_t>(h) * w,
                                   static_cast<std::size_t>(w), 1};
    std::vector<double> prefix;
    for (int axis = 2; axis >= 0; --axis) {
        const int n = ext[axis];
        const std::size_t st = stride[axis];
        prefix.assign(static_cast<std::size_t>(n) + 1, 0.0);
        const int oa = axis == 0 ? 1 : 0;
        const int ob = axis == 2 ? 1 : 2;
        for (int i = 0; i < ext[oa]; ++i) {
            for (int j = 0; j < ext[ob]; ++j) {
                const std::size_t base = static_cast<std::size_t>(i) * stride[oa] +
                                         static_cast<std::size_t>(j) * stride[ob];
                for (int q = 0; q < n; ++q)
                    prefix[static_cast<std::size_t>(q) + 1] =
                        prefix[static_cast<std::size_t>(q)] + f[base + q * st];
                for (int q = 0; q < n; ++q) {
                    const int lo = std::max(0, q - r);
                    const int hi = std::min(n - 1, q + r);
                    tmp[base + q * st] =
                        prefix[static_cast<std::size_t>(hi) + 1] -
                        prefix[static_cast<std::size_t>(lo)];
                }
            }
        }
        f.swap(tmp);
    }
}

struct NccFields {
    std::vector<double> alpha;    // 1/D at valid centers
    std::vector<double> alpha_mf;
    std::vector<double> alpha_mw;
    std::vector<double> beta_w;   // cross*varf/D^3
    std::vector<double> beta_w_mw;
    std::vector<double> beta_f;   // cross*varw/D^3
    std::vector<double> beta_f_mf;
    double cc_sum = 0.0;
    std::size_t centers = 0;
};

// windowed statistics shared by forward and backward
template <typename T>
NccFields ncc_fields(const T* f, const T* b, int d, int h, int w, int r,
                     bool want_grads) {
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    std::vector<double> sf(msp), sb(msp), sff(msp), sbb(msp), sfb(msp);
    for (std::size_t v = 0; v < msp; ++v) {
        const double fv = f[v], bv = b[v];
        sf[v] = fv;
        sb[v] = bv;
        sff[v] = fv * fv;
        sbb[v] = bv * bv;
        sfb[v] = fv * bv;
    }
    box_sum_full(sf, d, h, w, r);
    box_sum_full(sb, d, h, w, r);
    box_sum_full(sff, d, h, w, r);
    box_sum_full(sbb, d, h, w, r);
    box_sum_full(sfb, d, h, w, r);

    NccFields out;
    if (want_grads) {
        out.alpha.assign(msp, 0.0);
        out.alpha_mf.assign(msp, 0.0);
        out.alpha_mw.assign(msp, 0.0);
        out.beta_w.assign(msp, 0.0);
        out.beta_w_mw.assign(msp, 0.0);
        out.beta_f.assign(msp, 0.0);
        out.beta_f_mf.assign(msp, 0.0);
    }
    const int side = 2 * r + 1;
    const double n = static_cast<double>(side) * side * side;
    for (int z = r; z < d - r; ++z) {
        for (int y = r; y < h - r; ++y) {
            for (int x = r; x < w - r; ++x) {
                const std::size_t v = (static_cast<std::size_t>(z) * h + y) * w + x;
                const double mf = sf[v] / n, mw = sb[v] / n;
                const double cross = sfb[v] - sf[v] * sb[v] / n;
                const double varf = std::max(0.0, sff[v] - sf[v] * sf[v] / n);
                const double varw = std::max(0.0, sbb[v] - sb[v] * sb[v] / n);
                const double dd = std::sqrt(varf * varw + kNccEps);
                const double cc = cross / dd;
                out.cc_sum += cc;
                ++out.centers;
                if (want_grads) {
                    const double d3 = dd * dd * dd;
                    out.alpha[v] = 1.0 / dd;
                    out.alpha_mf[v] = mf / dd;
                    out.alpha_mw[v] = mw / dd;
                    out.beta_w[v] = cross * varf / d3;
                    out.beta_w_mw[v] = out.beta_w[v] * mw;
                    out.beta_f[v] = cross * varw / d3;
                    out.beta_f_mf[v] = out.beta_f[v] * mf;
                }
            }
        }
    }
    return out;
}

}  // namespace

template <typename T>
TensorT<T> ncc_loss(const TensorT<T>& fixed, const TensorT<T>& warped,
                    int window, bool mean_normalize) {
    int c, d, h, w;
    detail::spatial_dims(fixed, c, d, h, w);
    check(c == 1, "ncc_loss: expected single-channel volumes");
    check(fixed.shape() == warped.shape(), "ncc_loss: extents differ, " +
                                               shape_str(fixed.shape()) + " vs " +
                                               shape_str(warped.shape()));
    check(window % 2 == 1 && window >= 1, "ncc_loss: window must be odd");
    const int r = window / 2;

    NccFields fields =
        ncc_fields(fixed.data(), warped.data(), d, h, w, r, false);
    const double denom =
        mean_normalize && fields.centers > 0 ? static_cast<double>(fields.centers)
                                             : 1.0;
    auto out = alloc_buffer<T>(1);
    (*out)[0] = static_cast<T>(-fields.cc_sum / denom);

    auto an = fixed.node(), bn = warped.node();
    return make_node<T>(
        {1}, out, {fixed, warped}, [an, bn, d, h, w, r, denom](NodeT<T>& self) {
            T* dfix = grad_of(an);
            T* dwrp = grad_of(bn);
            if (!dfix && !dwrp) return;
            const T* f = an->value->data();
            const T* b = bn->value->data();
            NccFields fl = ncc_fields(f, b, d, h, w, r, true);
            box_sum_all(fl.alpha, d, h, w, r);
            box_sum_all(fl.alpha_mf, d, h, w, r);
            box_sum_all(fl.alpha_mw, d, h, w, r);
            box_sum_all(fl.beta_w, d, h, w, r);
            box_sum_all(fl.beta_w_mw, d, h, w, r);
            box_sum_all(fl.beta_f, d, h, w, r);
            box_sum_all(fl.beta_f_mf, d, h, w, r);
            const double g = -static_cast<double>(self.grad[0]) / denom;
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            for (std::size_t v = 0; v < msp; ++v) {
                const double fv = f[v], bv = b[v];
                if (dwrp) {
                    dwrp[v] += static_cast<T>(
                        g * (fv * fl.alpha[v] - fl.alpha_mf[v] -
                             bv * fl.beta_w[v] + fl.beta_w_mw[v]));
                }
                if (dfix) {
                    dfix[v] += static_cast<T>(
                        g * (bv * fl.alpha[v] - fl.alpha_mw[v] -
                             fv * fl.beta_f[v] + fl.beta_f_mf[v]));
                }
            }
        });
}

template <typename T>
TensorT<T> smoothness(const TensorT<T>& flow) {
    int c, d, h, w;
    detail::spatial_dims(flow, c, d, h, w);
    check(c == 3, "smoothness: expected a [3,D,H,W] flow");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const std::size_t terms =
        3 * (static_cast<std::size_t>(d - 1) * h * w +
             static_cast<std::size_t>(d) * (h - 1) * w +
             static_cast<std::size_t>(d) * h * (w - 1));
    const T* x = flow.data();

    const std::size_t stride[3] = {static_cast<std::size_t>(h) * w,
                                   static_cast<std::size_t>(w), 1};
    const int ext[3] = {d, h, w};
    double acc = 0.0;
    for (int ci = 0; ci < 3; ++ci) {
        const T* xc = x + static_cast<std::size_t>(ci) * msp;
        for (int axis = 0; axis < 3; ++axis) {
            const std::size_t st = stride[axis];
            std::size_t v = 0;
            for (int z = 0; z < d; ++z)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx, ++v) {
                        const int pos = axis == 0 ? z : (axis == 1 ? y : xx);
                        if (pos + 1 >= ext[axis]) continue;
                        const double dv =
                            static_cast<double>(xc[v + st]) - xc[v];
                        acc += dv * dv;
                    }
        }
    }
    auto out = alloc_buffer<T>(1);
    (*out)[0] = static_cast<T>(acc / static_cast<double>(terms));

    auto fn = flow.node();
    return make_node<T>(
        {1}, out, {flow}, [fn, d, h, w, terms](NodeT<T>& self) {
            T* df = grad_of(fn);
            if (!df) return;
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            const std::size_t stride[3] = {static_cast<std::size_t>(h) * w,
                                           static_cast<std::size_t>(w), 1};
            const int ext[3] = {d, h, w};
            const T* x = fn->value->data();
            const double g =
                2.0 * static_cast<double>(self.grad[0]) / static_cast<double>(terms);
            for (int ci = 0; ci < 3; ++ci) {
                const T* xc = x + static_cast<std::size_t>(ci) * msp;
                T* dc = df + static_cast<std::size_t>(ci) * msp;
                for (int axis = 0; axis < 3; ++axis) {
                    const std::size_t st = stride[axis];
                    std::size_t v = 0;
                    for (int z = 0; z < d; ++z)
                        for (int y = 0; y < h; ++y)
                            for (int xx = 0; xx < w; ++xx, ++v) {
                                const int pos = axis == 0 ? z : (axis == 1 ? y : xx);
                                if (pos + 1 >= ext[axis]) continue;
                                const double dv =
                                    static_cast<double>(xc[v + st]) - xc[v];
                                dc[v + st] += static_cast<T>(g * dv);
                                dc[v] -= static_cast<T>(g * dv);
                            }
                }
            }
        });
}

std::pair<Tensor, LossReport> total_loss(const Tensor& moving,
                                         const Tensor& fixed, const Tensor& flow,
                                         double lambda, int ncc_window,
                                         bool ncc_mean) {
    Tensor warped = warp(moving, flow);
    Tensor sim = ncc_loss(fixed, warped, ncc_window, ncc_mean);
    Tensor reg = smoothness(flow);
    Tensor total = add(sim, scale(reg, static_cast<float>(lambda)));
    LossReport rep;
    rep.sim = sim.item();
    rep.reg = reg.item();
    rep.lambda = lambda;
    rep.total = total.item();
    return {total, rep};
}

template TensorT<float> ncc_loss(const TensorT<float>&, const TensorT<float>&,
                                 int, bool);
template TensorT<double> ncc_loss(const TensorT<double>&, const TensorT<double>&,
                                  int, bool);
template TensorT<float> smoothness(const TensorT<float>&);
template TensorT<double> smoothness(const TensorT<double>&);

}  // namespace sacreg
