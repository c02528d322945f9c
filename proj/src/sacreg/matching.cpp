#include "matching.hpp"

#include <cmath>

#include "tensor_detail.hpp"

namespace sacreg {

using detail::alloc_buffer;
using detail::grad_of;
using detail::make_node;

template <typename T>
TensorT<T> relative_grid(int k) {
    check(k % 2 == 1 && k >= 1, "relative_grid: window size must be odd");
    const int r = k / 2;
    std::vector<T> rows;
    rows.reserve(static_cast<std::size_t>(k) * k * k * 3);
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                rows.push_back(static_cast<T>(dz));
                rows.push_back(static_cast<T>(dy));
                rows.push_back(static_cast<T>(dx));
            }
    return TensorT<T>::leaf({k * k * k, 3}, std::move(rows));
}

template <typename T>
TensorT<T> similarity_logits(const TensorT<T>& f_f, const TensorT<T>& f_m, int k) {
    int c, d, h, w;
    detail::spatial_dims(f_f, c, d, h, w);
    check(f_f.shape() == f_m.shape(), "similarity_logits: shape mismatch " +
                                          shape_str(f_f.shape()) + " vs " +
                                          shape_str(f_m.shape()));
    check(k % 2 == 1, "similarity_logits: window size must be odd");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const int k3 = k * k * k;
    const auto nb = detail::neighbor_table(d, h, w, k, PadMode::replicate);

    auto out = alloc_buffer<T>(msp * k3);
    const T* ff = f_f.data();
    const T* fm = f_m.data();
    for (int ci = 0; ci < c; ++ci) {
        const T* fc = ff + static_cast<std::size_t>(ci) * msp;
        const T* mc = fm + static_cast<std::size_t>(ci) * msp;
        for (std::size_t v = 0; v < msp; ++v) {
            const T fv = fc[v];
            const int32_t* nbr = nb.data() + v * k3;
            T* row = out->data() + v * k3;
            for (int j = 0; j < k3; ++j) row[j] += fv * mc[nbr[j]];
        }
    }
    auto an = f_f.node(), bn = f_m.node();
    return make_node<T>(
        {static_cast<int>(msp), k3}, out, {f_f, f_m},
        [an, bn, c, d, h, w, k](NodeT<T>& self) {
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            const int k3 = k * k * k;
            const auto nb = detail::neighbor_table(d, h, w, k, PadMode::replicate);
            T* dff = grad_of(an);
            T* dfm = grad_of(bn);
            const T* g = self.grad.data();
            const T* ff = an->value->data();
            const T* fm = bn->value->data();
            for (int ci = 0; ci < c; ++ci) {
                const T* fc = ff + static_cast<std::size_t>(ci) * msp;
                const T* mc = fm + static_cast<std::size_t>(ci) * msp;
                T* dfc = dff ? dff + static_cast<std::size_t>(ci) * msp : nullptr;
                T* dmc = dfm ? dfm + static_cast<std::size_t>(ci) * msp : nullptr;
                for (std::size_t v = 0; v < msp; ++v) {
                    const int32_t* nbr = nb.data() + v * k3;
                    const T* row = g + v * k3;
                    if (dfc) {
                        T acc = T(0);
                        for (int j = 0; j < k3; ++j) acc += row[j] * mc[nbr[j]];
                        dfc[v] += acc;
                    }
                    if (dmc) {
                        const T fv = fc[v];
                        for (int j = 0; j < k3; ++j) dmc[nbr[j]] += row[j] * fv;
                    }
                }
            }
        });
}

template <typename T>
TensorT<T> similarity_scores(const TensorT<T>& f_f, const TensorT<T>& f_m, int k) {
    return softmax(similarity_logits(f_f, f_m, k), 1);
}

template <typename T>
TensorT<T> flow_from_scores(const TensorT<T>& scores, const TensorT<T>& grid,
                            int d, int h, int w) {
    check(scores.rank() == 2 && grid.rank() == 2 && grid.dim(1) == 3,
          "flow_from_scores: expected scores [M,k^3] and grid [k^3,3]");
    check(scores.dim(1) == grid.dim(0),
          "flow_from_scores: window arities differ");
    check(scores.dim(0) == d * h * w,
          "flow_from_scores: row count does not match extents");
    T radius = T(0);
    for (std::size_t i = 0; i < grid.numel(); ++i)
        radius = std::max(radius, std::abs(grid.data()[i]));
    TensorT<T> flow = reshape(permute(matmul(scores, grid), {1, 0}), {3, d, h, w});
    // expectations of offsets in [-r, r] lie in [-r, r]; the clamp trims the
    // last-ulp float dust so the documented bound holds exactly
    return clamp_values(flow, -radius, radius);
}

namespace {

struct Corner {
    int i0, i1;
    double frac;
    bool in_range;  // false when the sample position was clamped
};

inline Corner corner_of(double p, int n) {
    Corner c;
    c.in_range = p > 0.0 && p < static_cast<double>(n - 1);
    if (p <= 0.0) {
        c.i0 = c.i1 = 0;
        c.frac = 0.0;
    } else if (p >= static_cast<double>(n - 1)) {
        c.i0 = c.i1 = n - 1;
        c.frac = 0.0;
    } else {
        c.i0 = static_cast<int>(p);
        c.i1 = c.i0 + 1;
        c.frac = p - c.i0;
    }
    return c;
}

}  // namespace

template <typename T>
TensorT<T> warp(const TensorT<T>& input, const TensorT<T>& flow) {
    int c, d, h, w;
    detail::spatial_dims(input, c, d, h, w);
    check(flow.rank() == 4 && flow.dim(0) == 3 && flow.dim(1) == d &&
              flow.dim(2) == h && flow.dim(3) == w,
          "warp: flow must be [3,D,H,W] matching the input extents");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const T* x = input.data();
    const T* ph = flow.data();

    auto out = alloc_buffer<T>(input.numel());
    {
        std::size_t v = 0;
        for (int z = 0; z < d; ++z)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx, ++v) {
                    const Corner cz = corner_of(z + static_cast<double>(ph[v]), d);
                    const Corner cy =
                        corner_of(y + static_cast<double>(ph[msp + v]), h);
                    const Corner cx =
                        corner_of(xx + static_cast<double>(ph[2 * msp + v]), w);
                    for (int ci = 0; ci < c; ++ci) {
                        const T* xc = x + static_cast<std::size_t>(ci) * msp;
                        auto at = [&](int zz, int yy, int ww) {
                            return static_cast<double>(
                                xc[(static_cast<std::size_t>(zz) * h + yy) * w + ww]);
                        };
                        const double c00 = at(cz.i0, cy.i0, cx.i0) * (1 - cx.frac) +
                                           at(cz.i0, cy.i0, cx.i1) * cx.frac;
                        const double c01 = at(cz.i0, cy.i1, cx.i0) * (1 - cx.frac) +
                                           at(cz.i0, cy.i1, cx.i1) * cx.frac;
                        const double c10 = at(cz.i1, cy.i0, cx.i0) * (1 - cx.frac) +
                                           at(cz.i1, cy.i0, cx.i1) * cx.frac;
                        const double c11 = at(cz.i1, cy.i1, cx.i0) * (1 - cx.frac) +
                                           at(cz.i1, cy.i1, cx.i1) * cx.frac;
                        const double c0 = c00 * (1 - cy.frac) + c01 * cy.frac;
                        const double c1 = c10 * (1 - cy.frac) + c11 * cy.frac;
                        (*out)[static_cast<std::size_t>(ci) * msp + v] =
                            static_cast<T>(c0 * (1 - cz.frac) + c1 * cz.frac);
                    }
                }
    }

    auto xn = input.node();
    auto fn = flow.node();
    return make_node<T>(
        input.shape(), out, {input, flow}, [xn, fn, c, d, h, w](NodeT<T>& self) {
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            T* dx = grad_of(xn);
            T* df = grad_of(fn);
            const T* g = self.grad.data();
            const T* x = xn->value->data();
            const T* ph = fn->value->data();
            std::size_t v = 0;
            for (int z = 0; z < d; ++z)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx, ++v) {
                        const Corner cz =
                            corner_of(z + static_cast<double>(ph[v]), d);
                        const Corner cy =
                            corner_of(y + static_cast<double>(ph[msp + v]), h);
                        const Corner cx =
                            corner_of(xx + static_cast<double>(ph[2 * msp + v]), w);
                        const double wz[2] = {1 - cz.frac, cz.frac};
                        const double wy[2] = {1 - cy.frac, cy.frac};
                        const double wx[2] = {1 - cx.frac, cx.frac};
                        const int iz[2] = {cz.i0, cz.i1};
                        const int iy[2] = {cy.i0, cy.i1};
                        const int ix[2] = {cx.i0, cx.i1};
                        double gz = 0.0, gy = 0.0, gx = 0.0;
                        for (int ci = 0; ci < c; ++ci) {
                            const double gv = static_cast<double>(
                                g[static_cast<std::size_t>(ci) * msp + v]);
                            if (gv == 0.0) continue;
                            const T* xc = x + static_cast<std::size_t>(ci) * msp;
                            T* dxc = dx ? dx + static_cast<std::size_t>(ci) * msp
                                        : nullptr;
                            double corner[2][2][2];
                            for (int a = 0; a < 2; ++a)
                                for (int b = 0; b < 2; ++b)
                                    for (int e = 0; e < 2; ++e) {
                                        const std::size_t idx =
                                            (static_cast<std::size_t>(iz[a]) * h +
                                             iy[b]) *
                                                w +
                                            ix[e];
                                        corner[a][b][e] =
                                            static_cast<double>(xc[idx]);
                                        if (dxc) {
                                            dxc[idx] += static_cast<T>(
                                                gv * wz[a] * wy[b] * wx[e]);
                                        }
                                    }
                            if (df) {
                                for (int b = 0; b < 2; ++b)
                                    for (int e = 0; e < 2; ++e) {
                                        const double wbe = wy[b] * wx[e];
                                        gz += gv * wbe *
                                              (corner[1][b][e] - corner[0][b][e]);
                                    }
                                for (int a = 0; a < 2; ++a)
                                    for (int e = 0; e < 2; ++e) {
                                        const double wae = wz[a] * wx[e];
                                        gy += gv * wae *
                                              (corner[a][1][e] - corner[a][0][e]);
                                    }
                                for (int a = 0; a < 2; ++a)
                                    for (int b = 0; b < 2; ++b) {
                                        const double wab = wz[a] * wy[b];
                                        gx += gv * wab *
                                              (corner[a][b][1] - corner[a][b][0]);
                                    }
                            }
                        }
                        if (df) {
                            if (cz.in_range) df[v] += static_cast<T>(gz);
                            if (cy.in_range) df[msp + v] += static_cast<T>(gy);
                            if (cx.in_range) df[2 * msp + v] += static_cast<T>(gx);
                        }
                    }
        });
}

namespace {

struct AxisTap {
    int i0, i1;
    double frac;
};

// center-aligned 2x upsampling taps: s = (t + 0.5)/2 - 0.5, border-clamped
std::vector<AxisTap> upsample_taps(int src, int dst) {
    std::vector<AxisTap> taps(static_cast<std::size_t>(dst));
    for (int t = 0; t < dst; ++t) {
        double s = (t + 0.5) / 2.0 - 0.5;
        s = s < 0.0 ? 0.0 : (s > src - 1.0 ? src - 1.0 : s);
        AxisTap& a = taps[static_cast<std::size_t>(t)];
        a.i0 = std::min(static_cast<int>(s), src - 1);
        a.i1 = std::min(a.i0 + 1, src - 1);
        a.frac = s - a.i0;
    }
    return taps;
}

}  // namespace

template <typename T>
TensorT<T> upsample_flow2x(const TensorT<T>& flow) {
    int c, sd, sh, sw;
    detail::spatial_dims(flow, c, sd, sh, sw);
    check(c == 3, "upsample_flow2x: expected a [3,D,H,W] flow");
    const int td = 2 * sd, th = 2 * sh, tw = 2 * sw;
    const auto tz = upsample_taps(sd, td);
    const auto ty = upsample_taps(sh, th);
    const auto tx = upsample_taps(sw, tw);
    const std::size_t smsp = static_cast<std::size_t>(sd) * sh * sw;
    const std::size_t tmsp = static_cast<std::size_t>(td) * th * tw;

    auto out = alloc_buffer<T>(3 * tmsp);
    const T* x = flow.data();
    for (int ci = 0; ci < 3; ++ci) {
        const T* xc = x + static_cast<std::size_t>(ci) * smsp;
        T* oc = out->data() + static_cast<std::size_t>(ci) * tmsp;
        std::size_t v = 0;
        for (int z = 0; z < td; ++z)
            for (int y = 0; y < th; ++y)
                for (int xx = 0; xx < tw; ++xx, ++v) {
                    const AxisTap &az = tz[z], &ay = ty[y], &ax = tx[xx];
                    auto at = [&](int zz, int yy, int ww) {
                        return static_cast<double>(
                            xc[(static_cast<std::size_t>(zz) * sh + yy) * sw + ww]);
                    };
                    const double c00 = at(az.i0, ay.i0, ax.i0) * (1 - ax.frac) +
                                       at(az.i0, ay.i0, ax.i1) * ax.frac;
                    const double c01 = at(az.i0, ay.i1, ax.i0) * (1 - ax.frac) +
                                       at(az.i0, ay.i1, ax.i1) * ax.frac;
                    const double c10 = at(az.i1, ay.i0, ax.i0) * (1 - ax.frac) +
                                       at(az.i1, ay.i0, ax.i1) * ax.frac;
                    const double c11 = at(az.i1, ay.i1, ax.i0) * (1 - ax.frac) +
                                       at(az.i1, ay.i1, ax.i1) * ax.frac;
                    const double c0 = c00 * (1 - ay.frac) + c01 * ay.frac;
                    const double c1 = c10 * (1 - ay.frac) + c11 * ay.frac;
                    oc[v] = static_cast<T>(2.0 * (c0 * (1 - az.frac) + c1 * az.frac));
                }
    }
    auto fn = flow.node();
    return make_node<T>(
        {3, td, th, tw}, out, {flow}, [fn, sd, sh, sw, td, th, tw](NodeT<T>& self) {
            T* df = grad_of(fn);
            if (!df) return;
            const auto tz = upsample_taps(sd, td);
            const auto ty = upsample_taps(sh, th);
            const auto tx = upsample_taps(sw, tw);
            const std::size_t smsp = static_cast<std::size_t>(sd) * sh * sw;
            const std::size_t tmsp = static_cast<std::size_t>(td) * th * tw;
            const T* g = self.grad.data();
            for (int ci = 0; ci < 3; ++ci) {
                T* dc = df + static_cast<std::size_t>(ci) * smsp;
                const T* gc = g + static_cast<std::size_t>(ci) * tmsp;
                std::size_t v = 0;
                for (int z = 0; z < td; ++z)
                    for (int y = 0; y < th; ++y)
                        for (int xx = 0; xx < tw; ++xx, ++v) {
                            const double gv = 2.0 * static_cast<double>(gc[v]);
                            if (gv == 0.0) continue;
                            const AxisTap &az = tz[z], &ay = ty[y], &ax = tx[xx];
                            const double wz[2] = {1 - az.frac, az.frac};
                            const double wy[2] = {1 - ay.frac, ay.frac};
                            const double wx[2] = {1 - ax.frac, ax.frac};
                            const int iz[2] = {az.i0, az.i1};
                            const int iy[2] = {ay.i0, ay.i1};
                            const int ix[2] = {ax.i0, ax.i1};
                            for (int a = 0; a < 2; ++a)
                                for (int b = 0; b < 2; ++b)
                                    for (int e = 0; e < 2; ++e) {
                                        dc[(static_cast<std::size_t>(iz[a]) * sh +
                                            iy[b]) *
                                               sw +
                                           ix[e]] += static_cast<T>(
                                            gv * wz[a] * wy[b] * wx[e]);
                                    }
                        }
            }
        });
}

template <typename T>
TensorT<T> compose(const TensorT<T>& phi_hat, const TensorT<T>& delta) {
    check(phi_hat.shape() == delta.shape(),
          "compose: field extents differ, " + shape_str(phi_hat.shape()) +
              " vs " + shape_str(delta.shape()));
    return add(delta, warp(phi_hat, delta));
}

Tensor conv_flow_head(const Tensor& f_fixed, const Tensor& f_moving_warped,
                      const FlowHeadParams& p) {
    Tensor x = concat0(f_fixed, f_moving_warped);
    x = leaky_relu(conv3d(x, p.k1, p.b1, 1));
    return conv3d(x, p.k2, p.b2, 1);
}

#define SACREG_INSTANTIATE_MATCH(T)                                             \
    template TensorT<T> relative_grid<T>(int);                                  \
    template TensorT<T> similarity_logits(const TensorT<T>&, const TensorT<T>&, \
                                          int);                                 \
    template TensorT<T> similarity_scores(const TensorT<T>&, const TensorT<T>&, \
                                          int);                                 \
    template TensorT<T> flow_from_scores(const TensorT<T>&, const TensorT<T>&,  \
                                         int, int, int);                        \
    template TensorT<T> warp(const TensorT<T>&, const TensorT<T>&);             \
    template TensorT<T> upsample_flow2x(const TensorT<T>&);                     \
    template TensorT<T> compose(const TensorT<T>&, const TensorT<T>&);

SACREG_INSTANTIATE_MATCH(float)
SACREG_INSTANTIATE_MATCH(double)

#undef SACREG_INSTANTIATE_MATCH

}  // namespace sacreg
