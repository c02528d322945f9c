#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace sacreg {

namespace {

int label_at(const Volume& v, std::size_t i) {
    return static_cast<int>(std::lround(v.data[i]));
}

std::set<int> labels_present(const Volume& v) {
    std::set<int> s;
    for (float x : v.data) {
        const int l = static_cast<int>(std::lround(x));
        if (l != 0) s.insert(l);
    }
    return s;
}

// boundary voxels of one label: labeled voxels with >= 1 differently-labeled
// 6-neighbor (out-of-bounds counts as background)
std::vector<std::array<int, 3>> boundary_voxels(const Volume& v, int label) {
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < v.d; ++z) {
        for (int y = 0; y < v.h; ++y) {
            for (int x = 0; x < v.w; ++x) {
                const std::size_t i =
                    (static_cast<std::size_t>(z) * v.h + y) * v.w + x;
                if (label_at(v, i) != label) continue;
                const int nz[6] = {z - 1, z + 1, z, z, z, z};
                const int ny[6] = {y, y, y - 1, y + 1, y, y};
                const int nx[6] = {x, x, x, x, x - 1, x + 1};
                bool edge = false;
                for (int q = 0; q < 6 && !edge; ++q) {
                    if (nz[q] < 0 || nz[q] >= v.d || ny[q] < 0 || ny[q] >= v.h ||
                        nx[q] < 0 || nx[q] >= v.w) {
                        edge = true;  // background outside the grid
                    } else {
                        const std::size_t j =
                            (static_cast<std::size_t>(nz[q]) * v.h + ny[q]) * v.w +
                            nx[q];
                        if (label_at(v, j) != label) edge = true;
                    }
                }
                if (edge) out.push_back({z, y, x});
            }
        }
    }
    return out;
}

// directed nearest-surface distances in mm, one per source voxel
std::vector<double> directed_distances(
    const std::vector<std::array<int, 3>>& from,
    const std::vector<std::array<int, 3>>& to,
    const std::array<float, 3>& spacing) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::max();
        for (const auto& q : to) {
            const double dz = (p[0] - q[0]) * static_cast<double>(spacing[0]);
            const double dy = (p[1] - q[1]) * static_cast<double>(spacing[1]);
            const double dx = (p[2] - q[2]) * static_cast<double>(spacing[2]);
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

// linear-interpolation percentile over a sorted copy
double percentile(std::vector<double> xs, double pct) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const double rank = pct / 100.0 * (static_cast<double>(xs.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

}  // namespace

DiceResult dice(const Volume& a, const Volume& b,
                const std::vector<int>& label_set) {
    check(a.d == b.d && a.h == b.h && a.w == b.w, "dice: extents differ");
    std::set<int> labels;
    if (label_set.empty()) {
        labels = labels_present(a);
        const auto lb = labels_present(b);
        labels.insert(lb.begin(), lb.end());
    } else {
        labels.insert(label_set.begin(), label_set.end());
    }

    DiceResult res;
    double sum = 0.0;
    int counted = 0;
    for (int l : labels) {
        std::size_t na = 0, nb = 0, inter = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const bool ia = label_at(a, i) == l;
            const bool ib = label_at(b, i) == l;
            na += ia;
            nb += ib;
            inter += ia && ib;
        }
        if (na + nb == 0) continue;  // absent from both: skipped
        const double v = 2.0 * static_cast<double>(inter) /
                         static_cast<double>(na + nb);
        res.per_label.push_back({l, v});
        sum += v;
        ++counted;
    }
    res.mean = counted > 0 ? sum / counted : 0.0;
    return res;
}

SurfaceResult surface_distances(const Volume& a, const Volume& b, int label,
                                const std::array<float, 3>& spacing) {
    check(a.d == b.d && a.h == b.h && a.w == b.w,
          "surface_distances: extents differ");
    SurfaceResult res;
    const auto sa = boundary_voxels(a, label);
    const auto sb = boundary_voxels(b, label);
    if (sa.empty() || sb.empty()) return res;  // undefined for this label
    res.defined = true;

    const auto dab = directed_distances(sa, sb, spacing);
    const auto dba = directed_distances(sb, sa, spacing);
    double ma = 0.0, mb = 0.0;
    for (double v : dab) ma += v;
    for (double v : dba) mb += v;
    ma /= static_cast<double>(dab.size());
    mb /= static_cast<double>(dba.size());
    res.assd = 0.5 * (ma + mb);

    std::vector<double> pooled = dab;
    pooled.insert(pooled.end(), dba.begin(), dba.end());
    res.hd95 = percentile(std::move(pooled), 95.0);
    return res;
}

double jacobian_folding(const DisplacementField& flow) {
    check(flow.d >= 3 && flow.h >= 3 && flow.w >= 3,
          "jacobian_folding: extents must be >= 3 per axis");
    const std::size_t m = flow.spatial();
    const float* f = flow.vectors.data();
    const std::size_t stride[3] = {static_cast<std::size_t>(flow.h) * flow.w,
                                   static_cast<std::size_t>(flow.w), 1};
    std::size_t negative = 0, interior = 0;
    for (int z = 1; z < flow.d - 1; ++z) {
        for (int y = 1; y < flow.h - 1; ++y) {
            for (int x = 1; x < flow.w - 1; ++x) {
                const std::size_t v =
                    (static_cast<std::size_t>(z) * flow.h + y) * flow.w + x;
                // J[i][j] = d(x_i + flow_i)/d x_j, central differences
                double J[3][3];
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        const double dflow =
                            0.5 * (static_cast<double>(
                                       f[i * m + v + stride[j]]) -
                                   f[i * m + v - stride[j]]);
                        J[i][j] = (i == j ? 1.0 : 0.0) + dflow;
                    }
                }
                const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                   J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                   J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                if (det < 0.0) ++negative;
                ++interior;
            }
        }
    }
    return 100.0 * static_cast<double>(negative) / static_cast<double>(interior);
}

double endpoint_error(const DisplacementField& a, const DisplacementField& b) {
    check(a.d == b.d && a.h == b.h && a.w == b.w,
          "endpoint_error: extents differ");
    const std::size_t m = a.spatial();
    double acc = 0.0;
    for (std::size_t v = 0; v < m; ++v) {
        const double dz = static_cast<double>(a.vectors[v]) - b.vectors[v];
        const double dy = static_cast<double>(a.vectors[m + v]) - b.vectors[m + v];
        const double dx =
            static_cast<double>(a.vectors[2 * m + v]) - b.vectors[2 * m + v];
        acc += std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    return acc / static_cast<double>(m);
}

MetricReport evaluate_case(const Volume& warped_labels, const Volume& fixed_labels,
                           const DisplacementField& flow) {
    MetricReport rep;
    rep.dice = dice(warped_labels, fixed_labels);
    double hd = 0.0, as = 0.0;
    int defined = 0;
    for (const auto& [label, _] : rep.dice.per_label) {
        const SurfaceResult s =
            surface_distances(warped_labels, fixed_labels, label,
                              fixed_labels.spacing);
        if (s.defined) {
            hd += s.hd95;
            as += s.assd;
            ++defined;
        }
    }
    if (defined > 0) {
        rep.hd95 = hd / defined;
        rep.assd = as / defined;
    }
    rep.folding_pct = jacobian_folding(flow);
    return rep;
}

}  // namespace sacreg
