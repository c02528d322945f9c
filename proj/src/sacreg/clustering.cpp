#include "clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tensor_detail.hpp"

namespace sacreg {

using detail::alloc_buffer;
using detail::grad_of;
using detail::make_node;

ContextMode parse_context_mode(const std::string& s) {
    if (s == "spatial") return ContextMode::spatial;
    if (s == "channel") return ContextMode::channel;
    if (s == "mix") return ContextMode::mix;
    throw std::invalid_argument("unknown context mode '" + s +
                                "' (expected spatial, channel, or mix)");
}

std::string context_mode_name(ContextMode m) {
    switch (m) {
        case ContextMode::spatial: return "spatial";
        case ContextMode::channel: return "channel";
        default: return "mix";
    }
}

template <typename T>
TensorT<T> spatial_context(const TensorT<T>& f, int k, ContextMode mode) {
    int c, d, h, w;
    detail::spatial_dims(f, c, d, h, w);
    check(k % 2 == 1, "spatial_context: window size must be odd");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const int k3 = k * k * k;
    const auto nb = detail::neighbor_table(d, h, w, k, PadMode::replicate);
    const T* x = f.data();

    const int width = mode == ContextMode::spatial  ? c
                      : mode == ContextMode::channel ? k3
                                                     : c + k3;
    TensorT<T> out = TensorT<T>::leaf({static_cast<int>(msp), width});
    T* o = out.data();

    const bool want_spatial = mode != ContextMode::channel;
    const bool want_channel = mode != ContextMode::spatial;
    const int chan_off = want_spatial ? c : 0;
    for (std::size_t v = 0; v < msp; ++v) {
        const int32_t* nbr = nb.data() + v * k3;
        T* row = o + v * width;
        if (want_spatial) {
            for (int ci = 0; ci < c; ++ci) {
                const T* xc = x + static_cast<std::size_t>(ci) * msp;
                double acc = 0.0;
                for (int j = 0; j < k3; ++j) acc += xc[nbr[j]];
                row[ci] = static_cast<T>(acc / k3);
            }
        }
        if (want_channel) {
            for (int j = 0; j < k3; ++j) {
                double acc = 0.0;
                for (int ci = 0; ci < c; ++ci)
                    acc += x[static_cast<std::size_t>(ci) * msp + nbr[j]];
                row[chan_off + j] = static_cast<T>(acc / c);
            }
        }
    }
    return out;
}

namespace {

double sq_dist(const double* a, const double* b, int width) {
    double acc = 0.0;
    for (int i = 0; i < width; ++i) {
        const double dv = a[i] - b[i];
        acc += dv * dv;
    }
    return acc;
}

}  // namespace

ClusterMap kmeans(const std::vector<double>& descriptors, int m, int width,
                  int n, int max_iter, double tol, uint64_t seed) {
    check(m >= 1 && width >= 1, "kmeans: empty descriptor matrix");
    check(static_cast<std::size_t>(m) * width == descriptors.size(),
          "kmeans: descriptor size does not match m x width");
    check(n >= 1, "kmeans: cluster count must be >= 1");
    check(m >= n, "kmeans: fewer descriptors (" + std::to_string(m) +
                      ") than clusters (" + std::to_string(n) + ")");

    const double* desc = descriptors.data();
    Rng rng(seed);
    ClusterMap cm;
    cm.width = width;

    // k-means++ seeding
    std::vector<double> centroids(static_cast<std::size_t>(n) * width);
    std::vector<double> d2(m, std::numeric_limits<double>::max());
    {
        const int first = rng.below(m);
        std::copy(desc + static_cast<std::size_t>(first) * width,
                  desc + static_cast<std::size_t>(first + 1) * width,
                  centroids.begin());
    }
    for (int c = 1; c < n; ++c) {
        const double* prev = centroids.data() + static_cast<std::size_t>(c - 1) * width;
        double total = 0.0;
        for (int i = 0; i < m; ++i) {
            d2[i] = std::min(d2[i],
                             sq_dist(desc + static_cast<std::size_t>(i) * width,
                                     prev, width));
            total += d2[i];
        }
        int pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double run = 0.0;
            pick = m - 1;
            for (int i = 0; i < m; ++i) {
                run += d2[i];
                if (run >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(m);  // all descriptors identical
        }
        std::copy(desc + static_cast<std::size_t>(pick) * width,
                  desc + static_cast<std::size_t>(pick + 1) * width,
                  centroids.begin() + static_cast<std::size_t>(c) * width);
    }

    std::vector<int32_t> assign(m, 0);
    std::vector<int32_t> sizes(n, 0);
    std::vector<double> next(static_cast<std::size_t>(n) * width);

    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment step (nearest centroid, ties to the lowest index)
        double objective = 0.0;
        for (int i = 0; i < m; ++i) {
            const double* row = desc + static_cast<std::size_t>(i) * width;
            double best = std::numeric_limits<double>::max();
            int arg = 0;
            for (int c = 0; c < n; ++c) {
                const double dist =
                    sq_dist(row, centroids.data() + static_cast<std::size_t>(c) * width,
                            width);
                if (dist < best) {
                    best = dist;
                    arg = c;
                }
            }
            assign[i] = arg;
            objective += best;
        }
        cm.objective_trace.push_back(objective);

        // update step
        std::fill(next.begin(), next.end(), 0.0);
        std::fill(sizes.begin(), sizes.end(), 0);
        for (int i = 0; i < m; ++i) {
            double* dst = next.data() + static_cast<std::size_t>(assign[i]) * width;
            const double* row = desc + static_cast<std::size_t>(i) * width;
            for (int j = 0; j < width; ++j) dst[j] += row[j];
            ++sizes[assign[i]];
        }
        double shift = 0.0;
        for (int c = 0; c < n; ++c) {
            double* dst = next.data() + static_cast<std::size_t>(c) * width;
            const double* cur = centroids.data() + static_cast<std::size_t>(c) * width;
            if (sizes[c] > 0) {
                for (int j = 0; j < width; ++j) dst[j] /= sizes[c];
            } else {
                // re-seed at the descriptor farthest from this centroid
                double far_best = -1.0;
                int far_arg = 0;
                for (int i = 0; i < m; ++i) {
                    const double dist = sq_dist(
                        desc + static_cast<std::size_t>(i) * width, cur, width);
                    if (dist > far_best) {
                        far_best = dist;
                        far_arg = i;
                    }
                }
                std::copy(desc + static_cast<std::size_t>(far_arg) * width,
                          desc + static_cast<std::size_t>(far_arg + 1) * width, dst);
            }
            shift = std::max(shift, std::sqrt(sq_dist(dst, cur, width)));
        }
        centroids.swap(next);
        if (shift < tol) break;
    }

    // final assignment against the converged centroids
    std::fill(sizes.begin(), sizes.end(), 0);
    double objective = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = desc + static_cast<std::size_t>(i) * width;
        double best = std::numeric_limits<double>::max();
        int arg = 0;
        for (int c = 0; c < n; ++c) {
            const double dist = sq_dist(
                row, centroids.data() + static_cast<std::size_t>(c) * width, width);
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        assign[i] = arg;
        ++sizes[arg];
        objective += best;
    }
    cm.objective_trace.push_back(objective);

    // drop clusters that ended empty, renumbering the survivors
    std::vector<int32_t> remap(n, -1);
    int kept = 0;
    for (int c = 0; c < n; ++c) {
        if (sizes[c] > 0) remap[c] = kept++;
    }
    cm.n = kept;
    cm.assignments.resize(m);
    for (int i = 0; i < m; ++i) cm.assignments[i] = remap[assign[i]];
    cm.sizes.assign(kept, 0);
    cm.centroids.resize(static_cast<std::size_t>(kept) * width);
    for (int c = 0; c < n; ++c) {
        if (remap[c] >= 0) {
            cm.sizes[remap[c]] = sizes[c];
            std::copy(centroids.begin() + static_cast<std::size_t>(c) * width,
                      centroids.begin() + static_cast<std::size_t>(c + 1) * width,
                      cm.centroids.begin() +
                          static_cast<std::size_t>(remap[c]) * width);
        }
    }
    return cm;
}

template <typename T>
TensorT<T> cluster_centroids(const TensorT<T>& f_flat,
                             const std::vector<int32_t>& assignments, int n) {
    check(f_flat.rank() == 2, "cluster_centroids: expected [M,C]");
    const int m = f_flat.dim(0);
    const int c = f_flat.dim(1);
    check(static_cast<int>(assignments.size()) == m,
          "cluster_centroids: assignment count must equal row count");
    check(n >= 1, "cluster_centroids: cluster count must be >= 1");
    auto counts = std::make_shared<std::vector<int32_t>>(n, 0);
    for (int32_t a : assignments) {
        check(a >= 0 && a < n, "cluster_centroids: assignment out of range");
        ++(*counts)[a];
    }
    for (int i = 0; i < n; ++i) {
        check((*counts)[i] > 0, "cluster_centroids: cluster " + std::to_string(i) +
                                    " has no members");
    }

    auto out = alloc_buffer<T>(static_cast<std::size_t>(n) * c);
    {
        std::vector<double> acc(static_cast<std::size_t>(n) * c, 0.0);
        const T* x = f_flat.data();
        for (int i = 0; i < m; ++i) {
            double* dst = acc.data() + static_cast<std::size_t>(assignments[i]) * c;
            const T* row = x + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) dst[j] += row[j];
        }
        for (int g = 0; g < n; ++g) {
            for (int j = 0; j < c; ++j) {
                (*out)[static_cast<std::size_t>(g) * c + j] = static_cast<T>(
                    acc[static_cast<std::size_t>(g) * c + j] / (*counts)[g]);
            }
        }
    }
    auto fn = f_flat.node();
    return make_node<T>(
        {n, c}, out, {f_flat}, [fn, assignments, counts, c](NodeT<T>& self) {
            T* dx = grad_of(fn);
            if (!dx) return;
            const T* g = self.grad.data();
            for (std::size_t i = 0; i < assignments.size(); ++i) {
                const int32_t a = assignments[i];
                const T inv = T(1) / static_cast<T>((*counts)[a]);
                const T* src = g + static_cast<std::size_t>(a) * c;
                T* dst = dx + i * c;
                for (int j = 0; j < c; ++j) dst[j] += src[j] * inv;
            }
        });
}

template TensorT<float> spatial_context(const TensorT<float>&, int, ContextMode);
template TensorT<double> spatial_context(const TensorT<double>&, int, ContextMode);
template TensorT<float> cluster_centroids(const TensorT<float>&,
                                          const std::vector<int32_t>&, int);
template TensorT<double> cluster_centroids(const TensorT<double>&,
                                           const std::vector<int32_t>&, int);

}  // namespace sacreg
